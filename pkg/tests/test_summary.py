# tests/test_summary.py
import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal, norm

from sisfactor.errors import ArgumentError, EmptyChainError
from sisfactor.models import Hyperparameters, SummaryOptions
from sisfactor.services.gibbs import run_chain
from sisfactor.services.model_core import Dataset
from sisfactor.services.rng import make_rng
from sisfactor.services.summary import (
    chain_config, compute_lpml, cv_heldout_loglik, edges_from_partial, expected_active_factors, heldout_loglik,
    log_densities, loglik_matrix, posterior_network, posterior_truncation_probability, select_map_draw,
    summarize_chain, variance_explained_trace,
)


def two_column_data() -> Dataset:
    y = np.array([[0.5, -1.0], [1.5, 0.2], [-0.3, 0.4]])
    return Dataset(y=y, x=np.ones((2, 1)))

# ---------- Unit ----------

def test_map_draw_takes_the_earliest_tie(make_draw, make_chain):
    chain = make_chain([make_draw([[1.0]], log_density=v) for v in (1.0, 3.0, 3.0, 2.0)])
    assert select_map_draw(chain) == 1


def test_map_draw_ignores_nan(make_draw, make_chain):
    chain = make_chain([make_draw([[1.0]], log_density=v) for v in (np.nan, -4.0, np.nan)])
    assert select_map_draw(chain) == 1


def test_map_draw_all_nan(make_draw, make_chain):
    chain = make_chain([make_draw([[1.0]], log_density=np.nan)])
    with pytest.raises(EmptyChainError):
        select_map_draw(chain)


def test_empty_chain_is_rejected(make_chain):
    chain = make_chain([])
    with pytest.raises(EmptyChainError):
        select_map_draw(chain)
    with pytest.raises(EmptyChainError):
        expected_active_factors(chain)


def test_log_densities_need_data_when_missing(make_draw, make_chain):
    chain = make_chain([make_draw([[1.0]])])
    with pytest.raises(ArgumentError):
        log_densities(chain)


def test_lpml_single_draw_is_the_mean_loglik(make_draw, make_chain):
    data = two_column_data()
    draw = make_draw([[1.0], [0.5]], sigma2=[1.0, 2.0])
    omega = np.array([[2.0, 0.5], [0.5, 2.25]])
    expected = multivariate_normal.logpdf(data.y, mean=np.zeros(2), cov=omega)
    chain = make_chain([draw])
    assert np.allclose(loglik_matrix(chain, data)[0], expected)
    assert compute_lpml(chain, data) == pytest.approx(np.mean(expected))
    assert compute_lpml(chain, data, per_observation=False) == pytest.approx(np.sum(expected))


def test_lpml_of_standard_normal_rows(make_draw, make_chain):
    # Lambda = 0, Sigma = I: LPML/n tends to E log N(y; 0, 1) = -(1 + log 2 pi)/2
    y = make_rng(14).standard_normal((100, 1))
    data = Dataset(y=y, x=np.ones((1, 1)))
    chain = make_chain([make_draw(np.zeros((1, 1))), make_draw(np.zeros((1, 1)))])
    lpml = compute_lpml(chain, data)
    assert lpml == pytest.approx(np.mean(norm.logpdf(y[:, 0])))
    assert lpml == pytest.approx(-0.5 * (1.0 + np.log(2.0 * np.pi)), abs=0.25)


def test_lpml_is_a_harmonic_mean(make_draw, make_chain):
    data = two_column_data()
    chain = make_chain([make_draw([[1.0], [0.5]]), make_draw([[0.0], [2.0]], sigma2=[0.5, 1.0])])
    ll = loglik_matrix(chain, data)
    cpo = 1.0 / np.mean(np.exp(-ll), axis=0)
    assert compute_lpml(chain, data, per_observation=False) == pytest.approx(np.sum(np.log(cpo)))
    assert np.sum(np.log(2.0) - logsumexp(-ll, axis=0)) == pytest.approx(np.sum(np.log(cpo)))


def test_edges_include_the_threshold():
    partial = np.array([[1.0, 0.025, 0.01], [0.025, 1.0, -0.5], [0.01, -0.5, 1.0]])
    edges = edges_from_partial(partial, 0.025, ["a", "b", "c"])
    assert [(e.node_i, e.node_j) for e in edges] == [("a", "b"), ("b", "c")]
    assert edges[1].partial_correlation == -0.5


def test_edges_default_names():
    edges = edges_from_partial(np.array([[1.0, 0.3], [0.3, 1.0]]))
    assert (edges[0].node_i, edges[0].node_j) == ("y0", "y1")


def test_network_for_one_shared_factor(make_draw, make_chain):
    chain = make_chain([make_draw([[1.0], [1.0]])])
    corr, partial, edges = posterior_network(chain)
    assert corr[0, 1] == pytest.approx(0.5)
    assert partial[0, 1] == pytest.approx(0.5)
    assert len(edges) == 1


def test_expected_active_factors(make_draw, make_chain):
    chain = make_chain([make_draw(np.ones((2, 3)), rho=r) for r in ([1, 1, 0], [1, 0, 0], [1, 1, 1])])
    assert expected_active_factors(chain) == pytest.approx(2.0)


def test_variance_explained(make_draw, make_chain):
    chain = make_chain([make_draw([[1.0], [1.0]])])
    assert variance_explained_trace(chain) == pytest.approx([0.5])


def test_truncation_probability_counts_short_draws_as_complete(make_draw, make_chain):
    lam = np.array([[2.0, 1.0], [0.0, 1.0]])
    chain = make_chain([make_draw(lam)])
    out = posterior_truncation_probability(chain, [1, 5], [0.5, 0.8])
    # ratio at H=1 is 6/8
    assert out["1"] == {"0.5": 0.0, "0.8": 1.0}
    assert out["5"] == {"0.5": 0.0, "0.8": 0.0}


def test_heldout_gaussian_matches_scipy():
    y = np.array([[0.1, 0.2], [1.0, -1.0]])
    omega = np.array([[1.5, 0.3], [0.3, 1.2]])
    got = heldout_loglik(y, np.zeros((2, 2)), omega, "gaussian")
    assert np.allclose(got, multivariate_normal.logpdf(y, mean=np.zeros(2), cov=omega))


def test_heldout_probit_without_factors_is_exact():
    # Omega = I leaves independent coordinates: log pr(y=1) = log 1/2 each
    y = np.array([[1.0, 0.0, 1.0]])
    got = heldout_loglik(y, np.zeros((1, 3)), np.eye(3), "probit")
    assert got[0] == pytest.approx(3.0 * np.log(0.5))

# ---------- Integration ----------

def test_cv_requires_a_valid_fold_count(gaussian_data, short_config):
    with pytest.raises(ArgumentError):
        cv_heldout_loglik(gaussian_data, Hyperparameters(), short_config(), 1)
    with pytest.raises(ArgumentError):
        cv_heldout_loglik(gaussian_data, Hyperparameters(), short_config(), gaussian_data.n + 1)


def test_cv_is_finite_and_reproducible(gaussian_data, short_config):
    cfg = short_config(n_iterations=30, burn_in=10, thin=5)
    a = cv_heldout_loglik(gaussian_data, Hyperparameters(), cfg, 2)
    b = cv_heldout_loglik(gaussian_data, Hyperparameters(), cfg, 2)
    assert np.isfinite(a)
    assert a == b


def test_recomputed_densities_follow_the_rule(gaussian_data, short_config):
    hyper = Hyperparameters()
    chain = run_chain(gaussian_data, hyper, short_config())
    stored = log_densities(chain, gaussian_data, hyper)
    assert np.array_equal(stored, [d.log_density for d in chain.draws])
    expected = log_densities(chain, gaussian_data, hyper, pi_mode="expected")
    assert expected.shape == stored.shape
    assert np.all(np.isfinite(expected))


def test_summary_report(gaussian_data, short_config):
    hyper = Hyperparameters()
    chain = run_chain(gaussian_data, hyper, short_config())
    report = summarize_chain(chain, gaussian_data, hyper, SummaryOptions(truncation_H_grid=[1, 2]))
    assert report.n_draws == 10
    assert 0 <= report.map_index < 10
    assert report.map_iteration == chain.draws[report.map_index].iteration
    assert np.asarray(report.lambda_map).shape[0] == gaussian_data.p
    assert np.asarray(report.posterior_mean_correlation).shape == (5, 5)
    assert report.lpml_normalization == "per_observation"
    assert report.cv_heldout_loglik is None
    assert report.seconds_per_iteration is None
    assert set(report.truncation_probability) == {"1", "2"}
    assert 0.0 < report.variance_explained_mean < 1.0


def test_summary_with_cv_and_timing(gaussian_data, short_config):
    hyper = Hyperparameters()
    chain = run_chain(gaussian_data, hyper, short_config(n_iterations=30, burn_in=10, thin=5))
    report = summarize_chain(chain, gaussian_data, hyper, SummaryOptions(cv_folds=2), include_timing=True)
    assert np.isfinite(report.cv_heldout_loglik)
    assert report.seconds_per_iteration > 0
    assert chain_config(chain).n_iterations == 30


def test_probit_summary(probit_data, short_config):
    hyper = Hyperparameters.for_application()
    chain = run_chain(probit_data, hyper, short_config(mode="probit"), n_mc=64)
    report = summarize_chain(chain, probit_data, hyper, SummaryOptions(n_mc=64))
    assert report.mode == "probit"
    assert np.isfinite(report.lpml)
    assert report.lpml < 0
