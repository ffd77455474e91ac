# tests/test_gibbs.py
import os

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import gamma, kstest

from sisfactor.errors import ArgumentError, NonFiniteStateError
from sisfactor.metrics import SamplerMetrics
from sisfactor.models import ChainConfig, Hyperparameters
from sisfactor.services.gibbs import (
    SisSampler, _check_finite, adapt_truncation, adaptation_probability, run_chain, sample_loading_rows,
    sampler_class, update_factors, update_noise_variances, update_sticks,
)
from sisfactor.services.model_core import Dataset, ModelState, covariance_matrix
from sisfactor.services.priors import stick_breaking
from sisfactor.services.rng import make_rng

from conftest import toy_responses

# adaptation fires on every iteration
ALWAYS_ADAPT = Hyperparameters(alpha0=-1e-12, alpha1=-1e-12)


def state_with(rho, p: int = 4, n: int = 6, q: int = 1) -> ModelState:
    rho = np.asarray(rho, dtype=float)
    H = rho.size
    rng = make_rng(0, 77)
    return ModelState(
        lambda_star=rng.normal(size=(p, H)), phi=np.ones((p, H)), rho=rho, theta=np.ones(H),
        v=np.append(np.full(H - 1, 0.3), 1.0), beta=np.zeros((q, H)), sigma2=np.ones(p),
        eta=rng.normal(size=(n, H)), psi=np.ones(H),
    )

# ---------- Unit ----------

def test_adaptation_probability_decays():
    hyper = Hyperparameters()
    assert adaptation_probability(hyper, 0) == pytest.approx(np.exp(-1.0))
    assert adaptation_probability(hyper, 10000) < adaptation_probability(hyper, 10)


def test_adapt_shrinks_to_active_plus_one():
    s = state_with([1, 0, 1, 0])
    kept = s.lambda_star[:, [0, 2]].copy()
    direction = adapt_truncation(s, 1, ALWAYS_ADAPT, np.ones((4, 1)), 0.5, make_rng(1))
    assert direction == "shrink"
    assert s.H == 3
    assert np.array_equal(s.rho, [1.0, 1.0, 0.0])
    assert np.array_equal(s.lambda_star[:, :2], kept)
    assert s.v[-1] == 1.0
    assert s.eta.shape == (6, 3) and s.beta.shape == (1, 3)


def test_adapt_grows_when_nearly_all_columns_are_active():
    s = state_with([1, 1, 0])
    direction = adapt_truncation(s, 1, ALWAYS_ADAPT, np.ones((4, 1)), 0.5, make_rng(2))
    assert direction == "grow"
    assert s.H == 4
    assert s.rho[-1] == 0.0
    assert s.v[-1] == 1.0 and 0.0 < s.v[-2] <= 1.0
    assert np.array_equal(s.alloc, [3, 3, 3, 3])


def test_adapt_can_skip():
    s = state_with([1, 0])
    late = Hyperparameters(alpha0=-50.0)
    assert adapt_truncation(s, 1, late, np.ones((4, 1)), 0.5, make_rng(3)) is None
    assert s.H == 2


def test_sticks_from_allocations():
    v = update_sticks(np.array([3, 3, 0, 3]), 5.0, make_rng(4))
    assert v.shape == (4,)
    assert v[-1] == 1.0
    assert np.all((v > 0) & (v <= 1))


def test_loading_rows_follow_a_sharp_likelihood():
    B = np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]])
    gram = 1e8 * np.eye(2)
    cross = gram @ B.T
    draws = sample_loading_rows(np.ones((3, 2)), gram, cross, np.ones(3), make_rng(5))
    assert np.allclose(draws, B, atol=1e-2)


def test_masked_loading_cells_fall_back_to_the_prior():
    gram = 1e8 * np.eye(2)
    cross = gram @ np.full((1, 2), 5.0).T
    mask = np.array([[1.0, 0.0]])
    prior_prec = np.full((1, 2), 1e8)     # prior pins masked cells near zero
    draws = sample_loading_rows(prior_prec, gram, cross, np.ones(1), make_rng(6), mask=mask)
    assert abs(draws[0, 1]) < 1e-2
    assert draws[0, 0] == pytest.approx(2.5, abs=1e-2)


def single_factor_state(p: int, n: int, loading: float) -> ModelState:
    return ModelState(
        lambda_star=np.full((p, 1), loading), phi=np.ones((p, 1)), rho=np.ones(1), theta=np.ones(1),
        v=np.ones(1), beta=np.zeros((1, 1)), sigma2=np.ones(p), eta=np.zeros((n, 1)), psi=np.ones(1),
    )


def test_factor_posterior_for_one_loading():
    # p=1, lambda=1, sigma2=1, y=2: eta ~ N(1, 1/2), one independent draw per row
    s = single_factor_state(p=1, n=20000, loading=1.0)
    eta = update_factors(s, np.full((20000, 1), 2.0), make_rng(12))
    assert eta.shape == (20000, 1)
    assert np.mean(eta) == pytest.approx(1.0, abs=0.02)
    assert np.var(eta) == pytest.approx(0.5, abs=0.02)


def test_noise_precision_posterior_with_zero_residuals():
    # n=10 rows, a_sigma=1, b_sigma=0.3: 1/sigma2 ~ Ga(1 + 10/2, 0.3) for every column
    p = 20000
    s = single_factor_state(p=p, n=10, loading=0.0)
    hyper = Hyperparameters(a_sigma=1.0, b_sigma=0.3)
    prec = 1.0 / update_noise_variances(s, np.zeros((10, p)), hyper, make_rng(13))
    assert np.mean(prec) == pytest.approx(6.0 / 0.3, abs=0.3)
    assert kstest(prec, gamma(6.0, scale=1.0 / 0.3).cdf).pvalue > 1e-3


def test_non_finite_state_names_the_block():
    with pytest.raises(NonFiniteStateError) as exc:
        _check_finite(12, "sigma2", np.array([1.0, np.nan]))
    assert exc.value.details == {"iteration": 12, "block": "sigma2"}


def test_sampler_lookup():
    assert sampler_class("sis") is SisSampler
    assert sampler_class("mgp").family == "mgp"
    assert sampler_class("cusp").family == "cusp"
    with pytest.raises(ArgumentError):
        sampler_class("horseshoe")


def test_mode_mismatch_is_rejected(gaussian_data):
    cfg = ChainConfig(n_iterations=10, burn_in=0, thin=1, mode="probit")
    with pytest.raises(ArgumentError):
        SisSampler(gaussian_data, Hyperparameters(), cfg, make_rng(0))

# ---------- Chains ----------

@pytest.mark.parametrize("family", ["sis", "mgp", "cusp"])
def test_gaussian_chain_shapes(gaussian_data, short_config, family):
    cfg = short_config(family)
    chain = run_chain(gaussian_data, Hyperparameters(), cfg)
    assert len(chain) == cfg.n_retained == 10
    assert chain.H_trace.shape == (60,) and chain.h_active_trace.shape == (60,)
    assert chain.log_density_trace.shape == (10,)
    for d in chain.draws:
        assert d.lam.shape == (gaussian_data.p, d.H)
        assert d.h_active == int(np.sum(d.rho))
        assert np.isfinite(d.log_density)
        assert np.all(d.sigma2 > 0)
    assert [d.iteration for d in chain.draws] == list(range(24, 61, 4))


def test_sis_draws_have_exact_zeros(gaussian_data, short_config):
    chain = run_chain(gaussian_data, Hyperparameters(), short_config())
    for d in chain.draws:
        off = (d.rho[None, :] == 0) | (d.phi == 0)
        assert np.all(d.lam[off] == 0.0)
        assert d.beta.shape == (1, d.H)


@pytest.mark.parametrize("family", ["mgp", "cusp"])
def test_baseline_draws_carry_no_shrinkage_coefficients(gaussian_data, short_config, family):
    chain = run_chain(gaussian_data, Hyperparameters(), short_config(family))
    assert all(d.beta.shape == (1, 0) for d in chain.draws)


def test_chain_is_reproducible(gaussian_data, short_config):
    a = run_chain(gaussian_data, Hyperparameters(), short_config(seed=11))
    b = run_chain(gaussian_data, Hyperparameters(), short_config(seed=11))
    c = run_chain(gaussian_data, Hyperparameters(), short_config(seed=12))
    assert np.array_equal(a.H_trace, b.H_trace)
    assert all(np.array_equal(x.lam, y.lam) for x, y in zip(a.draws, b.draws))
    assert not all(np.array_equal(x.lam, y.lam) for x, y in zip(a.draws, c.draws))


def test_chain_config_is_recorded(gaussian_data, short_config):
    chain = run_chain(gaussian_data, Hyperparameters(), short_config(), pi_mode="expected", n_mc=64)
    assert chain.config["pi_mode"] == "expected"
    assert chain.config["n_mc"] == 64
    assert chain.config["seed"] == 7
    assert Hyperparameters(**chain.hyper).model_dump() == Hyperparameters().model_dump()


def test_adaptation_changes_truncation(gaussian_data, short_config):
    chain = run_chain(gaussian_data, ALWAYS_ADAPT, short_config())
    assert chain.adaptation_events == 60
    assert len(set(chain.H_trace.tolist())) > 1


def test_no_adaptation_keeps_truncation(gaussian_data, short_config):
    chain = run_chain(gaussian_data, Hyperparameters(), short_config(adapt=False))
    assert chain.adaptation_events == 0
    assert set(chain.H_trace.tolist()) == {Hyperparameters().resolve_H_init(gaussian_data.p)}


def test_metrics_count_sweeps(gaussian_data, short_config):
    metrics = SamplerMetrics()
    run_chain(gaussian_data, ALWAYS_ADAPT, short_config(), metrics)
    total = metrics.registry.get_sample_value("sis_gibbs_iterations_total", {"family": "sis", "mode": "gaussian"})
    assert total == 60.0
    grows = metrics.registry.get_sample_value("sis_adaptation_events_total", {"family": "sis", "direction": "grow"})
    shrinks = metrics.registry.get_sample_value("sis_adaptation_events_total", {"family": "sis", "direction": "shrink"})
    assert (grows or 0.0) + (shrinks or 0.0) == 60.0


@pytest.mark.parametrize("family", ["sis", "mgp", "cusp"])
def test_probit_chain_updates_means(probit_data, short_config, family):
    chain = run_chain(probit_data, Hyperparameters.for_application(), short_config(family, "probit"), n_mc=64)
    assert len(chain) == 10
    for d in chain.draws:
        assert d.mu.shape == (probit_data.p, probit_data.c)
        assert d.b.shape == (probit_data.c, probit_data.q)
        assert np.all(d.sigma2 == 1.0)
        assert np.isfinite(d.log_density)


def test_probit_without_environmental_covariates(short_config):
    latent = toy_responses(n=30, p=4, seed=3)
    data = Dataset(y=(latent > 0).astype(float), x=np.ones((4, 1)), mode="probit")
    chain = run_chain(data, Hyperparameters.for_application(), short_config(mode="probit"), n_mc=32)
    assert all(d.mu.shape == (4, 0) for d in chain.draws)

# ---------- Slow ----------

@pytest.mark.slow
@pytest.mark.skipif(os.getenv("SIS_RUN_SLOW") != "1", reason="set SIS_RUN_SLOW=1")
@pytest.mark.parametrize("family", ["sis", "mgp", "cusp"])
def test_recovers_a_two_factor_covariance(family):
    rng = make_rng(2024, 1)
    lam0 = np.column_stack([np.full(8, 1.5), np.tile([1.0, -1.0], 4)])
    y = rng.normal(size=(400, 2)) @ lam0.T + rng.normal(size=(400, 8))
    data = Dataset(y=y, x=np.ones((8, 1)))
    cfg = ChainConfig(n_iterations=3000, burn_in=1500, thin=5, family=family, seed=3)
    chain = run_chain(data, Hyperparameters(), cfg)
    omega0 = lam0 @ lam0.T + np.eye(8)
    omega = np.mean([covariance_matrix(d.lam, d.psi, d.sigma2) for d in chain.draws], axis=0)
    assert np.max(np.abs(omega - omega0)) < 1.0
    assert np.mean([d.h_active for d in chain.draws]) >= 2


def _prior_state(hyper: Hyperparameters, x: np.ndarray, n: int, H: int, c_p: float, rng) -> ModelState:
    p, q = x.shape
    theta = 1.0 / rng.gamma(hyper.a_theta, 1.0 / hyper.b_theta, size=H)
    v = np.append(rng.beta(1.0, hyper.alpha, size=H - 1), 1.0)
    w, _ = stick_breaking(v)
    alloc = rng.choice(H, size=H, p=w)
    beta = rng.normal(0.0, hyper.sigma_beta, size=(q, H))
    phi = (rng.random((p, H)) < expit(x @ beta) * c_p).astype(float)
    return ModelState(
        lambda_star=rng.normal(size=(p, H)) * np.sqrt(theta), phi=phi,
        rho=(alloc > np.arange(H)).astype(float), theta=theta, v=v, beta=beta,
        sigma2=1.0 / rng.gamma(hyper.a_sigma, 1.0 / hyper.b_sigma, size=p),
        eta=rng.normal(size=(n, H)), psi=np.ones(H), alloc=alloc,
    )


def _responses(s: ModelState, rng) -> np.ndarray:
    lam = s.lambda_star * np.sqrt(s.rho)[None, :] * np.sqrt(s.phi)
    return s.eta @ lam.T + rng.normal(size=(s.eta.shape[0], s.p)) * np.sqrt(s.sigma2)


def _statistics(s: ModelState) -> np.ndarray:
    # bounded or finite-variance functionals; loadings and noise variances have heavy prior tails
    lam = s.lambda_star[0, 0] * np.sqrt(s.rho[0] * s.phi[0, 0])
    return np.array([np.tanh(lam) ** 2, s.h_active, 1.0 / s.sigma2[0], s.beta[0, 0], s.phi[0, 0]])


def _batch_se(values: np.ndarray, n_batches: int = 50) -> np.ndarray:
    batches = np.array_split(values, n_batches)
    means = np.array([b.mean(axis=0) for b in batches])
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


@pytest.mark.slow
@pytest.mark.skipif(os.getenv("SIS_RUN_SLOW") != "1", reason="set SIS_RUN_SLOW=1")
def test_joint_distribution_matches_forward_simulation():
    n, H, draws = 5, 3, 20000
    hyper = Hyperparameters()
    rng = make_rng(31, 5)
    x = np.column_stack([np.ones(4), rng.normal(size=4)])
    data = Dataset(y=rng.normal(size=(n, 4)), x=x)
    sampler = SisSampler(data, hyper, ChainConfig(n_iterations=10, burn_in=0, thin=1, adapt=False), rng)

    forward = np.array([_statistics(_prior_state(hyper, x, n, H, sampler.c_p, rng)) for _ in range(draws)])

    sampler.state = _prior_state(hyper, x, n, H, sampler.c_p, rng)
    y = _responses(sampler.state, rng)
    successive = np.empty_like(forward)
    for t in range(draws):
        sampler.core_sweep(t + 1, y)
        y = _responses(sampler.state, rng)
        successive[t] = _statistics(sampler.state)

    se = np.sqrt(forward.std(axis=0, ddof=1) ** 2 / draws + _batch_se(successive) ** 2)
    z = np.abs(forward.mean(axis=0) - successive.mean(axis=0)) / se
    assert np.sum(z < 3.0) >= 4, z
