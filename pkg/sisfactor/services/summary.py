"""Posterior summaries of a stored chain: MAP draw, LPML, networks, active factors and held-out fit."""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from ..errors import ArgumentError, EmptyChainError
from ..models import ChainConfig, Edge, Hyperparameters, SummaryOptions, SummaryReport
from .gibbs import run_chain
from .density import CommonRandomNumbers, log_marginal_density, per_observation_loglik, probit_loglik_rows, probit_mean
from .model_core import (
    ChainOutput, Dataset, correlation_from_covariance, covariance_matrix, explained_fraction, partial_correlation,
    trace_ratio,
)
from .priors import quantile_summary
from .rng import derive_seed, make_rng

__all__ = [
    "log_marginal_density", "log_densities", "select_map_draw", "loglik_matrix", "compute_lpml",
    "posterior_network", "edges_from_partial", "expected_active_factors", "heldout_loglik", "cv_heldout_loglik",
    "variance_explained_trace", "posterior_truncation_probability", "summarize_chain",
]

logger = logging.getLogger(__name__)


def _require_draws(chain: ChainOutput) -> None:
    if len(chain.draws) == 0:
        raise EmptyChainError("chain has no retained draws")


def _crn(chain: ChainOutput, data: Dataset, n_mc: int) -> Optional[CommonRandomNumbers]:
    if data.mode != "probit":
        return None
    return CommonRandomNumbers(int(chain.config.get("seed", 0)), n_mc)


def chain_config(chain: ChainOutput) -> ChainConfig:
    """The ChainConfig a stored chain was run with."""
    fields = ChainConfig.model_fields.keys()
    return ChainConfig(**{k: v for k, v in chain.config.items() if k in fields})


# ---------- MAP ----------

def log_densities(chain: ChainOutput, data: Optional[Dataset] = None, hyper: Optional[Hyperparameters] = None,
                  pi_mode: str = "sampled", n_mc: int = 512) -> np.ndarray:
    """Per-draw log marginal densities, reusing the stored values when they were computed the same way."""
    _require_draws(chain)
    stored = [d.log_density for d in chain.draws]
    same_rule = chain.config.get("pi_mode", "sampled") == pi_mode and chain.config.get("n_mc", n_mc) == n_mc
    if all(v is not None for v in stored) and (same_rule or data is None):
        return np.asarray(stored, dtype=float)
    if data is None or hyper is None:
        raise ArgumentError("draws carry no log densities; data and hyper are needed to compute them")
    crn = _crn(chain, data, n_mc)
    return np.array([log_marginal_density(d, data, hyper, chain.family, pi_mode, crn) for d in chain.draws])


def select_map_draw(chain: ChainOutput, data: Optional[Dataset] = None, hyper: Optional[Hyperparameters] = None,
                    pi_mode: str = "sampled", n_mc: int = 512) -> int:
    """Index of the retained draw with the highest log marginal density; the earliest wins ties."""
    values = log_densities(chain, data, hyper, pi_mode, n_mc)
    if np.all(np.isnan(values)):
        raise EmptyChainError("no draw has a finite log density")
    # argmax returns the first maximum
    return int(np.nanargmax(values))


# ---------- LPML ----------

def loglik_matrix(chain: ChainOutput, data: Dataset, n_mc: int = 512) -> np.ndarray:
    """S x n matrix of log f(y_i | draw t)."""
    _require_draws(chain)
    crn = _crn(chain, data, n_mc)
    return np.vstack([per_observation_loglik(d, data, crn) for d in chain.draws])


def compute_lpml(chain: ChainOutput, data: Dataset, per_observation: bool = True, n_mc: int = 512) -> float:
    """sum_i log CPO_i with log CPO_i = log S - logsumexp_t(-log f_i^(t)); divided by n when ``per_observation``."""
    ll = loglik_matrix(chain, data, n_mc)
    S, n = ll.shape
    if np.any(np.isneginf(ll)):
        rows = np.flatnonzero(np.any(np.isneginf(ll), axis=0))
        logger.warning("zero likelihood for %d observation(s), first at row %d; LPML is -inf", rows.size, rows[0])
        return float("-inf")
    log_cpo = np.log(S) - logsumexp(-ll, axis=0)
    total = float(np.sum(log_cpo))
    return total / n if per_observation else total


# ---------- Networks ----------

def edges_from_partial(partial: np.ndarray, threshold: float = 0.025,
                       names: Optional[Sequence[str]] = None) -> List[Edge]:
    p = partial.shape[0]
    names = list(names) if names is not None else [f"y{j}" for j in range(p)]
    i_idx, j_idx = np.triu_indices(p, k=1)
    keep = np.abs(partial[i_idx, j_idx]) >= threshold
    return [
        Edge(node_i=names[i], node_j=names[j], partial_correlation=float(partial[i, j]))
        for i, j in zip(i_idx[keep], j_idx[keep])
    ]


def posterior_network(chain: ChainOutput, threshold: float = 0.025,
                      names: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray, List[Edge]]:
    """Mean correlation over draws, the partial correlations of that mean and the thresholded edge list."""
    _require_draws(chain)
    total = None
    for d in chain.draws:
        corr = correlation_from_covariance(covariance_matrix(d.lam, d.psi, d.sigma2))
        total = corr if total is None else total + corr
    mean_corr = total / len(chain.draws)
    mean_corr = 0.5 * (mean_corr + mean_corr.T)
    np.fill_diagonal(mean_corr, 1.0)
    partial = partial_correlation(mean_corr)
    return mean_corr, partial, edges_from_partial(partial, threshold, names)


def expected_active_factors(chain: ChainOutput) -> float:
    _require_draws(chain)
    return float(np.mean([d.h_active for d in chain.draws]))


# ---------- Sensitivity ----------

def variance_explained_trace(chain: ChainOutput) -> np.ndarray:
    """tr(Lambda Psi Lambda^T) / tr(Omega) for every retained draw."""
    _require_draws(chain)
    return np.array([explained_fraction(d.lam, d.psi, d.sigma2) for d in chain.draws])


def posterior_truncation_probability(chain: ChainOutput, H_grid: Sequence[int],
                                     T_grid: Sequence[float]) -> Dict[str, Dict[str, float]]:
    """Share of draws with tr(Omega_H)/tr(Omega) <= T; draws with fewer than H columns count as 1."""
    _require_draws(chain)
    out: Dict[str, Dict[str, float]] = {}
    for H in H_grid:
        ratios = np.array([
            trace_ratio(d.lam, d.psi, d.sigma2, H) if H < d.H else 1.0 for d in chain.draws
        ])
        out[str(H)] = {f"{T:g}": float(np.mean(ratios <= T)) for T in T_grid}
    return out


# ---------- Held-out fit ----------

def _low_rank_factor(omega: np.ndarray) -> np.ndarray:
    """L with L L^T = (Omega - I) after clipping negative eigenvalues."""
    vals, vecs = eigh(omega - np.eye(omega.shape[0]))
    vals = np.clip(vals, 0.0, None)
    keep = vals > 0
    return vecs[:, keep] * np.sqrt(vals[keep])


def heldout_loglik(y: np.ndarray, mean: np.ndarray, omega: np.ndarray, mode: str,
                   crn: Optional[CommonRandomNumbers] = None) -> np.ndarray:
    """Per-row log-likelihood of held-out rows given a mean and a latent covariance."""
    if mode == "gaussian":
        return np.atleast_1d(multivariate_normal.logpdf(y - mean, mean=np.zeros(omega.shape[0]), cov=omega))
    L = _low_rank_factor(omega)
    crn = crn or CommonRandomNumbers(0)
    return probit_loglik_rows(y, mean, L, None, crn.matrix(L.shape[1]))


def cv_heldout_loglik(data: Dataset, hyper: Hyperparameters, config: ChainConfig, n_folds: int,
                      n_mc: int = 512, seed: Optional[int] = None) -> float:
    """Mean over folds of the per-row held-out log-likelihood under posterior-mean mu and Omega."""
    n = data.n
    if n_folds < 2 or n_folds > n:
        raise ArgumentError("n_folds must lie in [2, n]", {"n_folds": n_folds, "n": n})
    seed = config.seed if seed is None else seed
    order = make_rng(seed, 41).permutation(n)
    folds = np.array_split(order, n_folds)
    crn = CommonRandomNumbers(seed, n_mc) if data.mode == "probit" else None
    scores = []
    for k, test in enumerate(folds):
        train = np.setdiff1d(np.arange(n), test)
        if train.size == 0:
            raise ArgumentError("fold has an empty training set", {"fold": k})
        fold_cfg = config.model_copy(update={"seed": derive_seed(seed, 41, k), "record_log_density": False})
        chain = run_chain(data.subset_rows(train), hyper, fold_cfg)
        _require_draws(chain)
        omega = np.mean([covariance_matrix(d.lam, d.psi, d.sigma2) for d in chain.draws], axis=0)
        test_data = data.subset_rows(test)
        mean = np.mean([probit_mean(d, test_data) for d in chain.draws], axis=0)
        rows = heldout_loglik(test_data.y, mean, omega, data.mode, crn)
        scores.append(float(np.mean(rows)))
        logger.info("fold %d/%d: %d held-out rows, mean log-lik %.4f", k + 1, n_folds, test.size, scores[-1])
    return float(np.mean(scores))


# ---------- Report ----------

def summarize_chain(chain: ChainOutput, data: Dataset, hyper: Hyperparameters,
                    options: Optional[SummaryOptions] = None, include_timing: bool = False) -> SummaryReport:
    options = options or SummaryOptions()
    _require_draws(chain)
    dens = log_densities(chain, data, hyper, options.pi_mode, options.n_mc)
    idx = select_map_draw(chain, data, hyper, options.pi_mode, options.n_mc)
    best = chain.draws[idx]
    corr, partial, edges = posterior_network(chain, options.edge_threshold, data.y_names)
    ve = variance_explained_trace(chain)
    cv = None
    if options.cv_folds is not None:
        cv = cv_heldout_loglik(data, hyper, chain_config(chain), options.cv_folds, options.n_mc)
    logger.info("summary: %d draws, MAP draw %d (iteration %d)", len(chain.draws), idx, best.iteration)
    return SummaryReport(
        mode=chain.mode, family=chain.family, n_draws=len(chain.draws),
        map_index=idx, map_iteration=best.iteration, log_density_map=float(dens[idx]),
        lambda_map=best.lam.tolist(), beta_map=best.beta.tolist(), sigma_map=best.sigma2.tolist(),
        lpml=compute_lpml(chain, data, options.lpml_per_observation, options.n_mc),
        lpml_normalization="per_observation" if options.lpml_per_observation else "total",
        pi_mode=options.pi_mode,
        e_h_active=expected_active_factors(chain),
        posterior_mean_correlation=corr.tolist(),
        posterior_mean_partial_correlation=partial.tolist(),
        edges=edges, edge_threshold=options.edge_threshold,
        variance_explained_mean=float(np.mean(ve)),
        variance_explained_quantiles=quantile_summary(ve),
        truncation_probability=posterior_truncation_probability(
            chain, options.truncation_H_grid, options.truncation_T_grid,
        ),
        cv_heldout_loglik=cv,
        seconds_per_iteration=chain.seconds_per_iteration if include_timing else None,
    )
