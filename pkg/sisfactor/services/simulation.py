"""Synthetic scenarios, recovery metrics and the replicate harness."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.random import Generator
from scipy.optimize import brentq
from scipy.special import expit

from ..errors import ArgumentError, EmptyChainError, SisError
from ..metrics import SamplerMetrics
from ..models import (
    Aggregate, ChainConfig, Hyperparameters, MetricsReport, ReplicateMetrics, ScenarioSpec, SimFamily,
)
from .gibbs import run_chain
from .model_core import ChainOutput, Dataset, covariance_matrix
from .rng import derive_seed, make_rng
from .summary import compute_lpml, expected_active_factors

logger = logging.getLogger(__name__)

SENSITIVITY_THRESHOLDS = (0.03, 0.05, 0.1)
# |lambda| below this counts as zero for the families without exact zeros
THRESHOLDED_ZERO = 0.05


@dataclass
class ScenarioData:
    lambda0: np.ndarray                 # p x k
    y: np.ndarray                       # n x p
    x0: Optional[np.ndarray] = None     # p x 6, scenario d only


# ---------- Generators ----------

def _shifted_loadings(p: int, k: int, sigma2: float, rng: Generator) -> np.ndarray:
    """N(0, sigma2) entries pushed away from zero by sigma2 / 3."""
    raw = rng.normal(0.0, np.sqrt(sigma2), size=(p, k))
    return raw + np.where(raw >= 0.0, 1.0, -1.0) * sigma2 / 3.0


def _sort_by_variance(lam: np.ndarray) -> np.ndarray:
    order = np.argsort(-np.var(lam, axis=0), kind="stable")
    return lam[:, order]


def zero_allocation(p: int, k: int, s: float) -> np.ndarray:
    """Zeros per column growing linearly in the column index, summing to pk - round(s p k)."""
    nnz = int(round(s * p * k))
    zeros = p * k - nnz
    cap = p - 1 if nnz >= k else p
    ramp = np.arange(1, k + 1, dtype=float)
    alloc = np.minimum(np.floor(zeros * ramp / ramp.sum()).astype(int), cap)
    rest = zeros - int(alloc.sum())
    while rest > 0:
        for h in range(k - 1, -1, -1):
            if rest == 0:
                break
            if alloc[h] < cap:
                alloc[h] += 1
                rest -= 1
    return alloc


def _random_zeros(lam: np.ndarray, alloc: np.ndarray, rng: Generator) -> np.ndarray:
    out = lam.copy()
    p = lam.shape[0]
    for h, m in enumerate(alloc):
        if m:
            out[rng.choice(p, size=int(m), replace=False), h] = 0.0
    return out


def scenario_d_covariates(p: int, rng: Generator) -> np.ndarray:
    """[1, dummies of a balanced 4-level factor (first level dropped), N(0, 1), Ga(2, 1)]."""
    levels = rng.permutation(np.arange(p) % 4)
    dummies = (levels[:, None] == np.arange(1, 4)[None, :]).astype(float)
    return np.column_stack([np.ones(p), dummies, rng.normal(size=p), rng.gamma(2.0, 1.0, size=p)])


def _shift_for_mass(lin: np.ndarray, target: float) -> float:
    """Intercept c with sum_j expit(lin_j + c) = target."""
    def f(c: float) -> float:
        return float(np.sum(expit(lin + c))) - target

    lo, hi = -50.0, 50.0
    while f(lo) > 0:
        lo *= 2.0
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, lo, hi)


def _covariate_zeros(lam: np.ndarray, alloc: np.ndarray, x0: np.ndarray, rng: Generator) -> np.ndarray:
    out = lam.copy()
    p, q = x0.shape
    for h, m in enumerate(alloc):
        if m == 0:
            continue
        if m >= p:
            out[:, h] = 0.0
            continue
        beta0 = rng.normal(size=q)
        lin = x0 @ beta0
        prob = expit(lin + _shift_for_mass(lin, float(m)))
        rows = rng.choice(p, size=int(m), replace=False, p=prob / prob.sum())
        out[rows, h] = 0.0
    return out


def generate_scenario(spec: ScenarioSpec, rng: Generator) -> ScenarioData:
    p, k, n = spec.p, spec.k, spec.n
    x0 = None
    lam = _shifted_loadings(p, k, spec.sigma2_lambda, rng)
    if spec.scenario == "a":
        lam = _sort_by_variance(lam)
    elif spec.scenario == "b":
        lam = _random_zeros(lam, zero_allocation(p, k, spec.s), rng)
    elif spec.scenario == "c":
        lam = _random_zeros(_sort_by_variance(lam), zero_allocation(p, k, spec.s), rng)
    else:
        x0 = scenario_d_covariates(p, rng)
        lam = _covariate_zeros(lam, zero_allocation(p, k, spec.s), x0, rng)
    eta = rng.normal(size=(n, k))
    y = eta @ lam.T + rng.normal(size=(n, p))
    return ScenarioData(lambda0=lam, y=y, x0=x0)


# ---------- Metrics ----------

def covariance_mse(chain: ChainOutput, lambda0: np.ndarray) -> float:
    """Mean over draws of sum_{j<=l} (omega_jl - omega0_jl)^2 / {p(p+1)/2}."""
    if len(chain.draws) == 0:
        raise EmptyChainError("chain has no retained draws")
    p = lambda0.shape[0]
    omega0 = lambda0 @ lambda0.T + np.eye(p)
    iu = np.triu_indices(p)
    errs = [
        float(np.sum((covariance_matrix(d.lam, d.psi, d.sigma2) - omega0)[iu] ** 2)) / (p * (p + 1) / 2.0)
        for d in chain.draws
    ]
    return float(np.mean(errs))


def _zero_pattern(lam: np.ndarray, threshold: float) -> np.ndarray:
    zeros = lam == 0.0 if threshold <= 0 else np.abs(lam) < threshold
    order = np.argsort(np.sum(zeros, axis=0), kind="stable")
    return zeros[:, order]


def _pad(zeros: np.ndarray, width: int) -> np.ndarray:
    extra = width - zeros.shape[1]
    if extra <= 0:
        return zeros
    return np.column_stack([zeros, np.ones((zeros.shape[0], extra), dtype=bool)])


def mean_classification_error(chain: ChainOutput, lambda0: np.ndarray, threshold: float = 0.0) -> float:
    """Zero/nonzero mismatches per p k cell after aligning columns by zero count, averaged over draws."""
    if len(chain.draws) == 0:
        raise EmptyChainError("chain has no retained draws")
    p, k = lambda0.shape
    truth = _zero_pattern(lambda0, 0.0)
    errs = []
    for d in chain.draws:
        est = _zero_pattern(d.lam[:, d.rho > 0], threshold)
        width = max(k, est.shape[1])
        errs.append(float(np.sum(_pad(truth, width) != _pad(est, width))) / (p * k))
    return float(np.mean(errs))


def mce_threshold(family: str) -> float:
    return 0.0 if family in ("sis", "sis_mc") else THRESHOLDED_ZERO


# ---------- Harness ----------

def _replicate(args: Tuple[ScenarioSpec, str, Hyperparameters, ChainConfig, int, bool]) -> ReplicateMetrics:
    spec, family, hyper, config, r, include_timing = args
    return run_replicate(spec, family, hyper, config, r, include_timing=include_timing)


def run_replicate(spec: ScenarioSpec, family: str, hyper: Hyperparameters, config: ChainConfig, r: int,
                  metrics: Optional[SamplerMetrics] = None, include_timing: bool = False) -> ReplicateMetrics:
    """generate -> fit -> score for replicate ``r``; failures come back as ``ok=False`` rows."""
    try:
        sim = generate_scenario(spec, make_rng(spec.seed, r))
        x = sim.x0 if family == "sis_mc" else np.ones((spec.p, 1))
        data = Dataset(y=sim.y, x=x, mode="gaussian")
        cfg = config.model_copy(update={
            "seed": derive_seed(spec.seed, r, 1), "mode": "gaussian",
            "family": "sis" if family == "sis_mc" else family,
        })
        chain = run_chain(data, hyper, cfg, metrics)
        thr = mce_threshold(family)
        sensitivity: Dict[str, float] = {}
        if thr > 0:
            sensitivity = {f"{t:g}": mean_classification_error(chain, sim.lambda0, t) for t in SENSITIVITY_THRESHOLDS}
        return ReplicateMetrics(
            family=family, replicate=r,
            lpml=compute_lpml(chain, data),
            covariance_mse=covariance_mse(chain, sim.lambda0),
            mce=mean_classification_error(chain, sim.lambda0, thr),
            mce_sensitivity=sensitivity,
            e_h_active=expected_active_factors(chain),
            seconds_per_iteration=chain.seconds_per_iteration if include_timing else None,
        )
    except (SisError, ValueError, np.linalg.LinAlgError) as exc:
        return ReplicateMetrics(family=family, replicate=r, ok=False, error=f"{type(exc).__name__}: {exc}")


def aggregate(values: List[float]) -> Aggregate:
    if not values:
        return Aggregate(median=None, iqr=None)
    q25, q50, q75 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return Aggregate(median=float(q50), iqr=float(q75 - q25))


def run_replicates(spec: ScenarioSpec, family: SimFamily, hyper: Hyperparameters, config: ChainConfig,
                   threads: int = 1, metrics: Optional[SamplerMetrics] = None,
                   include_timing: bool = False) -> MetricsReport:
    """Independent replicates of one scenario and family, serially or on a process pool."""
    if family == "sis_mc" and spec.scenario != "d":
        raise ArgumentError("the meta-covariate SIS fit needs scenario d", {"scenario": spec.scenario})
    R = spec.n_replicates
    logger.info("scenario %s (p=%d, k=%d, s=%g): %d replicates of %s on %d worker(s)",
                spec.scenario, spec.p, spec.k, spec.s, R, family, threads)
    if threads > 1 and R > 1:
        jobs = [(spec, family, hyper, config, r, include_timing) for r in range(R)]
        with ProcessPoolExecutor(max_workers=min(threads, R)) as pool:
            rows = list(pool.map(_replicate, jobs))
    else:
        rows = [run_replicate(spec, family, hyper, config, r, metrics, include_timing) for r in range(R)]

    ok = [row for row in rows if row.ok]
    for row in rows:
        if not row.ok:
            logger.warning("replicate %d of %s failed: %s", row.replicate, family, row.error)
            if metrics is not None:
                metrics.record_failure(family)
    if len(ok) < R:
        logger.warning("%d of %d replicates failed; aggregates use the %d successes", R - len(ok), R, len(ok))

    keys = ["lpml", "covariance_mse", "mce", "e_h_active"]
    if include_timing:
        keys.append("seconds_per_iteration")
    aggregates = {key: aggregate([getattr(row, key) for row in ok]) for key in keys}
    if mce_threshold(family) > 0:
        for t in SENSITIVITY_THRESHOLDS:
            aggregates[f"mce@{t:g}"] = aggregate([row.mce_sensitivity[f"{t:g}"] for row in ok])
    return MetricsReport(
        family=family, scenario=spec, n_succeeded=len(ok), n_failed=R - len(ok),
        lpml_normalization="per_observation", mce_threshold=mce_threshold(family),
        replicates=rows, aggregates=aggregates,
    )
