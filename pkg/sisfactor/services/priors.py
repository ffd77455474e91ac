"""Forward sampling of the SIS, MGP and CUSP priors and Monte Carlo checks of their properties."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.random import Generator
from scipy.special import expit

from ..errors import ArgumentError
from ..models import (
    ConcentrationCheck, Hyperparameters, PriorCheckOptions, PriorPropertyReport, ShrinkageCheck,
    SupportCheck, TailCheck, TruncationCheck, ZeroProbabilities,
)
from .rng import make_rng, sample_beta, sample_gamma

logger = logging.getLogger(__name__)

MIN_DRAWS = 10_000
# entries per vectorized chunk
_CHUNK_CELLS = 2_000_000


@dataclass
class PriorDraw:
    family: str
    lam: np.ndarray
    lambda_star: np.ndarray
    theta: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    beta: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None


# ---------- Stick breaking ----------

def stick_breaking(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Weights w_l = v_l prod_{m<l}(1 - v_m) and cumulative pi_h, with pi_H = 1."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ArgumentError("v must be a non-empty vector")
    if np.any(~((v > 0) & (v <= 1))):
        raise ArgumentError("stick fractions must lie in (0, 1]")
    if v[-1] != 1.0:
        raise ArgumentError("last stick fraction must equal 1", {"v_H": float(v[-1])})
    pi = 1.0 - np.cumprod(1.0 - v)
    w = np.diff(pi, prepend=0.0)
    return w, pi


def _stick_batch(v: np.ndarray) -> np.ndarray:
    """pi for a batch of stick vectors along the last axis."""
    return 1.0 - np.cumprod(1.0 - v, axis=-1)


def expected_pi(alpha: float, H: int) -> np.ndarray:
    h = np.arange(1, H + 1)
    return 1.0 - (alpha / (1.0 + alpha)) ** h


def _draw_sticks(alpha: float, size: Tuple[int, ...], rng: Generator) -> np.ndarray:
    v = sample_beta(1.0, alpha, rng, size=size)
    v[..., -1] = 1.0
    return v


# ---------- Forward samplers ----------

def sample_sis_prior(hyper: Hyperparameters, p: int, H: int, x: np.ndarray, rng: Generator,
                     beta: Optional[np.ndarray] = None) -> PriorDraw:
    """One draw of the structured increasing shrinkage prior.

    ``beta`` pins the shrinkage coefficients instead of drawing them.
    """
    if H < 1 or p < 1:
        raise ArgumentError("p and H must be positive", {"p": p, "H": H})
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != p:
        raise ArgumentError("x must have p rows", {"p": p, "x_rows": x.shape[0] if x.ndim else 0})
    c_p = hyper.resolve_c_p(p)
    if beta is None:
        beta = rng.normal(0.0, hyper.sigma_beta, size=(x.shape[1], H))
    phi = (rng.random((p, H)) < expit(x @ beta) * c_p).astype(float)
    v = _draw_sticks(hyper.alpha, (H,), rng)
    _, pi = stick_breaking(v)
    rho = (rng.random(H) < 1.0 - pi).astype(float)
    theta = 1.0 / sample_gamma(hyper.a_theta, hyper.b_theta, rng, size=H)
    lambda_star = rng.normal(size=(p, H)) * np.sqrt(theta)
    lam = np.where((rho[None, :] > 0) & (phi > 0), lambda_star, 0.0)
    return PriorDraw("sis", lam, lambda_star, theta, rho, phi, v, beta=beta)


def sample_mgp_prior(hyper: Hyperparameters, p: int, H: int, rng: Generator) -> PriorDraw:
    if H < 1 or p < 1:
        raise ArgumentError("p and H must be positive", {"p": p, "H": H})
    nu = hyper.mgp_nu
    omega = sample_gamma(nu / 2.0, nu / 2.0, rng, size=(p, H))
    delta = np.concatenate([
        sample_gamma(hyper.mgp_a1, 1.0, rng, size=1),
        sample_gamma(hyper.mgp_a2, 1.0, rng, size=H - 1),
    ])
    tau = np.cumprod(delta)
    lam = rng.normal(size=(p, H)) / np.sqrt(omega * tau[None, :])
    ones = np.ones(H)
    return PriorDraw("mgp", lam, lam, 1.0 / tau, ones, np.ones((p, H)), ones, tau=tau)


def sample_cusp_prior(hyper: Hyperparameters, p: int, H: int, rng: Generator) -> PriorDraw:
    if H < 1 or p < 1:
        raise ArgumentError("p and H must be positive", {"p": p, "H": H})
    v = _draw_sticks(hyper.alpha, (H,), rng)
    _, pi = stick_breaking(v)
    slab = (rng.random(H) < 1.0 - pi).astype(float)
    slab_var = 1.0 / sample_gamma(hyper.a_theta, hyper.b_theta, rng, size=H)
    theta = np.where(slab > 0, slab_var, hyper.theta_inf)
    lam = rng.normal(size=(p, H)) * np.sqrt(theta)
    return PriorDraw("cusp", lam, lam, theta, slab, np.ones((p, H)), v)


def _sis_batch(hyper: Hyperparameters, x: np.ndarray, H: int, n: int, rng: Generator) -> Dict[str, np.ndarray]:
    """n independent SIS draws at once; arrays carry a leading draw axis."""
    p, q = x.shape
    c_p = hyper.resolve_c_p(p)
    beta = rng.normal(0.0, hyper.sigma_beta, size=(n, q, H))
    g = expit(np.einsum("jq,nqh->njh", x, beta)) * c_p
    phi = rng.random((n, p, H)) < g
    v = _draw_sticks(hyper.alpha, (n, H), rng)
    pi = _stick_batch(v)
    rho = rng.random((n, H)) < 1.0 - pi
    theta = 1.0 / sample_gamma(hyper.a_theta, hyper.b_theta, rng, size=(n, H))
    lam_star = rng.normal(size=(n, p, H)) * np.sqrt(theta)[:, None, :]
    lam = np.where(rho[:, None, :] & phi, lam_star, 0.0)
    return {"g": g, "phi": phi, "pi": pi, "rho": rho, "theta": theta, "lam": lam}


def _chunks(n_draws: int, cells: int) -> List[int]:
    size = max(1, _CHUNK_CELLS // max(cells, 1))
    out = [size] * (n_draws // size)
    if n_draws % size:
        out.append(n_draws % size)
    return out


def _default_x(p: int) -> np.ndarray:
    return np.ones((p, 1))


# ---------- Increasing shrinkage ----------

def _column_variance_draws(family: str, hyper: Hyperparameters, p: int, H: int, x: np.ndarray,
                           n: int, rng: Generator) -> np.ndarray:
    """Per-draw conditional expectations of lambda_jh^2, shape (n, p, H).

    The inverse-gamma / gamma scales are integrated analytically so that only
    finite-variance quantities are averaged.
    """
    if family == "sis":
        c_p = hyper.resolve_c_p(p)
        beta = rng.normal(0.0, hyper.sigma_beta, size=(n, x.shape[1], H))
        g = expit(np.einsum("jq,nqh->njh", x, beta)) * c_p
        pi = _stick_batch(_draw_sticks(hyper.alpha, (n, H), rng))
        return hyper.theta0 * (1.0 - pi)[:, None, :] * g
    if family == "mgp":
        nu = hyper.mgp_nu
        if nu <= 2:
            raise ArgumentError("MGP column variances need nu > 2", {"nu": nu})
        delta = np.concatenate([
            sample_gamma(hyper.mgp_a1, 1.0, rng, size=(n, 1)),
            sample_gamma(hyper.mgp_a2, 1.0, rng, size=(n, H - 1)),
        ], axis=1)
        inv_tau = 1.0 / np.cumprod(delta, axis=1)
        return np.broadcast_to((nu / (nu - 2.0) * inv_tau)[:, None, :], (n, p, H))
    if family == "cusp":
        pi = _stick_batch(_draw_sticks(hyper.alpha, (n, H), rng))
        col = pi * hyper.theta_inf + (1.0 - pi) * hyper.theta0
        return np.broadcast_to(col[:, None, :], (n, p, H))
    raise ArgumentError(f"unknown prior family '{family}'")


def verify_increasing_shrinkage(family: str, hyper: Hyperparameters, n_draws: int, p: int = 10, H: int = 10,
                                x: Optional[np.ndarray] = None, seed: int = 0) -> ShrinkageCheck:
    """Monte Carlo column variances and the decreasing-variance verdicts.

    ``weakly_decreasing`` tolerates differences down to -2 MCSE; ``increasing_shrinkage``
    demands every consecutive drop to exceed 2 MCSE. The strong property compares
    row-wise extremes of neighbouring columns.
    """
    x = _default_x(p) if x is None else np.asarray(x, dtype=float)
    rng = make_rng(seed, 11)
    row_sum = np.zeros((p, H))
    col_sum = np.zeros(H)
    col_sq = np.zeros(H)
    diff_sum = np.zeros(max(H - 1, 0))
    diff_sq = np.zeros(max(H - 1, 0))
    for n in _chunks(n_draws, p * H):
        cv = _column_variance_draws(family, hyper, p, H, x, n, rng)
        row_sum += cv.sum(axis=0)
        col = cv.mean(axis=1)
        col_sum += col.sum(axis=0)
        col_sq += (col ** 2).sum(axis=0)
        d = col[:, :-1] - col[:, 1:]
        diff_sum += d.sum(axis=0)
        diff_sq += (d ** 2).sum(axis=0)
    mean = col_sum / n_draws
    se = np.sqrt(np.maximum(col_sq / n_draws - mean ** 2, 0.0) / n_draws)
    d_mean = diff_sum / n_draws
    d_se = np.sqrt(np.maximum(diff_sq / n_draws - d_mean ** 2, 0.0) / n_draws)
    rows = row_sum / n_draws
    strong = None
    if family == "sis" and np.allclose(x, x[0:1, :]):
        strong = bool(all(rows[:, h].max() < rows[:, h - 1].min() for h in range(1, H)))
    ratios = (mean[1:] / mean[:-1]).tolist() if H > 1 else []
    return ShrinkageCheck(
        family=family, n_draws=n_draws, seed=seed,
        column_variances=mean.tolist(), column_variance_se=se.tolist(),
        consecutive_ratios=ratios,
        weakly_decreasing=bool(np.all(d_mean > -2.0 * d_se)),
        increasing_shrinkage=bool(np.all(d_mean > 2.0 * d_se)),
        strong_property=strong,
        inconclusive=n_draws < MIN_DRAWS,
    )


# ---------- Truncation ----------

def truncation_bound(hyper: Hyperparameters, H: int, T: float, p: int,
                     expected_phi: Optional[np.ndarray] = None) -> float:
    """Upper bound on pr{tr(Omega_H)/tr(Omega) <= T} with column ratio b = alpha/(1+alpha)."""
    if not 0.0 < T < 1.0:
        raise ArgumentError("T must lie in (0, 1)", {"T": T})
    if hyper.a_theta <= 1.0:
        raise ArgumentError("a_theta must exceed 1 for a finite column variance", {"a_theta": hyper.a_theta})
    b = hyper.alpha / (1.0 + hyper.alpha)
    if expected_phi is None:
        # a symmetric beta prior gives E{logit^-1(x'beta)} = 1/2
        expected_phi = np.full(p, hyper.resolve_c_p(p) / 2.0)
    theta0 = hyper.b_theta / (hyper.a_theta - 1.0)
    return float((1.0 / (1.0 - T)) * (b ** H / (1.0 - b)) * theta0
                 * (hyper.a_sigma / hyper.b_sigma) * np.sum(expected_phi))


def estimate_truncation_probability(hyper: Hyperparameters, p: int, H_grid: Sequence[int], T_grid: Sequence[float],
                                    n_draws: int, rng: Generator, H_max: int = 100,
                                    x: Optional[np.ndarray] = None) -> np.ndarray:
    """Monte Carlo pr{tr(Omega_H)/tr(Omega) <= T}, approximating the infinite model by ``H_max`` columns."""
    if max(H_grid) > H_max:
        raise ArgumentError("H_grid exceeds H_max", {"H_max": H_max})
    x = _default_x(p) if x is None else np.asarray(x, dtype=float)
    psi = hyper.psi_diag(H_max)
    H_idx = np.asarray(H_grid, dtype=int)
    T = np.asarray(T_grid, dtype=float)
    hits = np.zeros((H_idx.size, T.size))
    for n in _chunks(n_draws, p * H_max):
        draw = _sis_batch(hyper, x, H_max, n, rng)
        col = np.sum(draw["lam"] ** 2, axis=1) * psi
        noise = np.sum(1.0 / sample_gamma(hyper.a_sigma, hyper.b_sigma, rng, size=(n, p)), axis=1)
        cum = np.cumsum(col, axis=1)
        ratio = (cum[:, H_idx - 1] + noise[:, None]) / (cum[:, -1] + noise)[:, None]
        hits += np.sum(ratio[:, :, None] <= T[None, None, :], axis=0)
    return hits / n_draws


# ---------- Concentration ----------

def concentration_bound(hyper: Hyperparameters, h: int, epsilon: float, c_p: Optional[float] = None,
                        p: Optional[int] = None) -> float:
    """Markov bound theta0 {alpha/(1+alpha)}^h c_p / (2 epsilon^2) on pr(|lambda_jh| > epsilon)."""
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive", {"epsilon": epsilon})
    if c_p is None:
        c_p = hyper.resolve_c_p(p or 1) if hyper.c_p is None else hyper.c_p
    b = hyper.alpha / (1.0 + hyper.alpha)
    return float(hyper.theta0 * b ** h * c_p / (2.0 * epsilon ** 2))


def empirical_exceedance(hyper: Hyperparameters, p: int, h_grid: Sequence[int], eps_grid: Sequence[float],
                         n_draws: int, rng: Generator, x: Optional[np.ndarray] = None) -> np.ndarray:
    x = _default_x(p) if x is None else np.asarray(x, dtype=float)
    H = max(h_grid)
    h_idx = np.asarray(h_grid, dtype=int) - 1
    eps = np.asarray(eps_grid, dtype=float)
    hits = np.zeros((h_idx.size, eps.size))
    total = 0
    for n in _chunks(n_draws, p * H):
        lam = np.abs(_sis_batch(hyper, x, H, n, rng)["lam"][:, :, h_idx])
        hits += np.sum(lam[..., None] > eps, axis=(0, 1))
        total += n * p
    return hits / total


# ---------- Tails and sparsity ----------

def _hill(sorted_desc: np.ndarray, k: int) -> float:
    top = sorted_desc[:k]
    return float(1.0 / np.mean(np.log(top / sorted_desc[k])))


def tail_exponent(samples: np.ndarray, fraction: float = 0.01, deep_fraction: float = 0.001,
                  stability: float = 1.3) -> TailCheck:
    """Hill estimate of the tail index of |samples| over the nonzero entries.

    A power-law tail keeps the estimate stable as the threshold moves deeper;
    a ratio above ``stability`` is reported as not power-law.
    """
    a = np.abs(np.asarray(samples, dtype=float).ravel())
    a = a[a > 0]
    n = a.size
    k = int(np.floor(fraction * n))
    k_deep = int(np.floor(deep_fraction * n))
    if n < MIN_DRAWS or k_deep < 10:
        return TailCheck(index=None, index_deep=None, n_tail=k, power_law=False, inconclusive=True)
    s = -np.sort(-a)
    index = _hill(s, k)
    index_deep = _hill(s, k_deep)
    return TailCheck(
        index=index, index_deep=index_deep, n_tail=k,
        power_law=bool(index_deep / index <= stability), inconclusive=False,
    )


def sis_nonzero_loadings(hyper: Hyperparameters, p: int, H: int, n_draws: int, rng: Generator,
                         x: Optional[np.ndarray] = None) -> np.ndarray:
    x = _default_x(p) if x is None else np.asarray(x, dtype=float)
    out = []
    for n in _chunks(n_draws, p * H):
        lam = _sis_batch(hyper, x, H, n, rng)["lam"]
        out.append(lam[lam != 0.0])
    return np.concatenate(out) if out else np.empty(0)


def support_size(lambda_h: np.ndarray, epsilon: float) -> int:
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive", {"epsilon": epsilon})
    return int(np.sum(np.abs(np.asarray(lambda_h)) > epsilon))


def mean_support(hyper: Hyperparameters, p_grid: Sequence[int], epsilon: float, n_draws: int,
                 rng: Generator, h: int = 1) -> List[float]:
    """Mean |supp_eps(lambda_h)| for each p, with c_p resolved per p."""
    out = []
    for p in p_grid:
        x = _default_x(p)
        total = 0
        for n in _chunks(n_draws, p * h):
            lam = _sis_batch(hyper, x, h, n, rng)["lam"][:, :, h - 1]
            total += int(np.sum(np.abs(lam) > epsilon))
        out.append(total / n_draws)
    return out


def zero_probabilities(hyper: Hyperparameters, p: int, H: int, n_draws: int, rng: Generator,
                       x: Optional[np.ndarray] = None) -> ZeroProbabilities:
    x = _default_x(p) if x is None else np.asarray(x, dtype=float)
    lam0 = phi0 = rho0 = 0.0
    for n in _chunks(n_draws, p * H):
        draw = _sis_batch(hyper, x, H, n, rng)
        lam0 += float(np.sum(draw["lam"] == 0.0))
        phi0 += float(np.sum(~draw["phi"]))
        rho0 += float(np.sum(~draw["rho"])) * p
    cells = float(n_draws * p * H)
    out = {"lambda_zero": lam0 / cells, "phi_zero": phi0 / cells, "rho_zero": rho0 / cells}
    return ZeroProbabilities(**out, ordered=out["lambda_zero"] >= out["phi_zero"] > 0.0)


def prior_variance_explained(hyper: Hyperparameters, p: int, H: int, n_draws: int, rng: Generator,
                             x: Optional[np.ndarray] = None) -> np.ndarray:
    """Prior draws of tr(Lambda Psi Lambda^T) / tr(Omega)."""
    x = _default_x(p) if x is None else np.asarray(x, dtype=float)
    psi = hyper.psi_diag(H)
    out = []
    for n in _chunks(n_draws, p * H):
        lam = _sis_batch(hyper, x, H, n, rng)["lam"]
        signal = np.sum(np.sum(lam ** 2, axis=1) * psi, axis=1)
        noise = np.sum(1.0 / sample_gamma(hyper.a_sigma, hyper.b_sigma, rng, size=(n, p)), axis=1)
        out.append(signal / (signal + noise))
    return np.concatenate(out)


def quantile_summary(values: np.ndarray, probs: Sequence[float] = (0.05, 0.25, 0.5, 0.75, 0.95)) -> Dict[str, float]:
    q = np.quantile(np.asarray(values, dtype=float), probs)
    return {f"q{int(round(100 * pr)):02d}": float(v) for pr, v in zip(probs, q)}


# ---------- Report ----------

def build_prior_report(hyper: Hyperparameters, options: PriorCheckOptions) -> PriorPropertyReport:
    p, H, n, seed = options.p, options.H, options.n_draws, options.seed
    logger.info("prior check: p=%d H=%d draws=%d seed=%d", p, H, n, seed)
    shrinkage = [verify_increasing_shrinkage(f, hyper, n, p=p, H=H, seed=seed) for f in options.families]

    mc = estimate_truncation_probability(
        hyper, p, options.H_grid, options.T_grid, n, make_rng(seed, 21), H_max=options.H_max,
    )
    bound = np.array([[truncation_bound(hyper, h, t, p) for t in options.T_grid] for h in options.H_grid])

    emp = empirical_exceedance(hyper, p, options.h_grid, options.epsilon_grid, n, make_rng(seed, 22))
    c_p = hyper.resolve_c_p(p)
    conc = np.array([[concentration_bound(hyper, h, e, c_p=c_p) for e in options.epsilon_grid]
                     for h in options.h_grid])

    tail = tail_exponent(sis_nonzero_loadings(hyper, p, H, n, make_rng(seed, 23)))

    support = mean_support(hyper, options.support_p_grid, options.support_epsilon, options.support_draws,
                           make_rng(seed, 24))
    per_p = np.asarray(support) / np.asarray(options.support_p_grid, dtype=float)
    sublinear = bool(np.all(np.diff(per_p) < 0)) if len(per_p) > 1 else True

    return PriorPropertyReport(
        seed=seed, p=p, H=H, c_p=c_p,
        shrinkage=shrinkage,
        truncation=TruncationCheck(
            H_grid=list(options.H_grid), T_grid=list(options.T_grid),
            monte_carlo=mc.tolist(), analytic_bound=bound.tolist(), dominated=bool(np.all(bound >= mc)),
        ),
        concentration=ConcentrationCheck(
            h_grid=list(options.h_grid), epsilon_grid=list(options.epsilon_grid),
            empirical=emp.tolist(), bound=conc.tolist(), dominated=bool(np.all(conc >= emp)),
        ),
        tail=tail,
        support=SupportCheck(p_grid=list(options.support_p_grid), epsilon=options.support_epsilon,
                             mean_support=support, sublinear=sublinear),
        zero_probabilities=zero_probabilities(hyper, p, H, n, make_rng(seed, 25)),
        variance_explained_quantiles=quantile_summary(prior_variance_explained(hyper, p, H, n, make_rng(seed, 26))),
    )
