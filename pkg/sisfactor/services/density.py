"""Marginal likelihoods and prior terms of retained draws."""
from typing import Dict, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.special import expit, gammaln, log_ndtr, logsumexp
from scipy.stats import gamma as gamma_dist
from scipy.stats import norm, t as student_t

from ..errors import NumericalError
from ..models import Hyperparameters
from .model_core import Dataset, Draw, covariance_matrix
from .priors import expected_pi, stick_breaking
from .rng import make_rng

LOG_2PI = float(np.log(2.0 * np.pi))
# rows x draws x responses evaluated per probit block
_PROBIT_BLOCK = 4_000_000


class CommonRandomNumbers:
    """Antithetic standard normals shared by every draw's probit integral.

    Column h depends only on (seed, h), so draws with different truncation
    levels see the same leading columns.
    """

    def __init__(self, seed: int, n_mc: int = 512) -> None:
        self.seed = int(seed)
        self.half = n_mc // 2
        self._columns: Dict[int, np.ndarray] = {}

    def matrix(self, H: int) -> np.ndarray:
        cols = []
        for h in range(H):
            if h not in self._columns:
                self._columns[h] = make_rng(self.seed, 31, h).standard_normal(self.half)
            cols.append(self._columns[h])
        base = np.column_stack(cols) if cols else np.zeros((self.half, 0))
        return np.vstack([base, -base])


def gaussian_loglik_rows(y: np.ndarray, lam: np.ndarray, psi: Optional[np.ndarray],
                         sigma2: np.ndarray) -> np.ndarray:
    """log N_p(y_i; 0, Lambda Psi Lambda^T + Sigma) for every row."""
    omega = covariance_matrix(lam, psi, sigma2)
    try:
        L = cholesky(omega, lower=True)
    except LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    sol = cho_solve((L, True), y.T)
    quad = np.sum(y.T * sol, axis=0)
    p = y.shape[1]
    return -0.5 * (p * LOG_2PI + logdet + quad)


def probit_loglik_rows(y: np.ndarray, mean: np.ndarray, lam: np.ndarray, psi: Optional[np.ndarray],
                       eta: np.ndarray) -> np.ndarray:
    """Monte Carlo log pr(y_i) = log mean_s prod_j Phi{s_ij (mean_ij + lambda_j' eta_s)}."""
    n, p = y.shape
    S = eta.shape[0]
    scale = np.ones(lam.shape[1]) if psi is None else np.sqrt(np.asarray(psi, dtype=float))
    shift = (eta * scale) @ lam.T                       # S x p
    sign = 2.0 * y - 1.0
    out = np.empty(n)
    block = max(1, _PROBIT_BLOCK // max(S * p, 1))
    for start in range(0, n, block):
        stop = min(n, start + block)
        arg = sign[start:stop, None, :] * (mean[start:stop, None, :] + shift[None, :, :])
        out[start:stop] = logsumexp(np.sum(log_ndtr(arg), axis=2), axis=1) - np.log(S)
    return out


def probit_mean(draw: Draw, data: Dataset) -> np.ndarray:
    if data.w is None or draw.mu is None or draw.mu.size == 0:
        return np.zeros((data.n, data.p))
    return data.w @ draw.mu.T


def per_observation_loglik(draw: Draw, data: Dataset, crn: Optional[CommonRandomNumbers] = None) -> np.ndarray:
    if data.mode == "gaussian":
        return gaussian_loglik_rows(data.y, draw.lam, draw.psi, draw.sigma2)
    crn = crn or CommonRandomNumbers(0)
    return probit_loglik_rows(data.y, probit_mean(draw, data), draw.lam, draw.psi, crn.matrix(draw.H))


def column_t_logpdf(values: np.ndarray, a: float, b: float) -> float:
    """Joint density of k entries N(0, theta) with 1/theta ~ Ga(a, b) integrated out."""
    k = values.size
    if k == 0:
        return 0.0
    ss = float(np.sum(values ** 2))
    return float(gammaln(a + k / 2.0) - gammaln(a) + a * np.log(b) - 0.5 * k * LOG_2PI
                 - (a + k / 2.0) * np.log(b + 0.5 * ss))


def _pi(draw: Draw, hyper: Hyperparameters, pi_mode: str) -> np.ndarray:
    if pi_mode == "expected":
        return expected_pi(hyper.alpha, draw.H)
    return stick_breaking(draw.v)[1]


def log_prior(draw: Draw, data: Dataset, hyper: Hyperparameters, family: str = "sis",
              pi_mode: str = "sampled") -> float:
    """Prior term with local scales, column variances and factors integrated out."""
    total = 0.0
    lam = draw.lam
    with np.errstate(divide="ignore"):
        if family == "sis":
            pi = _pi(draw, hyper, pi_mode)
            g = np.clip(expit(data.x @ draw.beta) * hyper.resolve_c_p(data.p), 1e-300, 1.0)
            for h in range(draw.H):
                if draw.rho[h] > 0:
                    nz = lam[:, h] != 0.0
                    total += np.log1p(-pi[h])
                    total += np.sum(np.log(g[nz, h])) + np.sum(np.log1p(-g[~nz, h]))
                    total += column_t_logpdf(lam[nz, h], hyper.a_theta, hyper.b_theta)
                else:
                    total += np.log(pi[h])
            total += float(np.sum(norm.logpdf(draw.beta, 0.0, hyper.sigma_beta)))
        elif family == "mgp":
            scale = np.sqrt(draw.theta)[None, :]
            total += float(np.sum(student_t.logpdf(lam, df=hyper.mgp_nu, scale=scale)))
        elif family == "cusp":
            pi = _pi(draw, hyper, pi_mode)
            spike_sd = np.sqrt(hyper.theta_inf)
            for h in range(draw.H):
                if draw.rho[h] > 0:
                    total += np.log1p(-pi[h]) + column_t_logpdf(lam[:, h], hyper.a_theta, hyper.b_theta)
                else:
                    total += np.log(pi[h]) + float(np.sum(norm.logpdf(lam[:, h], 0.0, spike_sd)))
        else:
            raise ValueError(f"unknown family '{family}'")
    if data.mode == "gaussian":
        total += float(np.sum(gamma_dist.logpdf(1.0 / draw.sigma2, hyper.a_sigma, scale=1.0 / hyper.b_sigma)))
    return float(total)


def log_marginal_density(draw: Draw, data: Dataset, hyper: Hyperparameters, family: str = "sis",
                         pi_mode: str = "sampled", crn: Optional[CommonRandomNumbers] = None,
                         include_prior: bool = True) -> float:
    """log f(Lambda, beta, Sigma | y) up to a constant, factors integrated out."""
    value = float(np.sum(per_observation_loglik(draw, data, crn)))
    if include_prior:
        value += log_prior(draw, data, hyper, family, pi_mode)
    return value
