"""Adaptive Gibbs sampler for the SIS factor model (Gaussian and probit data)."""
import logging
import time
from typing import Dict, List, Optional, Tuple, Type

import numpy as np
from numpy.random import Generator
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.special import expit

from ..errors import ArgumentError, NonFiniteStateError, NumericalError
from ..metrics import SamplerMetrics
from ..models import ChainConfig, Hyperparameters
from .density import CommonRandomNumbers, log_marginal_density
from .model_core import ChainOutput, Dataset, Draw, ModelState, effective_loadings
from .priors import stick_breaking
from .rng import (
    RngStream, sample_beta, sample_categorical_log, sample_gamma, sample_polya_gamma_1,
    sample_truncated_normal,
)

logger = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny


# ---------- Linear algebra helpers ----------

def _cholesky(prec: np.ndarray, block: str) -> np.ndarray:
    try:
        return cholesky(prec, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"precision matrix of block '{block}' is not positive definite") from exc


def _gaussian_from_precision(prec: np.ndarray, rhs: np.ndarray, rng: Generator, block: str) -> np.ndarray:
    """Draw N(P^-1 rhs, P^-1); ``rhs`` may hold several right-hand sides as columns."""
    L = _cholesky(prec, block)
    mean = cho_solve((L, True), rhs)
    noise = rng.standard_normal(mean.shape)
    return mean + solve_triangular(L.T, noise, lower=False)


def sample_loading_rows(prior_prec: np.ndarray, gram: np.ndarray, cross: np.ndarray, sigma2: np.ndarray,
                        rng: Generator, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Row-wise conjugate draws of a p x H loadings matrix.

    Row j has precision diag(prior_prec_j) + (m_j m_j^T * gram)/sigma2_j and
    linear term (m_j * cross_j)/sigma2_j, where m_j masks switched-off cells.
    """
    p, H = prior_prec.shape
    out = np.empty((p, H))
    for j in range(p):
        s = 1.0 / sigma2[j]
        if mask is None:
            prec = np.diag(prior_prec[j]) + s * gram
            rhs = s * cross[:, j]
        else:
            m = mask[j]
            prec = np.diag(prior_prec[j]) + s * gram * np.outer(m, m)
            rhs = s * m * cross[:, j]
        out[j] = _gaussian_from_precision(prec, rhs, rng, "loadings")
    return out


# ---------- Shared steps ----------

def current_target(state: ModelState, data: Dataset) -> np.ndarray:
    """Response the factor part explains: y, or probit residuals z - w mu^T."""
    if data.mode == "gaussian":
        return data.y
    if data.w is None or state.mu is None:
        return state.z
    return state.z - data.w @ state.mu.T


def update_factors(state: ModelState, target: np.ndarray, rng: Generator,
                   lam: Optional[np.ndarray] = None) -> np.ndarray:
    """eta_i ~ N{(Psi^-1 + L'S^-1 L)^-1 L'S^-1 y_i, (Psi^-1 + L'S^-1 L)^-1}, all rows at once."""
    lam = effective_loadings(state) if lam is None else lam
    weighted = lam.T / state.sigma2
    prec = np.diag(1.0 / state.psi) + weighted @ lam
    state.eta = _gaussian_from_precision(prec, weighted @ target.T, rng, "eta").T
    return state.eta


def update_noise_variances(state: ModelState, target: np.ndarray, hyper: Hyperparameters, rng: Generator,
                           lam: Optional[np.ndarray] = None) -> np.ndarray:
    lam = effective_loadings(state) if lam is None else lam
    resid = target - state.eta @ lam.T
    n = target.shape[0]
    prec = sample_gamma(hyper.a_sigma + 0.5 * n, hyper.b_sigma + 0.5 * np.sum(resid ** 2, axis=0), rng)
    state.sigma2 = 1.0 / prec
    return state.sigma2


def update_regression_means(state: ModelState, data: Dataset, hyper: Hyperparameters,
                            rng: Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Conjugate refresh of mu_j (rows) and then b_l (rows) in the probit mean structure."""
    if data.w is None:
        return state.mu, state.b
    w, x = data.w, data.x
    c, q = w.shape[1], x.shape[1]
    inv_mu = 1.0 / hyper.sigma_mu ** 2
    lam = effective_loadings(state)
    resid = state.z - state.eta @ lam.T                      # n x p
    prec = inv_mu * np.eye(c) + w.T @ w
    rhs = w.T @ resid + inv_mu * (state.b @ x.T)             # c x p
    state.mu = _gaussian_from_precision(prec, rhs, rng, "mu").T

    prec_b = np.eye(q) / hyper.sigma_b ** 2 + inv_mu * (x.T @ x)
    rhs_b = inv_mu * (x.T @ state.mu)                        # q x c
    state.b = _gaussian_from_precision(prec_b, rhs_b, rng, "b").T
    return state.mu, state.b


def update_latent_utilities(state: ModelState, data: Dataset, rng: Generator,
                            lam: Optional[np.ndarray] = None) -> np.ndarray:
    lam = effective_loadings(state) if lam is None else lam
    mean = state.eta @ lam.T
    if data.w is not None and state.mu is not None:
        mean = mean + data.w @ state.mu.T
    positive = data.y > 0.5
    lower = np.where(positive, 0.0, -np.inf)
    upper = np.where(positive, np.inf, 0.0)
    state.z = sample_truncated_normal(mean, 1.0, lower, upper, rng)
    return state.z


# ---------- SIS steps ----------

def update_shrinkage_coefficients(state: ModelState, x: np.ndarray, hyper: Hyperparameters, c_p: float,
                                  rng: Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Polya-Gamma refresh of beta_h through the logistic half phi^L of phi."""
    lin = x @ state.beta
    g = expit(lin)
    prob = np.where(state.phi > 0, 1.0, g * (1.0 - c_p) / (1.0 - g * c_p))
    phi_l = (rng.random(prob.shape) < prob).astype(float)
    d = sample_polya_gamma_1(lin, rng)
    kappa = phi_l - 0.5
    q, H = state.beta.shape
    prior = np.eye(q) / hyper.sigma_beta ** 2
    beta = np.empty((q, H))
    for h in range(H):
        prec = (x.T * d[:, h]) @ x + prior
        beta[:, h] = _gaussian_from_precision(prec, x.T @ kappa[:, h], rng, "beta")
    state.beta = beta
    return phi_l, beta


def update_loadings(state: ModelState, target: np.ndarray, rng: Generator) -> np.ndarray:
    mask = np.sqrt(state.rho)[None, :] * np.sqrt(state.phi)
    gram = state.eta.T @ state.eta
    cross = state.eta.T @ target
    prior_prec = np.broadcast_to(1.0 / state.theta, state.lambda_star.shape)
    state.lambda_star = sample_loading_rows(prior_prec, gram, cross, state.sigma2, rng, mask=mask)
    return state.lambda_star


def _log_stick_weights(v: np.ndarray) -> np.ndarray:
    w, _ = stick_breaking(v)
    with np.errstate(divide="ignore"):
        return np.log(w)


def column_allocation_log_weights(state: ModelState, target: np.ndarray, h: int,
                                  fit: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unnormalised log pr(z_h = l), l = 0..H-1, given the current fit eta Lambda^T.

    Returns the log weights, column h's contribution with rho_h = 1, and the fit without column h.
    """
    H = state.H
    lam_h = np.where(state.phi[:, h] > 0, state.lambda_star[:, h], 0.0)
    contrib = np.outer(state.eta[:, h], lam_h)
    rest = fit - contrib * state.rho[h]
    r0 = target - rest
    gain = float(np.sum((2.0 * r0 * contrib - contrib ** 2) / (2.0 * state.sigma2[None, :])))
    lw = _log_stick_weights(state.v) + np.where(np.arange(H) > h, gain, 0.0)
    return lw, contrib, rest


def update_column_scales(state: ModelState, target: np.ndarray, hyper: Hyperparameters,
                         rng: Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Allocations z_h and activity rho_h, then theta_h, then the stick fractions."""
    H, p = state.H, state.p
    fit = state.eta @ effective_loadings(state).T
    alloc = np.empty(H, dtype=int)
    for h in range(H):
        lw, contrib, rest = column_allocation_log_weights(state, target, h, fit)
        alloc[h] = sample_categorical_log(lw, rng)
        state.rho[h] = 1.0 if alloc[h] > h else 0.0
        fit = rest + contrib * state.rho[h]
    state.alloc = alloc

    rate = hyper.b_theta + 0.5 * np.sum(state.lambda_star ** 2, axis=0)
    state.theta = 1.0 / sample_gamma(hyper.a_theta + 0.5 * p, rate, rng)

    state.v = update_sticks(alloc, hyper.alpha, rng)
    return state.rho, state.theta, state.v


def update_sticks(alloc: np.ndarray, alpha: float, rng: Generator) -> np.ndarray:
    """v_l ~ Be{1 + #(z_h = l), alpha + #(z_h > l)} for l < H, v_H = 1."""
    H = alloc.size
    v = np.ones(H)
    if H > 1:
        levels = np.arange(H - 1)
        eq = np.sum(alloc[None, :] == levels[:, None], axis=1)
        gt = np.sum(alloc[None, :] > levels[:, None], axis=1)
        v[:-1] = np.clip(sample_beta(1.0 + eq, alpha + gt, rng), _TINY, 1.0)
    return v


def update_local_scales(state: ModelState, target: np.ndarray, x: np.ndarray, c_p: float,
                        rng: Generator) -> np.ndarray:
    """phi_jh from prior odds g c_p : 1 - g c_p times the likelihood ratio, column by column."""
    prior = expit(x @ state.beta) * c_p
    with np.errstate(divide="ignore"):
        log_odds = np.log(prior) - np.log1p(-prior)
    fit = state.eta @ effective_loadings(state).T
    for h in range(state.H):
        contrib = np.outer(state.eta[:, h], state.rho[h] * state.lambda_star[:, h])
        rest = fit - contrib * state.phi[:, h][None, :]
        r0 = target - rest
        gain = np.sum(2.0 * r0 * contrib - contrib ** 2, axis=0) / (2.0 * state.sigma2)
        new = (rng.random(state.p) < expit(log_odds[:, h] + gain)).astype(float)
        state.phi[:, h] = new
        fit = rest + contrib * new[None, :]
    return state.phi


def _prior_column(hyper: Hyperparameters, x: np.ndarray, c_p: float, n: int, psi_h: float,
                  rng: Generator) -> Dict[str, np.ndarray]:
    p, q = x.shape
    beta = rng.normal(0.0, hyper.sigma_beta, size=q)
    phi = (rng.random(p) < expit(x @ beta) * c_p).astype(float)
    theta = 1.0 / sample_gamma(hyper.a_theta, hyper.b_theta, rng)
    return {
        "beta": beta, "phi": phi, "theta": theta,
        "lambda_star": rng.normal(size=p) * np.sqrt(theta),
        "eta": rng.normal(size=n) * np.sqrt(psi_h),
    }


def adaptation_probability(hyper: Hyperparameters, iteration: int) -> float:
    return float(np.exp(hyper.alpha0 + hyper.alpha1 * iteration))


def adapt_truncation(state: ModelState, iteration: int, hyper: Hyperparameters, x: np.ndarray, c_p: float,
                     rng: Generator) -> Optional[str]:
    """With probability exp(alpha0 + alpha1 t), shrink to H_a + 1 columns or grow by one.

    Returns "shrink", "grow" or None.
    """
    if rng.random() >= adaptation_probability(hyper, iteration):
        return None
    H = state.H
    active = np.flatnonzero(state.rho > 0)
    n = state.eta.shape[0]
    if active.size < H - 1:
        H_new = active.size + 1
        fresh = _prior_column(hyper, x, c_p, n, hyper.psi_diag(H_new)[-1], rng)
        state.lambda_star = np.column_stack([state.lambda_star[:, active], fresh["lambda_star"]])
        state.phi = np.column_stack([state.phi[:, active], fresh["phi"]])
        state.beta = np.column_stack([state.beta[:, active], fresh["beta"]])
        state.eta = np.column_stack([state.eta[:, active], fresh["eta"]])
        state.theta = np.append(state.theta[active], fresh["theta"])
        state.v = np.append(state.v[active], 1.0)
        state.rho = np.append(np.ones(active.size), 0.0)
        direction = "shrink"
    else:
        H_new = H + 1
        fresh = _prior_column(hyper, x, c_p, n, hyper.psi_diag(H_new)[-1], rng)
        v = state.v.copy()
        v[-1] = max(float(sample_beta(1.0, hyper.alpha, rng)), _TINY)
        state.lambda_star = np.column_stack([state.lambda_star, fresh["lambda_star"]])
        state.phi = np.column_stack([state.phi, fresh["phi"]])
        state.beta = np.column_stack([state.beta, fresh["beta"]])
        state.eta = np.column_stack([state.eta, fresh["eta"]])
        state.theta = np.append(state.theta, fresh["theta"])
        state.v = np.append(v, 1.0)
        state.rho = np.append(state.rho, 0.0)
        direction = "grow"
    state.alloc = np.full(H_new, H_new - 1, dtype=int)
    state.psi = hyper.psi_diag(H_new)
    logger.debug("iteration %d: %s truncation %d -> %d (active %d)", iteration, direction, H, H_new, active.size)
    return direction


# ---------- Samplers ----------

def _check_finite(iteration: int, block: str, *arrays: Optional[np.ndarray]) -> None:
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise NonFiniteStateError(iteration, block)


class GibbsSampler:
    """One chain: owns its state and stream, advanced by ``sweep``."""

    family = "base"

    def __init__(self, data: Dataset, hyper: Hyperparameters, config: ChainConfig, rng: Generator,
                 metrics: Optional[SamplerMetrics] = None) -> None:
        if config.mode != data.mode:
            raise ArgumentError("chain mode and data mode differ", {"chain": config.mode, "data": data.mode})
        self.data = data
        self.hyper = hyper
        self.config = config
        self.rng = rng
        self.metrics = metrics
        self.c_p = hyper.resolve_c_p(data.p)
        self.adaptations = 0
        self.state = self.initial_state()

    # subclasses fill these in
    def initial_state(self) -> ModelState:
        raise NotImplementedError

    def core_sweep(self, iteration: int, target: np.ndarray) -> None:
        raise NotImplementedError

    def adapt(self, iteration: int) -> Optional[str]:
        raise NotImplementedError

    def loadings(self) -> np.ndarray:
        return effective_loadings(self.state)

    def h_active(self) -> int:
        return self.state.h_active

    def active_columns(self) -> np.ndarray:
        return self.state.rho.copy()

    def _base_state(self, H: int, lambda_star: np.ndarray, theta: np.ndarray, v: np.ndarray) -> ModelState:
        data, hyper = self.data, self.hyper
        n, p, q = data.n, data.p, data.q
        if data.mode == "gaussian":
            sigma2 = np.full(p, hyper.b_sigma / hyper.a_sigma)
        else:
            sigma2 = np.ones(p)
        state = ModelState(
            lambda_star=lambda_star, phi=np.ones((p, H)), rho=np.ones(H), theta=theta, v=v,
            beta=np.zeros((q, H)), sigma2=sigma2, eta=np.zeros((n, H)), psi=hyper.psi_diag(H),
            alloc=np.full(H, H - 1, dtype=int),
        )
        if data.mode == "probit":
            c = data.c
            state.mu = np.zeros((p, c))
            state.b = np.zeros((c, q))
            positive = data.y > 0.5
            state.z = sample_truncated_normal(
                0.0, 1.0, np.where(positive, 0.0, -np.inf), np.where(positive, np.inf, 0.0), self.rng,
            )
        return state

    def sweep(self, iteration: int) -> None:
        s, data = self.state, self.data
        if data.mode == "probit":
            update_regression_means(s, data, self.hyper, self.rng)
            _check_finite(iteration, "mu", s.mu, s.b)
            update_latent_utilities(s, data, self.rng, lam=self.loadings())
            _check_finite(iteration, "z", s.z)
        self.core_sweep(iteration, current_target(s, data))
        if self.config.adapt:
            direction = self.adapt(iteration)
            if direction is not None:
                self.adaptations += 1
                if self.metrics is not None:
                    self.metrics.record_adaptation(self.family, direction)

    def snapshot(self, iteration: int) -> Draw:
        s = self.state
        return Draw(
            iteration=iteration, lam=self.loadings().copy(), beta=s.beta.copy(), sigma2=s.sigma2.copy(),
            rho=self.active_columns(), phi=s.phi.copy(), theta=s.theta.copy(), v=s.v.copy(), psi=s.psi.copy(),
            h_active=self.h_active(),
            mu=None if s.mu is None else s.mu.copy(), b=None if s.b is None else s.b.copy(),
        )


class SisSampler(GibbsSampler):
    family = "sis"

    def initial_state(self) -> ModelState:
        p = self.data.p
        H = self.hyper.resolve_H_init(p)
        theta = 1.0 / sample_gamma(self.hyper.a_theta, self.hyper.b_theta, self.rng, size=H)
        lambda_star = self.rng.normal(size=(p, H)) * np.sqrt(theta)
        v = np.ones(H)
        if H > 1:
            v[:-1] = np.clip(sample_beta(1.0, self.hyper.alpha, self.rng, size=H - 1), _TINY, 1.0)
        return self._base_state(H, lambda_star, theta, v)

    def core_sweep(self, iteration: int, target: np.ndarray) -> None:
        s, hyper, rng, x = self.state, self.hyper, self.rng, self.data.x
        update_factors(s, target, rng)
        _check_finite(iteration, "eta", s.eta)
        if self.data.mode == "gaussian":
            update_noise_variances(s, target, hyper, rng)
            _check_finite(iteration, "sigma2", s.sigma2)
        update_shrinkage_coefficients(s, x, hyper, self.c_p, rng)
        _check_finite(iteration, "beta", s.beta)
        update_loadings(s, target, rng)
        _check_finite(iteration, "lambda_star", s.lambda_star)
        update_column_scales(s, target, hyper, rng)
        _check_finite(iteration, "column_scales", s.theta, s.v)
        update_local_scales(s, target, x, self.c_p, rng)

    def adapt(self, iteration: int) -> Optional[str]:
        return adapt_truncation(self.state, iteration, self.hyper, self.data.x, self.c_p, self.rng)


def sampler_class(family: str) -> Type[GibbsSampler]:
    if family == "sis":
        return SisSampler
    from .baselines import CuspSampler, MgpSampler

    if family == "mgp":
        return MgpSampler
    if family == "cusp":
        return CuspSampler
    raise ArgumentError(f"unknown model family '{family}'")


def run_chain(data: Dataset, hyper: Hyperparameters, config: ChainConfig,
              metrics: Optional[SamplerMetrics] = None, pi_mode: str = "sampled", n_mc: int = 512) -> ChainOutput:
    """Run one adaptive chain and keep every ``thin``-th post-burn-in state."""
    rng = RngStream(config.seed, 0).generator
    sampler = sampler_class(config.family)(data, hyper, config, rng, metrics)
    crn = CommonRandomNumbers(config.seed, n_mc) if data.mode == "probit" else None
    N = config.n_iterations
    h_trace = np.zeros(N, dtype=int)
    H_trace = np.zeros(N, dtype=int)
    draws: List[Draw] = []
    log_dens: List[float] = []
    progress_every = max(1, N // 10)
    logger.info("chain start: family=%s mode=%s n=%d p=%d iterations=%d seed=%d",
                config.family, data.mode, data.n, data.p, N, config.seed)
    elapsed_total = 0.0
    for t in range(1, N + 1):
        start = time.perf_counter()
        sampler.sweep(t)
        elapsed = time.perf_counter() - start
        elapsed_total += elapsed
        if metrics is not None:
            metrics.observe_iteration(config.family, data.mode, elapsed)
        h_trace[t - 1] = sampler.h_active()
        H_trace[t - 1] = sampler.state.H
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            draw = sampler.snapshot(t)
            if config.record_log_density:
                draw.log_density = log_marginal_density(draw, data, hyper, config.family, pi_mode, crn)
                log_dens.append(draw.log_density)
            draws.append(draw)
        if t % progress_every == 0:
            logger.info("iteration %d/%d: H=%d active=%d", t, N, sampler.state.H, h_trace[t - 1])
    logger.info("chain end: %d draws, %d adaptations", len(draws), sampler.adaptations)
    return ChainOutput(
        mode=data.mode, family=config.family, draws=draws,
        h_active_trace=h_trace, H_trace=H_trace, log_density_trace=np.asarray(log_dens, dtype=float),
        seconds_per_iteration=elapsed_total / N, adaptation_events=sampler.adaptations,
        config={**config.model_dump(), "pi_mode": pi_mode, "n_mc": n_mc}, hyper=hyper.model_dump(),
    )
