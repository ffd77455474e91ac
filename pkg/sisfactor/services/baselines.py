"""Adaptive Gibbs samplers for the multiplicative gamma process and cumulative shrinkage process priors."""
import logging
from typing import Optional

import numpy as np
from scipy.stats import norm

from .density import column_t_logpdf
from .gibbs import (
    GibbsSampler, _check_finite, _log_stick_weights, _TINY, adaptation_probability, sample_loading_rows,
    update_factors, update_noise_variances, update_sticks,
)
from .model_core import ModelState
from .rng import sample_beta, sample_categorical_log, sample_gamma

logger = logging.getLogger(__name__)

# a column is redundant when every |lambda_jh| falls below this
MGP_REDUNDANT = 1e-4
# |lambda_jh| at or above this marks a column active for the thresholded families
ACTIVE_THRESHOLD = 0.05


class MgpSampler(GibbsSampler):
    """Local Ga(nu/2, nu/2) precisions times cumulative products of gamma column multipliers."""

    family = "mgp"

    def initial_state(self) -> ModelState:
        p, hyper, rng = self.data.p, self.hyper, self.rng
        H = hyper.resolve_H_init(p)
        omega = sample_gamma(hyper.mgp_nu / 2.0, hyper.mgp_nu / 2.0, rng, size=(p, H))
        delta = np.concatenate([
            sample_gamma(hyper.mgp_a1, 1.0, rng, size=1), sample_gamma(hyper.mgp_a2, 1.0, rng, size=H - 1),
        ])
        tau = np.cumprod(delta)
        lam = rng.normal(size=(p, H)) / np.sqrt(omega * tau)
        state = self._base_state(H, lam, 1.0 / tau, np.ones(H))
        state.omega = omega
        state.delta = delta
        return state

    def loadings(self) -> np.ndarray:
        return self.state.lambda_star

    def active_columns(self) -> np.ndarray:
        return np.any(np.abs(self.state.lambda_star) >= ACTIVE_THRESHOLD, axis=0).astype(float)

    def h_active(self) -> int:
        return int(np.sum(self.active_columns()))

    def core_sweep(self, iteration: int, target: np.ndarray) -> None:
        s, hyper, rng = self.state, self.hyper, self.rng
        lam = s.lambda_star
        update_factors(s, target, rng, lam=lam)
        _check_finite(iteration, "eta", s.eta)
        if self.data.mode == "gaussian":
            update_noise_variances(s, target, hyper, rng, lam=lam)
            _check_finite(iteration, "sigma2", s.sigma2)
        tau = np.cumprod(s.delta)
        s.lambda_star = sample_loading_rows(s.omega * tau, s.eta.T @ s.eta, s.eta.T @ target, s.sigma2, rng)
        _check_finite(iteration, "lambda_star", s.lambda_star)
        self._update_local_precisions()
        self._update_multipliers()
        _check_finite(iteration, "delta", s.delta, s.omega)

    def _update_local_precisions(self) -> None:
        s, nu = self.state, self.hyper.mgp_nu
        tau = np.cumprod(s.delta)
        s.omega = sample_gamma((nu + 1.0) / 2.0, (nu + tau * s.lambda_star ** 2) / 2.0, self.rng)

    def _update_multipliers(self) -> None:
        s, hyper, rng = self.state, self.hyper, self.rng
        p, H = s.lambda_star.shape
        col = np.sum(s.omega * s.lambda_star ** 2, axis=0)
        delta = s.delta.copy()
        for h in range(H):
            tau = np.cumprod(delta)
            partial = tau[h:] / delta[h]
            shape = (hyper.mgp_a1 if h == 0 else hyper.mgp_a2) + 0.5 * p * (H - h)
            delta[h] = sample_gamma(shape, 1.0 + 0.5 * np.sum(partial * col[h:]), rng)
        s.delta = delta
        s.theta = 1.0 / np.cumprod(delta)

    def adapt(self, iteration: int) -> Optional[str]:
        s, hyper, rng = self.state, self.hyper, self.rng
        if rng.random() >= adaptation_probability(hyper, iteration):
            return None
        p, H = s.lambda_star.shape
        redundant = np.all(np.abs(s.lambda_star) < MGP_REDUNDANT, axis=0)
        n_red = int(np.sum(redundant))
        if n_red == 0:
            s.lambda_star = np.column_stack([s.lambda_star, np.zeros(p)])
            s.omega = np.column_stack([s.omega, sample_gamma(hyper.mgp_nu / 2.0, hyper.mgp_nu / 2.0, rng, size=p)])
            s.delta = np.append(s.delta, sample_gamma(hyper.mgp_a2, 1.0, rng))
            s.eta = np.column_stack([s.eta, rng.normal(size=s.eta.shape[0]) * np.sqrt(hyper.psi_diag(H + 1)[-1])])
            direction = "grow"
        else:
            keep = np.flatnonzero(~redundant)
            if keep.size == 0:
                keep = np.array([0])
            if keep.size == H:
                return None
            s.lambda_star = s.lambda_star[:, keep]
            s.omega = s.omega[:, keep]
            s.delta = s.delta[keep]
            s.eta = s.eta[:, keep]
            direction = "shrink"
        H_new = s.lambda_star.shape[1]
        s.theta = 1.0 / np.cumprod(s.delta)
        s.phi = np.ones((p, H_new))
        s.rho = np.ones(H_new)
        s.v = np.ones(H_new)
        s.beta = np.zeros((self.data.q, H_new))
        s.alloc = np.full(H_new, H_new - 1, dtype=int)
        s.psi = hyper.psi_diag(H_new)
        logger.debug("iteration %d: %s truncation %d -> %d", iteration, direction, H, H_new)
        return direction

    def snapshot(self, iteration: int):
        draw = super().snapshot(iteration)
        draw.beta = np.zeros((self.data.q, 0))
        return draw


class CuspSampler(GibbsSampler):
    """Spike theta_inf versus inverse-gamma slab, chosen through stick-breaking allocations."""

    family = "cusp"

    def initial_state(self) -> ModelState:
        p, hyper, rng = self.data.p, self.hyper, self.rng
        H = hyper.resolve_H_init(p)
        theta = 1.0 / sample_gamma(hyper.a_theta, hyper.b_theta, rng, size=H)
        lam = rng.normal(size=(p, H)) * np.sqrt(theta)
        v = np.ones(H)
        if H > 1:
            v[:-1] = np.clip(sample_beta(1.0, hyper.alpha, rng, size=H - 1), _TINY, 1.0)
        return self._base_state(H, lam, theta, v)

    def loadings(self) -> np.ndarray:
        return self.state.lambda_star

    def active_columns(self) -> np.ndarray:
        alloc = self.state.alloc
        return (alloc > np.arange(alloc.size)).astype(float)

    def h_active(self) -> int:
        return int(np.sum(self.active_columns()))

    def core_sweep(self, iteration: int, target: np.ndarray) -> None:
        s, hyper, rng = self.state, self.hyper, self.rng
        lam = s.lambda_star
        update_factors(s, target, rng, lam=lam)
        _check_finite(iteration, "eta", s.eta)
        if self.data.mode == "gaussian":
            update_noise_variances(s, target, hyper, rng, lam=lam)
            _check_finite(iteration, "sigma2", s.sigma2)
        prior_prec = np.broadcast_to(1.0 / s.theta, s.lambda_star.shape)
        s.lambda_star = sample_loading_rows(prior_prec, s.eta.T @ s.eta, s.eta.T @ target, s.sigma2, rng)
        _check_finite(iteration, "lambda_star", s.lambda_star)
        self._update_allocations()
        s.v = update_sticks(s.alloc, hyper.alpha, rng)
        self._update_column_variances()
        _check_finite(iteration, "theta", s.theta, s.v)

    def _update_allocations(self) -> None:
        s, hyper = self.state, self.hyper
        H = s.H
        log_w = _log_stick_weights(s.v)
        spike_sd = np.sqrt(hyper.theta_inf)
        alloc = np.empty(H, dtype=int)
        for h in range(H):
            col = s.lambda_star[:, h]
            spike = float(np.sum(norm.logpdf(col, 0.0, spike_sd)))
            slab = column_t_logpdf(col, hyper.a_theta, hyper.b_theta)
            lw = log_w + np.where(np.arange(H) > h, slab, spike)
            alloc[h] = sample_categorical_log(lw, self.rng)
        s.alloc = alloc

    def _update_column_variances(self) -> None:
        s, hyper = self.state, self.hyper
        p = s.p
        rate = hyper.b_theta + 0.5 * np.sum(s.lambda_star ** 2, axis=0)
        slab = 1.0 / sample_gamma(hyper.a_theta + 0.5 * p, rate, self.rng)
        s.theta = np.where(self.active_columns() > 0, slab, hyper.theta_inf)

    def adapt(self, iteration: int) -> Optional[str]:
        s, hyper, rng = self.state, self.hyper, self.rng
        if rng.random() >= adaptation_probability(hyper, iteration):
            return None
        p, H = s.lambda_star.shape
        active = np.flatnonzero(self.active_columns() > 0)
        n = s.eta.shape[0]
        spike_sd = np.sqrt(hyper.theta_inf)
        if active.size < H - 1:
            H_new = active.size + 1
            s.lambda_star = np.column_stack([s.lambda_star[:, active], rng.normal(size=p) * spike_sd])
            s.eta = np.column_stack([s.eta[:, active], rng.normal(size=n) * np.sqrt(hyper.psi_diag(H_new)[-1])])
            s.theta = np.append(s.theta[active], hyper.theta_inf)
            s.v = np.append(s.v[active], 1.0)
            s.alloc = np.full(H_new, H_new - 1, dtype=int)
            direction = "shrink"
        else:
            H_new = H + 1
            v = s.v.copy()
            v[-1] = max(float(sample_beta(1.0, hyper.alpha, rng)), _TINY)
            s.lambda_star = np.column_stack([s.lambda_star, rng.normal(size=p) * spike_sd])
            s.eta = np.column_stack([s.eta, rng.normal(size=n) * np.sqrt(hyper.psi_diag(H_new)[-1])])
            s.theta = np.append(s.theta, hyper.theta_inf)
            s.v = np.append(v, 1.0)
            s.alloc = np.append(s.alloc, H_new - 1)
            direction = "grow"
        s.phi = np.ones((p, H_new))
        s.rho = np.ones(H_new)
        s.beta = np.zeros((self.data.q, H_new))
        s.psi = hyper.psi_diag(H_new)
        logger.debug("iteration %d: %s truncation %d -> %d (active %d)", iteration, direction, H, H_new, active.size)
        return direction

    def snapshot(self, iteration: int):
        draw = super().snapshot(iteration)
        draw.beta = np.zeros((self.data.q, 0))
        return draw
