"""Domain types and the deterministic algebra of the factor model."""
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.linalg import lapack, solve_triangular

from ..errors import ArgumentError, DataValidationError, DimensionError, NumericalError

logger = logging.getLogger(__name__)


# ---------- Types ----------

@dataclass
class Dataset:
    y: np.ndarray
    x: np.ndarray
    w: Optional[np.ndarray] = None
    mode: str = "gaussian"
    y_names: Optional[List[str]] = None
    x_names: Optional[List[str]] = None
    w_names: Optional[List[str]] = None

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.y.ndim != 2 or self.x.ndim != 2:
            raise DataValidationError("y and x must be matrices")
        n, p = self.y.shape
        if p < 1 or self.x.shape[1] < 1:
            raise DataValidationError("need p >= 1 and q >= 1", {"p": p, "q": self.x.shape[1]})
        if self.x.shape[0] != p:
            raise DataValidationError("x must have one row per column of y", {"p": p, "x_rows": self.x.shape[0]})
        if not np.all(np.isfinite(self.x)):
            raise DataValidationError("x contains non-finite values")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
            if self.w.ndim != 2 or self.w.shape[0] != n:
                raise DataValidationError("w must have one row per row of y", {"n": n, "w_rows": self.w.shape[0]})
            if self.mode != "probit":
                raise DataValidationError("environmental covariates w are only used in probit mode")
        if self.mode == "probit":
            bad = np.argwhere((self.y != 0.0) & (self.y != 1.0))
            if bad.size:
                i, j = (int(v) for v in bad[0])
                raise DataValidationError(
                    "probit responses must be 0 or 1",
                    {"row": i, "column": self.y_names[j] if self.y_names else j, "value": float(self.y[i, j])},
                )
        elif self.mode == "gaussian":
            bad = np.argwhere(~np.isfinite(self.y))
            if bad.size:
                i, j = (int(v) for v in bad[0])
                raise DataValidationError("responses must be finite", {"row": i, "column": j})
        else:
            raise DataValidationError(f"unknown mode '{self.mode}'")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    @property
    def c(self) -> int:
        return 0 if self.w is None else self.w.shape[1]

    def subset_rows(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            y=self.y[rows], x=self.x, w=None if self.w is None else self.w[rows], mode=self.mode,
            y_names=self.y_names, x_names=self.x_names, w_names=self.w_names,
        )


@dataclass
class ModelState:
    """Latent quantities of one sweep. Only the engine that owns a state mutates it."""

    lambda_star: np.ndarray      # p x H
    phi: np.ndarray              # p x H, 0/1
    rho: np.ndarray              # H, 0/1
    theta: np.ndarray            # H, column variances
    v: np.ndarray                # H, stick fractions, v[-1] == 1
    beta: np.ndarray             # q x H
    sigma2: np.ndarray           # p
    eta: np.ndarray              # n x H
    psi: np.ndarray              # H, factor variances
    alloc: Optional[np.ndarray] = None   # H, 0-based stick allocations z_h
    mu: Optional[np.ndarray] = None      # p x c
    b: Optional[np.ndarray] = None       # c x q
    z: Optional[np.ndarray] = None       # n x p latent utilities
    # multiplicative-gamma extras
    omega: Optional[np.ndarray] = None   # p x H local precisions
    delta: Optional[np.ndarray] = None   # H

    @property
    def H(self) -> int:
        return self.lambda_star.shape[1]

    @property
    def p(self) -> int:
        return self.lambda_star.shape[0]

    @property
    def h_active(self) -> int:
        return int(np.sum(self.rho))

    def copy(self) -> "ModelState":
        kwargs = {}
        for f in fields(self):
            value = getattr(self, f.name)
            kwargs[f.name] = None if value is None else np.array(value, copy=True)
        return ModelState(**kwargs)


@dataclass
class Draw:
    """Retained snapshot. ``rho`` marks active columns for every family."""

    iteration: int
    lam: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    h_active: int
    mu: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    log_density: Optional[float] = None

    @property
    def H(self) -> int:
        return self.lam.shape[1]

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "Draw":
        def arr(key: str, ndim: int) -> Optional[np.ndarray]:
            value = raw.get(key)
            if value is None:
                return None
            a = np.asarray(value, dtype=float)
            if ndim == 2 and a.ndim == 1:
                a = a.reshape(0, 0) if a.size == 0 else a[:, None]
            return a
        return cls(
            iteration=int(raw["iteration"]),
            lam=arr("lam", 2), beta=arr("beta", 2), sigma2=arr("sigma2", 1),
            rho=arr("rho", 1), phi=arr("phi", 2), theta=arr("theta", 1), v=arr("v", 1),
            psi=arr("psi", 1), h_active=int(raw["h_active"]),
            mu=arr("mu", 2), b=arr("b", 2),
            log_density=None if raw.get("log_density") is None else float(raw["log_density"]),
        )


@dataclass
class ChainOutput:
    mode: str
    family: str
    draws: List[Draw]
    h_active_trace: np.ndarray
    H_trace: np.ndarray
    log_density_trace: np.ndarray
    seconds_per_iteration: float = 0.0
    adaptation_events: int = 0
    config: Dict[str, Any] = field(default_factory=dict)
    hyper: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.draws)


@dataclass
class CovarianceView:
    omega: np.ndarray
    correlation: np.ndarray
    partial_correlation: np.ndarray


# ---------- Algebra ----------

def active_mask(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return (np.asarray(rho)[None, :] > 0) & (np.asarray(phi) > 0)


def effective_loadings(state: ModelState) -> np.ndarray:
    """lambda_jh = lambda*_jh sqrt(rho_h) sqrt(phi_jh); exact zeros where an indicator is off."""
    return np.where(active_mask(state.rho, state.phi), state.lambda_star, 0.0)


def _psi_vector(psi: Optional[np.ndarray], H: int) -> np.ndarray:
    if psi is None:
        return np.ones(H)
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 2:
        psi = np.diag(psi)
    if psi.shape != (H,):
        raise DimensionError("psi must have one entry per column", {"H": H, "psi": list(psi.shape)})
    return psi


def covariance_matrix(lam: np.ndarray, psi: Optional[np.ndarray], sigma2: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if lam.ndim != 2 or sigma2.shape != (lam.shape[0],):
        raise DimensionError(
            "loadings rows and noise variances disagree",
            {"lambda": list(lam.shape), "sigma2": list(sigma2.shape)},
        )
    if np.any(~(sigma2 > 0)):
        raise ArgumentError("noise variances must be positive")
    psi_v = _psi_vector(psi, lam.shape[1])
    omega = (lam * psi_v) @ lam.T
    omega = 0.5 * (omega + omega.T)
    omega[np.diag_indices_from(omega)] += sigma2
    return omega


def correlation_from_covariance(omega: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(omega))
    corr = omega / np.outer(sd, sd)
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def _pivoted_inverse(a: np.ndarray) -> Optional[np.ndarray]:
    c, piv, rank, info = lapack.dpstrf(a, lower=1)
    p = a.shape[0]
    if info != 0 or rank < p:
        return None
    L = np.tril(c)
    Linv = solve_triangular(L, np.eye(p), lower=True)
    inv_perm = Linv.T @ Linv
    perm = piv - 1
    out = np.empty_like(inv_perm)
    out[np.ix_(perm, perm)] = inv_perm
    return out


def partial_correlation(corr: np.ndarray, jitter: float = 1e-10, max_tries: int = 8) -> np.ndarray:
    """Partial correlations from the inverse of ``corr`` via pivoted Cholesky.

    On a rank-deficient factorization the diagonal gets jitter, growing tenfold per retry.
    """
    corr = np.asarray(corr, dtype=float)
    p = corr.shape[0]
    inv = _pivoted_inverse(corr)
    added = 0.0
    tries = 0
    while inv is None:
        if tries >= max_tries:
            raise NumericalError("correlation matrix could not be inverted", {"jitter": added})
        added = jitter * (10.0 ** tries)
        logger.warning("singular correlation matrix; retrying with jitter %.1e", added)
        inv = _pivoted_inverse(corr + added * np.eye(p))
        tries += 1
    d = np.sqrt(np.diag(inv))
    pc = -inv / np.outer(d, d)
    pc = 0.5 * (pc + pc.T)
    np.fill_diagonal(pc, 1.0)
    return pc


def assemble_covariance(lam: np.ndarray, psi: Optional[np.ndarray], sigma2: np.ndarray) -> CovarianceView:
    omega = covariance_matrix(lam, psi, sigma2)
    corr = correlation_from_covariance(omega)
    return CovarianceView(omega=omega, correlation=corr, partial_correlation=partial_correlation(corr))


def trace_ratio(lam: np.ndarray, psi: Optional[np.ndarray], sigma2: np.ndarray, H_trunc: int) -> float:
    lam = np.asarray(lam, dtype=float)
    H = lam.shape[1]
    if not 1 <= H_trunc <= H:
        raise ArgumentError("H_trunc must lie in [1, H]", {"H_trunc": H_trunc, "H": H})
    col = np.sum(lam ** 2, axis=0) * _psi_vector(psi, H)
    noise = float(np.sum(sigma2))
    return float((np.sum(col[:H_trunc]) + noise) / (np.sum(col) + noise))


def truncation_ratio(state: ModelState, H_trunc: int) -> float:
    """tr(Omega_{H_trunc}) / tr(Omega) using the leading ``H_trunc`` columns."""
    return trace_ratio(effective_loadings(state), state.psi, state.sigma2, H_trunc)


def explained_fraction(lam: np.ndarray, psi: Optional[np.ndarray], sigma2: np.ndarray) -> float:
    lam = np.asarray(lam, dtype=float)
    signal = float(np.sum(np.sum(lam ** 2, axis=0) * _psi_vector(psi, lam.shape[1])))
    return signal / (signal + float(np.sum(sigma2)))


def variance_explained(state: ModelState) -> float:
    """tr(Lambda Psi Lambda^T) / tr(Omega)."""
    return explained_fraction(effective_loadings(state), state.psi, state.sigma2)
