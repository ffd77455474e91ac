"""Random variate kernels used by the samplers.

Every kernel takes an explicit ``numpy.random.Generator``. Gamma laws are
shape-rate: ``sample_gamma(a, b)`` has mean a/b and variance a/b**2.
"""
from typing import Tuple, Union

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from polyagamma import random_polyagamma
from scipy.special import logsumexp, ndtr, ndtri

from ..errors import ArgumentError

ArrayLike = Union[float, np.ndarray]

# beyond this many standard deviations inversion loses precision
_TAIL_SWITCH = 4.0


class RngStream:
    """Counter-based stream identified by a root seed and a stream index.

    Philox keyed through SeedSequence(seed, spawn_key=index): equal (seed, index)
    pairs replay the same sequence, distinct indices give independent streams.
    """

    def __init__(self, seed: int, index: Union[int, Tuple[int, ...]] = ()) -> None:
        if seed < 0 or seed >= 2 ** 64:
            raise ArgumentError("seed must be a 64-bit unsigned integer", {"seed": seed})
        self.seed = int(seed)
        self.index: Tuple[int, ...] = (index,) if isinstance(index, int) else tuple(index)
        self.generator = Generator(Philox(SeedSequence(self.seed, spawn_key=self.index)))

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.index + (int(index),))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, index={self.index})"


def make_rng(seed: int, *index: int) -> Generator:
    return RngStream(seed, tuple(index)).generator


def derive_seed(seed: int, *index: int) -> int:
    """A 64-bit child seed, deterministic in (seed, index)."""
    state = SeedSequence(int(seed), spawn_key=tuple(int(i) for i in index)).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


# ---------- Pólya-Gamma ----------

def sample_polya_gamma_1(c: ArrayLike, rng: Generator) -> ArrayLike:
    """Exact PG(1, c) draws (alternating-series accept/reject)."""
    c_arr = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c_arr)):
        raise ArgumentError("Polya-Gamma tilt must be finite")
    if c_arr.ndim == 0:
        return float(random_polyagamma(1.0, float(c_arr), method="devroye", random_state=rng))
    if c_arr.size == 0:
        return np.empty_like(c_arr)
    out = random_polyagamma(1.0, c_arr.ravel(), method="devroye", random_state=rng)
    return np.asarray(out, dtype=float).reshape(c_arr.shape)


def polya_gamma_mean(c: float, n_terms: int = 10000) -> float:
    """E{PG(1, c)} from the infinite-convolution series, truncated at ``n_terms``."""
    k = np.arange(1, n_terms + 1, dtype=float)
    return float(np.sum(1.0 / ((k - 0.5) ** 2 + c ** 2 / (4.0 * np.pi ** 2))) / (2.0 * np.pi ** 2))


# ---------- Truncated normal ----------

def _tail_draw(a: np.ndarray, b: np.ndarray, rng: Generator) -> np.ndarray:
    """Standard normal restricted to (a, b) with a >= _TAIL_SWITCH."""
    out = np.empty_like(a)
    pending = np.arange(a.size)
    while pending.size:
        aa, bb = a[pending], b[pending]
        lam = 0.5 * (aa + np.sqrt(aa * aa + 4.0))
        width = bb - aa
        # narrow window: uniform proposal beats the exponential one
        narrow = width < 1.0 / lam
        prop = np.where(
            narrow,
            aa + rng.random(pending.size) * np.where(narrow, width, 0.0),
            aa + rng.exponential(1.0, pending.size) / lam,
        )
        log_acc = np.where(narrow, 0.5 * (aa * aa - prop * prop), -0.5 * (prop - lam) ** 2)
        ok = (np.log(rng.random(pending.size)) <= log_acc) & (prop < bb)
        out[pending[ok]] = prop[ok]
        pending = pending[~ok]
    return out


def sample_truncated_normal(mu: ArrayLike, sigma: ArrayLike, lower: ArrayLike, upper: ArrayLike,
                            rng: Generator) -> ArrayLike:
    """N(mu, sigma^2) restricted to the open interval (lower, upper); broadcasts."""
    mu_a, sigma_a, lo_a, up_a = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float),
        np.asarray(lower, dtype=float), np.asarray(upper, dtype=float),
    )
    scalar = mu_a.ndim == 0
    if np.any(~(lo_a < up_a)):
        raise ArgumentError("truncation requires lower < upper")
    if np.any(~(sigma_a > 0)):
        raise ArgumentError("sigma must be positive")

    mu_f, sd_f = mu_a.ravel(), sigma_a.ravel()
    lo_f, up_f = lo_a.ravel(), up_a.ravel()
    a = (lo_f - mu_f) / sd_f
    b = (up_f - mu_f) / sd_f
    z = np.empty_like(a)

    right = a >= _TAIL_SWITCH
    left = b <= -_TAIL_SWITCH
    middle = ~(right | left)

    if np.any(right):
        z[right] = _tail_draw(a[right], b[right], rng)
    if np.any(left):
        z[left] = -_tail_draw(-b[left], -a[left], rng)
    if np.any(middle):
        am, bm = a[middle], b[middle]
        u = rng.random(am.size)
        # invert on the side with more resolution
        upper_side = am >= 0
        zm = np.empty_like(am)
        if np.any(upper_side):
            hi = ndtr(-am[upper_side])
            lo = ndtr(-bm[upper_side])
            zm[upper_side] = -ndtri(lo + u[upper_side] * (hi - lo))
        if np.any(~upper_side):
            lo = ndtr(am[~upper_side])
            hi = ndtr(bm[~upper_side])
            zm[~upper_side] = ndtri(lo + u[~upper_side] * (hi - lo))
        z[middle] = zm

    draw = mu_f + sd_f * z
    draw = np.minimum(np.maximum(draw, np.nextafter(lo_f, np.inf)), np.nextafter(up_f, -np.inf))
    if scalar:
        return float(draw[0])
    return draw.reshape(mu_a.shape)


# ---------- Categorical ----------

def sample_categorical_log(log_weights: np.ndarray, rng: Generator) -> int:
    """0-based index drawn with probability proportional to exp(log_weights)."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ArgumentError("log_weights must be a non-empty vector")
    if not np.any(np.isfinite(lw)):
        raise ArgumentError("at least one log weight must be finite")
    prob = np.exp(lw - logsumexp(lw))
    cdf = np.cumsum(prob)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    idx = min(idx, lw.size - 1)
    if prob[idx] == 0.0:
        # rounding at the top of the cdf; fall back to the nearest positive cell
        support = np.flatnonzero(prob > 0.0)
        below = support[support <= idx]
        idx = int(below[-1]) if below.size else int(support[0])
    return idx


# ---------- Gamma family ----------

def _check_positive(**params: ArrayLike) -> None:
    for name, value in params.items():
        if not np.all(np.asarray(value, dtype=float) > 0):
            raise ArgumentError(f"{name} must be positive", {"parameter": name})


def sample_gamma(shape: ArrayLike, rate: ArrayLike, rng: Generator, size=None) -> ArrayLike:
    _check_positive(shape=shape, rate=rate)
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def sample_inverse_gamma(shape: ArrayLike, rate: ArrayLike, rng: Generator, size=None) -> ArrayLike:
    """X with 1/X ~ Ga(shape, rate); mean rate/(shape-1) for shape > 1."""
    return 1.0 / sample_gamma(shape, rate, rng, size=size)


def sample_beta(a: ArrayLike, b: ArrayLike, rng: Generator, size=None) -> ArrayLike:
    _check_positive(a=a, b=b)
    return rng.beta(a, b, size=size)
