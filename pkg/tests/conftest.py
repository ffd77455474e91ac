# tests/conftest.py
import numpy as np
import pytest

from sisfactor.models import ChainConfig
from sisfactor.services.model_core import ChainOutput, Dataset, Draw
from sisfactor.services.rng import make_rng
from sisfactor.settings import Settings


def toy_responses(n: int = 40, p: int = 5, k: int = 2, seed: int = 1) -> np.ndarray:
    # two dense factors plus unit noise
    rng = make_rng(seed, 99)
    lam = rng.normal(size=(p, k))
    return rng.normal(size=(n, k)) @ lam.T + rng.normal(size=(n, p))


@pytest.fixture
def gaussian_data() -> Dataset:
    y = toy_responses()
    return Dataset(y=y, x=np.ones((y.shape[1], 1)), mode="gaussian")


@pytest.fixture
def probit_data() -> Dataset:
    latent = toy_responses(seed=2)
    n, p = latent.shape
    w = np.column_stack([np.ones(n), make_rng(2, 98).normal(size=n)])
    return Dataset(y=(latent > 0).astype(float), x=np.ones((p, 1)), w=w, mode="probit")


@pytest.fixture
def short_config():
    def build(family: str = "sis", mode: str = "gaussian", **overrides) -> ChainConfig:
        base = {"n_iterations": 60, "burn_in": 20, "thin": 4, "family": family, "mode": mode, "seed": 7}
        base.update(overrides)
        return ChainConfig(**base)
    return build


@pytest.fixture
def make_draw():
    def build(lam, sigma2=None, log_density=None, iteration: int = 1, rho=None) -> Draw:
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        p, H = lam.shape
        rho = np.ones(H) if rho is None else np.asarray(rho, dtype=float)
        return Draw(
            iteration=iteration, lam=lam, beta=np.zeros((1, H)),
            sigma2=np.ones(p) if sigma2 is None else np.asarray(sigma2, dtype=float),
            rho=rho, phi=np.ones((p, H)), theta=np.ones(H), v=np.append(np.full(H - 1, 0.5), 1.0),
            psi=np.ones(H), h_active=int(np.sum(rho)), log_density=log_density,
        )
    return build


@pytest.fixture
def make_chain():
    def build(draws, mode: str = "gaussian", family: str = "sis") -> ChainOutput:
        return ChainOutput(
            mode=mode, family=family, draws=list(draws),
            h_active_trace=np.array([d.h_active for d in draws], dtype=int),
            H_trace=np.array([d.H for d in draws], dtype=int),
            log_density_trace=np.array([np.nan if d.log_density is None else d.log_density for d in draws]),
            config={"seed": 0, "pi_mode": "sampled", "n_mc": 512},
        )
    return build


@pytest.fixture
def settings(monkeypatch, tmp_path) -> Settings:
    # fresh Settings per test; get_settings() is cached for the process
    monkeypatch.setenv("SIS_OUTPUT_DIR", str(tmp_path / "default-out"))
    monkeypatch.setenv("SIS_ENABLE_METRICS", "1")
    monkeypatch.setenv("SIS_INCLUDE_TIMING", "0")
    monkeypatch.setenv("SIS_CHAIN_FORMAT", "json")
    return Settings()
