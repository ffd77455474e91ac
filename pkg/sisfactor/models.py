import math
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = "1.0"

Mode = Literal["gaussian", "probit"]
Family = Literal["sis", "mgp", "cusp"]
SimFamily = Literal["sis", "sis_mc", "mgp", "cusp"]
Command = Literal["fit", "simulate", "prior-check", "summarize"]


# ---------- Configuration ----------

class Hyperparameters(BaseModel):
    """Fixed prior constants. Gamma laws are shape-rate everywhere: Ga(a, b) has mean a/b."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(5.0, gt=0)
    a_theta: float = Field(2.0, gt=1)
    b_theta: float = Field(2.0, gt=0)
    sigma_beta: float = Field(1.0, gt=0)
    a_sigma: float = Field(1.0, gt=0)
    b_sigma: float = Field(0.3, gt=0)
    # None means 2e*log(p)/p, resolved once p is known
    c_p: Optional[float] = Field(None, gt=0, lt=1)
    sigma_mu: float = Field(1.0, gt=0)
    sigma_b: float = Field(1.0, gt=0)
    alpha0: float = Field(-1.0, lt=0)
    alpha1: float = Field(-5e-4, lt=0)
    H_init: Optional[int] = Field(None, ge=1)
    # diagonal of the factor covariance by column index; missing entries are 1
    psi: Optional[List[float]] = None
    mgp_a1: float = Field(2.1, gt=0)
    mgp_a2: float = Field(3.1, gt=0)
    mgp_nu: float = Field(3.0, gt=0)
    theta_inf: float = Field(0.05 ** 2, gt=0)

    @field_validator("psi")
    @classmethod
    def _positive_psi(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and any(not (x > 0) for x in v):
            raise ValueError("psi entries must be positive")
        return v

    @classmethod
    def for_application(cls, **overrides) -> "Hyperparameters":
        base = {"alpha": 4.0, "a_theta": 2.0, "b_theta": 2.0, "sigma_mu": 1.0, "sigma_b": 1.0, "alpha1": -2.5e-4}
        base.update(overrides)
        return cls(**base)

    @property
    def theta0(self) -> float:
        return self.b_theta / (self.a_theta - 1.0)

    def resolve_c_p(self, p: int) -> float:
        if self.c_p is not None:
            return self.c_p
        if p < 2:
            return 0.5
        value = 2.0 * math.e * math.log(p) / p
        return value if 0.0 < value < 1.0 else 0.5

    def resolve_H_init(self, p: int) -> int:
        if self.H_init is not None:
            return self.H_init
        return max(1, min(p, int(math.floor(5.0 * math.log(p))) if p > 1 else 1))

    def psi_diag(self, H: int) -> np.ndarray:
        out = np.ones(H)
        if self.psi:
            m = min(H, len(self.psi))
            out[:m] = self.psi[:m]
        return out


class ChainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_iterations: int = Field(25000, ge=1)
    burn_in: int = Field(10000, ge=0)
    thin: int = Field(5, ge=1)
    mode: Mode = "gaussian"
    family: Family = "sis"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    record_log_density: bool = True
    adapt: bool = True

    @model_validator(mode="after")
    def _burn_in_below_iterations(self) -> "ChainConfig":
        if self.burn_in >= self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        return self

    @classmethod
    def for_mode(cls, mode: Mode, **overrides) -> "ChainConfig":
        if mode == "probit":
            base = {"n_iterations": 40000, "burn_in": 20000, "thin": 5}
        else:
            base = {"n_iterations": 25000, "burn_in": 10000, "thin": 5}
        base["mode"] = mode
        base.update(overrides)
        return cls(**base)

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


class SummaryOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lpml_per_observation: bool = True
    pi_mode: Literal["sampled", "expected"] = "sampled"
    edge_threshold: float = Field(0.025, ge=0)
    n_mc: int = Field(512, ge=2)
    cv_folds: Optional[int] = Field(None, ge=2)
    truncation_H_grid: List[int] = Field(default_factory=lambda: [1, 2, 3, 5, 10])
    truncation_T_grid: List[float] = Field(default_factory=lambda: [0.5, 0.75, 0.9])

    @field_validator("n_mc")
    @classmethod
    def _even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("n_mc must be even (antithetic pairs)")
        return v


class ScenarioSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Literal["a", "b", "c", "d"] = "a"
    p: int = Field(16, ge=1)
    k: int = Field(4, ge=1)
    s: float = Field(1.0, gt=0, le=1)
    n: int = Field(250, ge=1)
    n_replicates: int = Field(25, ge=1)
    sigma2_lambda: float = Field(1.0, gt=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _dense_scenario_a(self) -> "ScenarioSpec":
        if self.scenario == "a" and self.s != 1.0:
            raise ValueError("scenario a is dense: s must be 1")
        if self.k > self.p:
            raise ValueError("k must not exceed p")
        return self


class PriorCheckOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    families: List[Family] = Field(default_factory=lambda: ["sis", "mgp", "cusp"])
    p: int = Field(10, ge=1)
    H: int = Field(10, ge=1)
    n_draws: int = Field(20000, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    H_grid: List[int] = Field(default_factory=lambda: list(range(2, 11)))
    T_grid: List[float] = Field(default_factory=lambda: [0.5, 0.75, 0.9])
    H_max: int = Field(100, ge=2)
    h_grid: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    epsilon_grid: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    support_p_grid: List[int] = Field(default_factory=lambda: [64, 128, 256, 512])
    support_epsilon: float = Field(0.05, gt=0)
    support_draws: int = Field(2000, ge=1)


class DataPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    y: Optional[str] = None
    x: Optional[str] = None
    w: Optional[str] = None
    chain: Optional[str] = None
    output: Optional[str] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    command: Command = "prior-check"
    paths: DataPaths = Field(default_factory=DataPaths)
    mode: Mode = "gaussian"
    x_categorical: List[str] = Field(default_factory=list)
    w_categorical: List[str] = Field(default_factory=list)
    standardize_x: bool = True
    standardize_w: bool = True
    add_intercept: bool = True
    w_intercept: bool = True
    hyper: Optional[Hyperparameters] = None
    chain: Optional[ChainConfig] = None
    summary: SummaryOptions = Field(default_factory=SummaryOptions)
    scenario: ScenarioSpec = Field(default_factory=ScenarioSpec)
    families: List[SimFamily] = Field(default_factory=lambda: ["sis"])
    prior_check: PriorCheckOptions = Field(default_factory=PriorCheckOptions)
    threads: Optional[int] = Field(None, ge=1)
    # overrides every seed below when set (the --seed flag)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)

    def resolved_hyper(self) -> Hyperparameters:
        """Probit fits start from the application defaults; fields set explicitly always win."""
        if self.mode != "probit":
            return self.hyper or Hyperparameters()
        if self.hyper is None:
            return Hyperparameters.for_application()
        return Hyperparameters.for_application(**self.hyper.model_dump(include=self.hyper.model_fields_set))

    def resolved_chain(self) -> ChainConfig:
        if self.chain is not None:
            explicit = self.chain.model_dump(include=self.chain.model_fields_set - {"mode"})
            cfg = ChainConfig.for_mode(self.mode, **explicit)
        else:
            cfg = ChainConfig.for_mode(self.mode)
        return cfg if self.seed is None else cfg.model_copy(update={"seed": self.seed})

    def resolved_scenario(self) -> ScenarioSpec:
        return self.scenario if self.seed is None else self.scenario.model_copy(update={"seed": self.seed})

    def resolved_prior_check(self) -> PriorCheckOptions:
        if self.seed is None:
            return self.prior_check
        return self.prior_check.model_copy(update={"seed": self.seed})


# ---------- Reports ----------

class Edge(BaseModel):
    node_i: str
    node_j: str
    partial_correlation: float


class SummaryReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    mode: Mode
    family: Family
    n_draws: int
    map_index: int
    map_iteration: int
    log_density_map: float
    lambda_map: List[List[float]]
    beta_map: List[List[float]]
    sigma_map: List[float]
    lpml: float
    lpml_normalization: Literal["per_observation", "total"]
    pi_mode: Literal["sampled", "expected"]
    e_h_active: float
    posterior_mean_correlation: List[List[float]]
    posterior_mean_partial_correlation: List[List[float]]
    edges: List[Edge]
    edge_threshold: float
    variance_explained_mean: float
    variance_explained_quantiles: Dict[str, float]
    truncation_probability: Dict[str, Dict[str, float]]
    cv_heldout_loglik: Optional[float] = None
    seconds_per_iteration: Optional[float] = None


class ShrinkageCheck(BaseModel):
    family: Family
    n_draws: int
    seed: int
    column_variances: List[float]
    column_variance_se: List[float]
    consecutive_ratios: List[float]
    weakly_decreasing: bool
    increasing_shrinkage: bool
    strong_property: Optional[bool] = None
    inconclusive: bool = False


class TruncationCheck(BaseModel):
    H_grid: List[int]
    T_grid: List[float]
    monte_carlo: List[List[float]]
    analytic_bound: List[List[float]]
    dominated: bool


class ConcentrationCheck(BaseModel):
    h_grid: List[int]
    epsilon_grid: List[float]
    empirical: List[List[float]]
    bound: List[List[float]]
    dominated: bool


class TailCheck(BaseModel):
    index: Optional[float]
    index_deep: Optional[float]
    n_tail: int
    power_law: bool
    inconclusive: bool


class SupportCheck(BaseModel):
    p_grid: List[int]
    epsilon: float
    mean_support: List[float]
    sublinear: bool


class ZeroProbabilities(BaseModel):
    lambda_zero: float
    phi_zero: float
    rho_zero: float
    ordered: bool


class PriorPropertyReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    seed: int
    p: int
    H: int
    c_p: float
    shrinkage: List[ShrinkageCheck]
    truncation: TruncationCheck
    concentration: ConcentrationCheck
    tail: TailCheck
    support: SupportCheck
    zero_probabilities: ZeroProbabilities
    variance_explained_quantiles: Dict[str, float]


class ReplicateMetrics(BaseModel):
    family: SimFamily
    replicate: int
    ok: bool = True
    error: Optional[str] = None
    lpml: Optional[float] = None
    covariance_mse: Optional[float] = None
    mce: Optional[float] = None
    mce_sensitivity: Dict[str, float] = Field(default_factory=dict)
    e_h_active: Optional[float] = None
    seconds_per_iteration: Optional[float] = None


class Aggregate(BaseModel):
    median: Optional[float]
    iqr: Optional[float]


class MetricsReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    family: SimFamily
    scenario: ScenarioSpec
    n_succeeded: int
    n_failed: int
    lpml_normalization: Literal["per_observation", "total"]
    covariance_mse_convention: str = "mean over retained draws and the p(p+1)/2 upper-triangle entries"
    mce_threshold: float
    replicates: List[ReplicateMetrics]
    aggregates: Dict[str, Aggregate]
