"""Model specification for the structural time series fit.

The observation model is ``y_t = level_t + seasonal_t + coef * x_t + noise``
with a random-walk level and an S-1-lag sum-to-zero weekly seasonal
component. Training data (and the covariate, when present) are standardized
by training-window statistics so the weakly-informative priors are
comparable across entities whose scales span orders of magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ModelSpecError
from ..panel import StudyWindows, VisitSeries
from . import kernels


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations_per_chain: int = 2000
    warmup: int = 1000
    seed: int = 0
    max_tree_depth: int = 10
    target_accept: float = 0.8
    retries: int = 1
    require_convergence: bool = True

    def __post_init__(self):
        if self.chains < 2:
            raise ModelSpecError("need >= 2 chains for split convergence diagnostics")
        if not (0 < self.warmup < self.iterations_per_chain):
            raise ModelSpecError(
                f"warmup ({self.warmup}) must be positive and below "
                f"iterations_per_chain ({self.iterations_per_chain})"
            )

    @property
    def keep_per_chain(self) -> int:
        return self.iterations_per_chain - self.warmup


@dataclass(frozen=True)
class BstsConfig:
    season_length: int = 7
    prior_scale: float = 2.5
    coef_prior_scale: float = 2.5
    standardize: bool = True
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if self.season_length < 2:
            raise ModelSpecError("season_length must be >= 2")
        if self.prior_scale <= 0 or self.coef_prior_scale <= 0:
            raise ModelSpecError("prior scales must be positive")


# Index map for the scalar block of the parameter vector.
SCALAR_NAMES = (
    "obs_scale",
    "level_scale",
    "season_scale",
    "level_init_mean",
    "level_init_scale",
    "season_init_mean",
    "season_init_scale",
)
LOG_SCALE_SLOTS = (0, 1, 2, 4, 6)


@dataclass
class ModelSpec:
    """Standardized training slice plus everything the sampler needs."""

    y_train: np.ndarray  # standardized, NaN where missing, length train_end
    x_train: np.ndarray | None  # standardized covariate over the training window
    config: BstsConfig
    train_end: int
    total_days: int
    y_center: float
    y_scale: float
    x_center: float = 0.0
    x_scale: float = 1.0
    entity_id: str = ""

    @property
    def has_covariate(self) -> bool:
        return self.x_train is not None

    @property
    def n_observed(self) -> int:
        return int((~np.isnan(self.y_train)).sum())

    @property
    def n_params(self) -> int:
        # scalars + (n-1) level innovations + n seasonal states/innovations;
        # the initial level is marginalized analytically, not sampled
        return 7 + int(self.has_covariate) + 2 * self.train_end - 1

    @property
    def observed_mask(self) -> np.ndarray:
        return ~np.isnan(self.y_train)

    def destandardize_y(self, values: np.ndarray) -> np.ndarray:
        return self.y_center + self.y_scale * np.asarray(values)

    def standardize_x(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.x_center) / self.x_scale

    def pack(self):
        """Flatten training data into the kernel layout."""
        n = self.train_end
        pack_f = np.zeros(2 * n + 2)
        pack_f[:n] = np.nan_to_num(self.y_train, nan=0.0)
        if self.has_covariate:
            pack_f[n : 2 * n] = self.x_train
        pack_f[2 * n] = self.config.prior_scale
        pack_f[2 * n + 1] = self.config.coef_prior_scale
        pack_i = np.zeros(3 + n, dtype=np.int64)
        pack_i[0] = n
        pack_i[1] = self.config.season_length
        pack_i[2] = 1 if self.has_covariate else 0
        pack_i[3:] = self.observed_mask.astype(np.int64)
        return pack_f, pack_i


def build_model(
    y: VisitSeries,
    x: np.ndarray | None,
    windows: StudyWindows,
    config: BstsConfig | None = None,
) -> ModelSpec:
    """Build a model spec over the training window [0, train_end).

    ``x``, when given, must cover the full calendar [0, total_days) with no
    missing values so the fitted model can predict through the horizon.
    """
    config = config or BstsConfig()
    n = windows.train_end
    y_vals = np.asarray(y.values, dtype=float)
    if len(y_vals) != windows.total_days:
        raise ModelSpecError(
            f"series length {len(y_vals)} does not match calendar {windows.total_days}"
        )
    y_train = y_vals[:n].copy()
    present = ~np.isnan(y_train)
    if present.sum() < 4 * config.season_length:
        raise ModelSpecError(
            f"entity {y.entity_id!r}: {int(present.sum())} observed training days; "
            f"need at least {4 * config.season_length}"
        )

    x_train = None
    x_center, x_scale = 0.0, 1.0
    if x is not None:
        x = np.asarray(x, dtype=float)
        if len(x) < windows.total_days:
            raise ModelSpecError(
                f"covariate length {len(x)} shorter than calendar {windows.total_days}; "
                "it must cover the prediction horizon"
            )
        if np.isnan(x[: windows.total_days]).any():
            raise ModelSpecError("covariate contains missing values on [0, total_days)")
        x_train = x[:n].astype(float)

    y_center, y_scale = 0.0, 1.0
    if config.standardize:
        y_center = float(y_train[present].mean())
        sd = float(y_train[present].std())
        y_scale = sd if sd > 0 else 1.0
        y_train = (y_train - y_center) / y_scale
        if x_train is not None:
            x_center = float(x_train.mean())
            x_sd = float(x_train.std())
            if x_sd == 0:
                raise ModelSpecError("covariate is constant on the training window")
            x_scale = x_sd
            x_train = (x_train - x_center) / x_scale
    elif x_train is not None and float(x_train.std()) == 0:
        raise ModelSpecError("covariate is constant on the training window")

    return ModelSpec(
        y_train=y_train,
        x_train=x_train,
        config=config,
        train_end=n,
        total_days=windows.total_days,
        y_center=y_center,
        y_scale=y_scale,
        x_center=x_center,
        x_scale=x_scale,
        entity_id=y.entity_id,
    )


def _check_theta(spec: ModelSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ModelSpecError(
            f"parameter vector has shape {theta.shape}, expected ({spec.n_params},)"
        )
    return theta


def log_posterior(spec: ModelSpec, theta: np.ndarray):
    """Joint log density (likelihood x priors) and its exact gradient.

    ``theta`` follows the layout documented in :mod:`impactor.bsts.kernels`;
    scale parameters enter on the log scale (Jacobians included).
    """
    theta = _check_theta(spec, theta)
    pack_f, pack_i = spec.pack()
    grad = np.zeros_like(theta)
    scratch = np.zeros(kernels.scratch_size(kernels.KIND_BSTS, pack_i))
    value = kernels.logp_grad(kernels.KIND_BSTS, theta, pack_f, pack_i, grad, scratch)
    return float(value), grad


def log_likelihood(spec: ModelSpec, theta: np.ndarray) -> float:
    """Observation log-likelihood of the training data only (no priors)."""
    theta = _check_theta(spec, theta)
    pack_f, pack_i = spec.pack()
    grad = np.zeros_like(theta)
    scratch = np.zeros(kernels.scratch_size(kernels.KIND_BSTS, pack_i))
    return float(kernels.bsts_loglik(theta, pack_f, pack_i, grad, scratch))


def state_paths(spec: ModelSpec, theta: np.ndarray):
    """Relative level path (level_t - level_0) and seasonal path."""
    theta = _check_theta(spec, theta)
    _, pack_i = spec.pack()
    level_rel = np.zeros(spec.train_end)
    seas = np.zeros(spec.train_end)
    kernels.bsts_states(theta, pack_i, level_rel, seas)
    return level_rel, seas


def theta_from_values(
    spec: ModelSpec,
    *,
    obs_scale: float,
    level_scale: float,
    season_scale: float,
    level_init_mean: float = 0.0,
    level_init_scale: float = 1.0,
    season_init_mean: float = 0.0,
    season_init_scale: float = 1.0,
    coef: float | None = None,
    level: np.ndarray | None = None,
    seasonal: np.ndarray | None = None,
) -> np.ndarray:
    """Assemble a parameter vector from natural-scale values.

    ``level``/``seasonal`` are state paths on the sampled (standardized)
    scale; the level path enters through its increments only (the initial
    level is marginalized, so ``level[0]`` does not appear in the vector).
    Handy for tests and for seeding deterministic posteriors.
    """
    n = spec.train_end
    s_len = spec.config.season_length
    theta = np.zeros(spec.n_params)
    theta[0] = np.log(obs_scale)
    theta[1] = np.log(level_scale)
    theta[2] = np.log(season_scale)
    theta[3] = level_init_mean
    theta[4] = np.log(level_init_scale)
    theta[5] = season_init_mean
    theta[6] = np.log(season_init_scale)
    off = 7
    if spec.has_covariate:
        if coef is None:
            raise ModelSpecError("spec has a covariate; pass coef=")
        theta[7] = coef
        off = 8
    soff = off + n - 1
    if level is not None:
        level = np.asarray(level, dtype=float)
        theta[off : off + n - 1] = np.diff(level) / level_scale
    if seasonal is not None:
        seasonal = np.asarray(seasonal, dtype=float)
        theta[soff : soff + s_len - 1] = seasonal[: s_len - 1]
        for t in range(s_len - 1, n):
            expected = -seasonal[t - s_len + 1 : t].sum()
            theta[soff + t] = (seasonal[t] - expected) / season_scale
    return theta
