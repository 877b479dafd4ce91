"""Posterior containers, forward simulation, and serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..errors import ModelSpecError
from ..rng import generator
from .model import ModelSpec

SCALAR_ORDER = (
    "obs_scale",
    "level_scale",
    "season_scale",
    "level_init_mean",
    "level_init_scale",
    "season_init_mean",
    "season_init_scale",
    "covariate_coef",
)


@dataclass
class Posterior:
    """Retained draws of one fitted model, per chain, on the sampled scale.

    Scalars live in ``params`` as (chains, draws) arrays; state paths in
    ``level`` / ``seasonal`` as (chains, draws, train_end). Standardization
    constants are kept so every quantity can be mapped back to the data
    scale (``natural=True`` accessors).
    """

    params: dict[str, np.ndarray]
    level: np.ndarray
    seasonal: np.ndarray
    spec: ModelSpec
    seed: int
    divergences: int = 0
    sampler_info: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return next(iter(self.params.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.params.values())).shape[1]

    @property
    def total_draws(self) -> int:
        return self.n_chains * self.n_draws

    def param_draws(self, name: str, natural: bool = False) -> np.ndarray:
        draws = self.params[name]
        if not natural:
            return draws
        s = self.spec
        if name in ("obs_scale", "level_scale", "season_scale", "level_init_scale",
                    "season_init_scale", "season_init_mean"):
            return draws * s.y_scale
        if name == "level_init_mean":
            return s.y_center + s.y_scale * draws
        if name == "covariate_coef":
            return draws * s.y_scale / s.x_scale
        return draws

    def state_draws(self, which: str, natural: bool = False) -> np.ndarray:
        states = self.level if which == "level" else self.seasonal
        if not natural:
            return states
        if which == "level":
            return self.spec.y_center + self.spec.y_scale * states
        return self.spec.y_scale * states

    def flat(self, name: str, natural: bool = False) -> np.ndarray:
        """Draws merged across chains in chain order."""
        return self.param_draws(name, natural).reshape(-1)

    def named_draws(self) -> dict[str, np.ndarray]:
        """Every scalar quantity (params and states) as (chains, draws)."""
        out = dict(self.params)
        for t in range(self.level.shape[2]):
            out[f"level[{t}]"] = self.level[:, :, t]
        for t in range(self.seasonal.shape[2]):
            out[f"seasonal[{t}]"] = self.seasonal[:, :, t]
        return out

    def in_sample_mean(self, natural: bool = True) -> np.ndarray:
        """Posterior mean of the noiseless signal over the training window."""
        signal = self.level + self.seasonal
        if self.spec.has_covariate:
            coef = self.params["covariate_coef"][:, :, None]
            signal = signal + coef * self.spec.x_train[None, None, :]
        mean = signal.mean(axis=(0, 1))
        return self.spec.destandardize_y(mean) if natural else mean

    def to_frame(self, include_states: bool = False) -> pd.DataFrame:
        """Long-format draws: one row per (chain, draw, parameter)."""
        quantities = dict(self.params)
        if include_states:
            quantities = self.named_draws()
        rows = []
        for name, arr in quantities.items():
            c, k = arr.shape
            rows.append(
                pd.DataFrame(
                    {
                        "chain": np.repeat(np.arange(c), k),
                        "draw": np.tile(np.arange(k), c),
                        "parameter": name,
                        "value": arr.reshape(-1),
                    }
                )
            )
        return pd.concat(rows, ignore_index=True)

    def save_draws(self, path, include_states: bool = False) -> None:
        self.to_frame(include_states=include_states).to_csv(path, index=False)

    def summary(self, diagnostics=None) -> dict:
        """Per-parameter summary statistics (natural scale), JSON-friendly."""
        qs = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)
        out = {}
        diag = diagnostics.as_dict() if diagnostics is not None else {}
        for name in self.params:
            draws = self.param_draws(name, natural=True).reshape(-1)
            entry = {
                "mean": float(draws.mean()),
                "sd": float(draws.std(ddof=1)),
                "quantiles": {str(q): float(np.quantile(draws, q)) for q in qs},
            }
            if name in diag:
                entry.update(diag[name])
            out[name] = entry
        return out

    def save_summary(self, path, diagnostics=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(diagnostics), fh, indent=2, sort_keys=True)


@dataclass
class PredictiveDraws:
    """Counterfactual forecast draws on the data scale.

    ``values`` has shape (total_draws, horizon) covering day indices
    ``start_day .. start_day + horizon - 1``.
    """

    values: np.ndarray
    start_day: int

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def quantile(self, q) -> np.ndarray:
        return np.quantile(self.values, q, axis=0)

    def slice_days(self, first_day: int, last_day: int) -> np.ndarray:
        """Draws for day indices [first_day, last_day)."""
        lo = first_day - self.start_day
        hi = last_day - self.start_day
        if lo < 0 or hi > self.horizon:
            raise ModelSpecError(
                f"requested days [{first_day}, {last_day}) outside predictive range "
                f"[{self.start_day}, {self.start_day + self.horizon})"
            )
        return self.values[:, lo:hi]


def posterior_predict(
    posterior: Posterior,
    spec: ModelSpec,
    x_future: np.ndarray | None = None,
    horizon: int | None = None,
    include_obs_noise: bool = True,
    seed=None,
) -> PredictiveDraws:
    """Simulate counterfactual trajectories for days [train_end, train_end+horizon).

    Each retained draw is continued forward from its final training states
    through the level and seasonal recursions, adding the covariate term and
    observation noise, then de-standardized. Conditions only on pre-period
    data (the draws themselves were fit on [0, train_end)).
    """
    n = spec.train_end
    horizon = horizon if horizon is not None else spec.total_days - n
    if horizon <= 0:
        raise ModelSpecError("prediction horizon must be positive")

    if spec.has_covariate:
        if x_future is None:
            raise ModelSpecError("model has a covariate; x_future is required")
        x_future = np.asarray(x_future, dtype=float)
        if len(x_future) < horizon:
            raise ModelSpecError(
                f"x_future has {len(x_future)} values; horizon needs {horizon}"
            )
        if np.isnan(x_future[:horizon]).any():
            raise ModelSpecError("x_future contains missing values")
        x_std = spec.standardize_x(x_future[:horizon])
    elif x_future is not None:
        raise ModelSpecError("model has no covariate but x_future was given")

    s_len = spec.config.season_length
    total = posterior.total_draws

    level = posterior.level[:, :, n - 1].reshape(total).copy()
    seas_window = (
        posterior.seasonal[:, :, n - s_len + 1 : n].reshape(total, s_len - 1).copy()
    )
    obs_scale = posterior.flat("obs_scale")
    level_scale = posterior.flat("level_scale")
    season_scale = posterior.flat("season_scale")
    coef = posterior.flat("covariate_coef") if spec.has_covariate else None

    rng = generator(posterior.seed if seed is None else seed, "predict", n, horizon)
    out = np.empty((total, horizon))
    for h in range(horizon):
        level = level + level_scale * rng.standard_normal(total)
        seas = -seas_window.sum(axis=1) + season_scale * rng.standard_normal(total)
        seas_window[:, :-1] = seas_window[:, 1:]
        seas_window[:, -1] = seas
        y = level + seas
        if coef is not None:
            y = y + coef * x_std[h]
        if include_obs_noise:
            y = y + obs_scale * rng.standard_normal(total)
        out[:, h] = y

    return PredictiveDraws(values=spec.destandardize_y(out), start_day=n)
