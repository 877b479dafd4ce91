"""Point-wise and cumulative causal impact with credible intervals.

The per-day impact is (observed - counterfactual) / baseline, where the
baseline is the pre-disaster mean daily visits; its unit is therefore
"business-as-usual days worth of customers per day", and the running sum
counts total business-as-usual days gained or lost since the shock.

Quantiles of cumulative quantities are always taken over per-draw running
sums, never by summing day-wise quantiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsts.posterior import PredictiveDraws
from .errors import ImpactorError
from .panel import StudyWindows, VisitSeries

QUANTILES = (0.05, 0.5, 0.95)
BAND_95 = (0.025, 0.975)


@dataclass
class ImpactSeries:
    """Per-day normalized impact over the window (shock_day, total_days)."""

    entity_id: str
    days: np.ndarray  # day indices, shock_day+1 .. total_days-1
    mean: np.ndarray  # NaN on unobserved days
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    baseline_mean: float
    draws: np.ndarray = field(repr=False)  # (n_draws, n_days), NaN columns when missing

    def __len__(self) -> int:
        return len(self.days)


@dataclass
class CumulativeImpact:
    """Running totals of the per-day impact, with per-draw quantiles."""

    entity_id: str
    days: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    q025: np.ndarray
    q975: np.ndarray
    terminal: float
    gap_days: int
    window: tuple[int, int]
    draws: np.ndarray = field(repr=False)  # per-draw running sums

    def at_day(self, day: int) -> dict:
        idx = np.searchsorted(self.days, day)
        if idx >= len(self.days) or self.days[idx] != day:
            raise ImpactorError(f"day {day} not in cumulative impact window {self.window}")
        return {
            "day": int(day),
            "mean": float(self.mean[idx]),
            "q05": float(self.q05[idx]),
            "q50": float(self.q50[idx]),
            "q95": float(self.q95[idx]),
        }


@dataclass
class EconomicLoss:
    entity_id: str
    mean: float
    q05: float
    q50: float
    q95: float
    avg_spend: float


def pointwise_impact(
    y_obs: VisitSeries,
    draws: PredictiveDraws,
    baseline_mean: float,
    windows: StudyWindows,
    include_shock_day: bool = False,
) -> ImpactSeries:
    """Per-day impact (observed - counterfactual) / baseline over draws.

    Days with missing observations yield NaN columns. ``include_shock_day``
    starts the window at the landfall day itself instead of the day after.
    """
    if baseline_mean <= 0:
        raise ImpactorError(f"baseline mean must be positive, got {baseline_mean}")
    start = windows.shock_day if include_shock_day else windows.shock_day + 1
    if start < draws.start_day:
        raise ImpactorError(
            f"predictive draws start at day {draws.start_day}, after impact window start {start}"
        )
    counterfactual = draws.slice_days(start, windows.total_days)
    days = np.arange(start, windows.total_days)
    observed = np.asarray(y_obs.values, dtype=float)[start : windows.total_days]

    phi = (observed[None, :] - counterfactual) / baseline_mean
    mean = phi.mean(axis=0)
    q05, q50, q95 = (np.quantile(phi, q, axis=0) for q in QUANTILES)
    missing = np.isnan(observed)
    for arr in (mean, q05, q50, q95):
        arr[missing] = np.nan
    return ImpactSeries(
        entity_id=y_obs.entity_id,
        days=days,
        mean=mean,
        q05=q05,
        q50=q50,
        q95=q95,
        baseline_mean=float(baseline_mean),
        draws=phi,
    )


def cumulative_impact(impact: ImpactSeries) -> CumulativeImpact:
    """Running per-draw sums of the point-wise impact.

    Missing days contribute zero and are counted in ``gap_days``.
    """
    if len(impact) == 0:
        raise ImpactorError("empty impact series")
    filled = np.nan_to_num(impact.draws, nan=0.0)
    running = np.cumsum(filled, axis=1)
    missing = np.isnan(impact.draws[0])
    return CumulativeImpact(
        entity_id=impact.entity_id,
        days=impact.days.copy(),
        mean=running.mean(axis=0),
        q05=np.quantile(running, 0.05, axis=0),
        q50=np.quantile(running, 0.5, axis=0),
        q95=np.quantile(running, 0.95, axis=0),
        q025=np.quantile(running, BAND_95[0], axis=0),
        q975=np.quantile(running, BAND_95[1], axis=0),
        terminal=float(running[:, -1].mean()),
        gap_days=int(missing.sum()),
        window=(int(impact.days[0]), int(impact.days[-1]) + 1),
        draws=running,
    )


def economic_loss(
    cum: CumulativeImpact, avg_spend: float, baseline_mean: float
) -> EconomicLoss:
    """Convert terminal cumulative impact to currency.

    impact [business-as-usual days] x baseline [customers/day] x
    avg_spend [currency/customer].
    """
    if avg_spend <= 0:
        raise ImpactorError(f"avg_spend must be positive, got {avg_spend}")
    if baseline_mean <= 0:
        raise ImpactorError(f"baseline mean must be positive, got {baseline_mean}")
    factor = avg_spend * baseline_mean
    terminal_draws = cum.draws[:, -1]
    return EconomicLoss(
        entity_id=cum.entity_id,
        mean=float(terminal_draws.mean() * factor),
        q05=float(np.quantile(terminal_draws, 0.05) * factor),
        q50=float(np.quantile(terminal_draws, 0.5) * factor),
        q95=float(np.quantile(terminal_draws, 0.95) * factor),
        avg_spend=float(avg_spend),
    )
