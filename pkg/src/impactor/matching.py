"""Covariate selection: none, brand/category average, or best-correlated control.

All correlation matching happens on the training window only; post-shock
data never influences the choice (using it would leak treatment into the
counterfactual).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MatchingError
from .panel import Panel, StudyWindows, VisitSeries

STRATEGY_NONE = "none"
STRATEGY_CATEGORY = "category"
STRATEGY_SPECIFIC = "specific"
STRATEGIES = (STRATEGY_NONE, STRATEGY_CATEGORY, STRATEGY_SPECIFIC)


@dataclass
class CovariateChoice:
    strategy: str
    source: str | None = None  # entity_id, brand or category label
    series: np.ndarray | None = None  # length total_days
    pearson_r: float | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise MatchingError(f"unknown strategy {self.strategy!r}")
        if (self.series is None) != (self.strategy == STRATEGY_NONE):
            raise MatchingError("series must be present iff a covariate strategy is used")


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation over indices present in both series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise MatchingError(f"length mismatch: {a.shape} vs {b.shape}")
    joint = ~(np.isnan(a) | np.isnan(b))
    if joint.sum() < 2:
        raise MatchingError("fewer than 2 jointly observed values")
    av = a[joint] - a[joint].mean()
    bv = b[joint] - b[joint].mean()
    denom = np.sqrt((av * av).sum() * (bv * bv).sum())
    if denom == 0.0:
        raise MatchingError("degenerate (constant) input series")
    return float((av * bv).sum() / denom)


def category_average(control: Panel, key: str, windows: StudyWindows) -> np.ndarray:
    """Per-day mean of all control entities matching a brand or category key.

    Brand keys are tried first; a key matching no brand is interpreted as a
    category label. Days missing in every matching entity stay missing.
    """
    ids = control.entities_with_brand(key)
    if not ids:
        ids = control.entities_in_category(key)
    if not ids:
        raise MatchingError(f"no control entity matches brand or category {key!r}")
    stacked = np.vstack([control.series[e].values for e in ids])
    present = ~np.isnan(stacked)
    counts = present.sum(axis=0)
    sums = np.nansum(stacked, axis=0)
    out = np.full(windows.total_days, np.nan)
    has = counts > 0
    out[has] = sums[has] / counts[has]
    return out


def best_match(
    target: VisitSeries, control: Panel, category: str, windows: StudyWindows
) -> CovariateChoice:
    """Control entity of the same category with the highest training-window
    Pearson correlation to the target; ties break to the smallest entity_id.

    Zero-variance candidates are skipped; candidates sharing fewer than two
    observed training days with the target likewise.
    """
    n = windows.train_end
    target_train = target.values[:n]
    best_id, best_r = None, -np.inf
    for eid in control.entities_in_category(category):
        try:
            r = pearson(target_train, control.series[eid].values[:n])
        except MatchingError:
            continue
        if r > best_r:
            best_id, best_r = eid, r
    if best_id is None:
        raise MatchingError(
            f"no usable control candidate in category {category!r} for {target.entity_id!r}"
        )
    return CovariateChoice(
        strategy=STRATEGY_SPECIFIC,
        source=best_id,
        series=control.series[best_id].values.copy(),
        pearson_r=best_r,
    )


def choose_covariate(
    strategy: str,
    target: VisitSeries,
    control: Panel,
    windows: StudyWindows,
    category: str,
    brand: str = "",
) -> CovariateChoice:
    """Build the covariate for one target series under a named strategy."""
    if strategy == STRATEGY_NONE:
        return CovariateChoice(strategy=STRATEGY_NONE)
    if strategy == STRATEGY_CATEGORY:
        key = brand if (brand and control.entities_with_brand(brand)) else category
        series = category_average(control, key, windows)
        return CovariateChoice(strategy=STRATEGY_CATEGORY, source=key, series=series)
    if strategy == STRATEGY_SPECIFIC:
        return best_match(target, control, category, windows)
    raise MatchingError(f"unknown strategy {strategy!r}")
