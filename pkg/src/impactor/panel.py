"""Panel ingestion, validation and filtering for daily visit-count series.

The panel calendar is integer day indices (day 0 = first observed date);
an optional epoch date in the run config converts indices to dates for
reports. Missing days are first-class and distinct from zero counts: they
are represented as NaN in each series' value array.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import PanelFormatError

# Canonical business categories (fixed index order used by the effects model).
CATEGORIES = (
    "building_material",
    "gasoline_stations",
    "grocery_stores",
    "hospitals",
    "hotels",
    "restaurants",
    "supermarkets",
    "telecommunication",
    "universities",
)
CATEGORY_INDEX = {c: i for i, c in enumerate(CATEGORIES)}

# Canonical regions of the treated panel (fixed index order).
TREATED_REGIONS = ("san_juan", "metro", "rural")
REGION_INDEX = {r: i for i, r in enumerate(TREATED_REGIONS)}

_ALNUM = re.compile(r"[^a-z0-9]+")


def _key(label: str) -> str:
    return _ALNUM.sub("", str(label).lower())


_CATEGORY_BY_KEY = {_key(c): c for c in CATEGORIES}
_REGION_BY_KEY = {_key(r): r for r in TREATED_REGIONS}


def normalize_category(label: str) -> str:
    """Map a free-form category label onto its canonical form.

    Matching is case- and punctuation-insensitive ("Building Material",
    "building_material" and "BUILDING-MATERIAL" all normalize identically).
    """
    key = _key(label)
    if key not in _CATEGORY_BY_KEY:
        raise PanelFormatError(
            f"unknown category label {label!r}; expected one of {', '.join(CATEGORIES)}"
        )
    return _CATEGORY_BY_KEY[key]


def normalize_region(label: str, treated: bool) -> str:
    key = _key(label)
    if key in _REGION_BY_KEY:
        return _REGION_BY_KEY[key]
    if treated:
        raise PanelFormatError(
            f"unknown region label {label!r} for treated panel; "
            f"expected one of {', '.join(TREATED_REGIONS)}"
        )
    return key


@dataclass(frozen=True)
class StudyWindows:
    """Study calendar boundaries, all as day indices from the panel epoch.

    ``train_end`` is the exclusive end of the pre-disaster training window,
    ``shock_day`` the landfall day of the primary shock, ``total_days`` the
    panel length. The impact window is (shock_day, total_days).
    """

    train_end: int = 150
    shock_day: int = 262
    total_days: int = 400
    secondary_shock_day: int | None = 248

    def __post_init__(self):
        if not (0 < self.train_end <= self.shock_day < self.total_days):
            raise PanelFormatError(
                f"invalid study windows: need 0 < train_end <= shock_day < total_days, "
                f"got ({self.train_end}, {self.shock_day}, {self.total_days})"
            )

    @property
    def horizon(self) -> int:
        """Number of predicted days, train_end..total_days."""
        return self.total_days - self.train_end


@dataclass
class VisitSeries:
    """One entity's daily counts; NaN marks a missing day."""

    entity_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class BusinessMeta:
    entity_id: str
    category: str
    region: str
    brand: str
    county_id: str
    damage_rate: float


@dataclass
class Panel:
    """Series plus metadata sharing one calendar. Read-only after load."""

    series: dict[str, VisitSeries]
    meta: dict[str, BusinessMeta]
    windows: StudyWindows
    role: str = "treated"

    def __post_init__(self):
        if set(self.series) != set(self.meta):
            missing = set(self.series) ^ set(self.meta)
            raise PanelFormatError(
                f"series/meta entity sets differ (symmetric difference: {sorted(missing)[:5]}...)"
            )
        for eid, s in self.series.items():
            if len(s) != self.windows.total_days:
                raise PanelFormatError(
                    f"series {eid!r} has length {len(s)}, calendar expects {self.windows.total_days}"
                )

    @property
    def entity_ids(self) -> list[str]:
        return sorted(self.series)

    def __len__(self) -> int:
        return len(self.series)

    def subset(self, entity_ids) -> "Panel":
        ids = list(entity_ids)
        return Panel(
            series={e: self.series[e] for e in ids},
            meta={e: self.meta[e] for e in ids},
            windows=self.windows,
            role=self.role,
        )

    def entities_in_category(self, category: str) -> list[str]:
        cat = normalize_category(category)
        return sorted(e for e, m in self.meta.items() if m.category == cat)

    def entities_with_brand(self, brand: str) -> list[str]:
        return sorted(e for e, m in self.meta.items() if m.brand and m.brand == brand)

    def regions(self) -> list[str]:
        return sorted({m.region for m in self.meta.values()})


def load_panel(visits_path, meta_path, windows: StudyWindows, role: str = "treated") -> Panel:
    """Load and validate a panel from the visits.csv / meta.csv pair.

    Every entity referenced in either file must appear in both; rows are
    validated individually and errors name the offending file line.
    """
    treated = role == "treated"

    try:
        visits_df = pd.read_csv(visits_path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise PanelFormatError(f"{visits_path}: cannot parse CSV: {exc}") from exc
    _require_columns(visits_path, visits_df, ["entity_id", "day", "visits"])

    values: dict[str, np.ndarray] = {}
    seen: set[tuple[str, int]] = set()
    for i, row in enumerate(visits_df.itertuples(index=False)):
        line = i + 2  # header is line 1
        eid = row.entity_id.strip()
        if not eid:
            raise PanelFormatError(f"{visits_path} line {line}: empty entity_id")
        day = _parse_int(visits_path, line, "day", row.day)
        if not (0 <= day < windows.total_days):
            raise PanelFormatError(
                f"{visits_path} line {line}: day {day} outside calendar [0, {windows.total_days})"
            )
        count = _parse_int(visits_path, line, "visits", row.visits)
        if count < 0:
            raise PanelFormatError(
                f"{visits_path} line {line}: visits must be >= 0, got {count}"
            )
        if (eid, day) in seen:
            raise PanelFormatError(
                f"{visits_path} line {line}: duplicate (entity_id, day) = ({eid}, {day})"
            )
        seen.add((eid, day))
        if eid not in values:
            values[eid] = np.full(windows.total_days, np.nan)
        values[eid][day] = float(count)

    try:
        meta_df = pd.read_csv(meta_path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise PanelFormatError(f"{meta_path}: cannot parse CSV: {exc}") from exc
    _require_columns(
        meta_path, meta_df, ["entity_id", "category", "region", "brand", "county_id", "damage_rate"]
    )

    meta: dict[str, BusinessMeta] = {}
    for i, row in enumerate(meta_df.itertuples(index=False)):
        line = i + 2
        eid = row.entity_id.strip()
        if eid in meta:
            raise PanelFormatError(f"{meta_path} line {line}: duplicate entity_id {eid!r}")
        if eid not in values:
            raise PanelFormatError(
                f"{meta_path} line {line}: entity {eid!r} has metadata but no visit rows"
            )
        try:
            category = normalize_category(row.category)
            region = normalize_region(row.region, treated=treated)
        except PanelFormatError as exc:
            raise PanelFormatError(f"{meta_path} line {line}: {exc}") from exc
        rate = _parse_float(meta_path, line, "damage_rate", row.damage_rate)
        if not (0.0 <= rate <= 1.0) or math.isnan(rate):
            raise PanelFormatError(
                f"{meta_path} line {line}: damage_rate must lie in [0, 1], got {rate}"
            )
        meta[eid] = BusinessMeta(
            entity_id=eid,
            category=category,
            region=region,
            brand=row.brand.strip(),
            county_id=row.county_id.strip(),
            damage_rate=rate,
        )

    orphans = sorted(set(values) - set(meta))
    if orphans:
        raise PanelFormatError(
            f"{visits_path}: entities without metadata: {orphans[:5]}"
            + ("..." if len(orphans) > 5 else "")
        )

    series = {eid: VisitSeries(eid, vals) for eid, vals in values.items()}
    return Panel(series=series, meta=meta, windows=windows, role=role)


def save_panel(panel: Panel, visits_path, meta_path) -> None:
    """Write a panel back to the CSV pair (inverse of load_panel)."""
    vrows = []
    for eid in panel.entity_ids:
        vals = panel.series[eid].values
        for day in range(len(vals)):
            if not np.isnan(vals[day]):
                vrows.append((eid, day, int(vals[day])))
    pd.DataFrame(vrows, columns=["entity_id", "day", "visits"]).to_csv(visits_path, index=False)

    mrows = []
    for eid in panel.entity_ids:
        m = panel.meta[eid]
        mrows.append((eid, m.category, m.region, m.brand, m.county_id, repr(m.damage_rate)))
    pd.DataFrame(
        mrows, columns=["entity_id", "category", "region", "brand", "county_id", "damage_rate"]
    ).to_csv(meta_path, index=False)


def pre_disaster_mean(series: VisitSeries, windows: StudyWindows) -> float:
    """Mean of the present values over the training window [0, train_end)."""
    head = series.values[: windows.train_end]
    present = ~np.isnan(head)
    if not present.any():
        raise PanelFormatError(
            f"entity {series.entity_id!r}: no observed days in training window "
            f"[0, {windows.train_end})"
        )
    return float(head[present].mean())


def filter_eligible(panel: Panel, min_mean: float = 100.0) -> Panel:
    """Keep entities whose pre-disaster mean strictly exceeds ``min_mean``."""
    keep = [
        eid
        for eid in panel.entity_ids
        if pre_disaster_mean(panel.series[eid], panel.windows) > min_mean
    ]
    return panel.subset(keep)


def _require_columns(path, df, cols):
    if list(df.columns) != cols:
        raise PanelFormatError(
            f"{path}: expected header {','.join(cols)}, got {','.join(map(str, df.columns))}"
        )


def _parse_int(path, line, name, raw):
    try:
        val = int(str(raw).strip())
    except ValueError:
        raise PanelFormatError(f"{path} line {line}: {name} must be an integer, got {raw!r}")
    return val


def _parse_float(path, line, name, raw):
    try:
        return float(str(raw).strip())
    except ValueError:
        raise PanelFormatError(f"{path} line {line}: {name} must be a number, got {raw!r}")
