"""Hierarchical effects model for cumulative impacts.

Explains per-entity cumulative impact with exogenous features (intercept,
pre-disaster mean visits, county housing-damage rate) plus region and
category random effects drawn from zero-mean shared distributions. Fit with
the same gradient sampler as the time-series model; region and category
effects are non-centered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd

from .bsts import diagnostics as diag_mod
from .bsts import kernels, nuts
from .bsts.diagnostics import Diagnostics
from .bsts.model import SamplerConfig
from .errors import ImpactorError, NonConvergenceError
from .panel import CATEGORIES, CATEGORY_INDEX, REGION_INDEX, TREATED_REGIONS, Panel
from .rng import derive_seed

log = logging.getLogger(__name__)

FEATURE_NAMES = ("intercept", "pre_mean_visits", "damage_rate")


@dataclass
class HbmData:
    """Design matrix and group indices, rows ordered by entity_id."""

    entity_ids: list[str]
    outcome: np.ndarray  # cumulative impact per entity
    features: np.ndarray  # standardized columns, intercept first
    region_idx: np.ndarray
    category_idx: np.ndarray
    feature_names: tuple = FEATURE_NAMES
    feature_center: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    n_regions: int = len(TREATED_REGIONS)
    n_categories: int = len(CATEGORIES)

    @property
    def n_entities(self) -> int:
        return len(self.outcome)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def pack(self):
        ne, p = self.features.shape
        pack_f = np.concatenate(
            [self.outcome, self.features.reshape(-1), [2.5]]
        )
        pack_i = np.concatenate(
            [
                [ne, p, self.n_regions, self.n_categories],
                self.region_idx,
                self.category_idx,
            ]
        ).astype(np.int64)
        return pack_f, pack_i


@dataclass
class HbmPosterior:
    """Draws of coefficients, group effects and spreads, per chain."""

    coef: np.ndarray  # (chains, draws, p), standardized feature scale
    region_effects: np.ndarray  # (chains, draws, 3)
    category_effects: np.ndarray  # (chains, draws, 9)
    noise_scale: np.ndarray  # (chains, draws)
    region_spread: np.ndarray
    category_spread: np.ndarray
    data: HbmData
    seed: int
    divergences: int = 0

    def named_draws(self) -> dict[str, np.ndarray]:
        out = {}
        for j, name in enumerate(self.data.feature_names):
            out[f"coef[{name}]"] = self.coef[:, :, j]
        for r, name in enumerate(TREATED_REGIONS):
            out[f"region[{name}]"] = self.region_effects[:, :, r]
        for c, name in enumerate(CATEGORIES):
            out[f"category[{name}]"] = self.category_effects[:, :, c]
        out["noise_scale"] = self.noise_scale
        out["region_spread"] = self.region_spread
        out["category_spread"] = self.category_spread
        return out

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, arr in self.named_draws().items():
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


def prepare_hbm_config(sampler: SamplerConfig | None) -> SamplerConfig:
    return sampler or SamplerConfig()


def build_design(impacts: pd.DataFrame, panel: Panel) -> HbmData:
    """Design matrix from terminal cumulative impacts plus panel metadata.

    ``impacts`` needs columns entity_id and impact (terminal cumulative
    value) and pre_mean (pre-disaster mean visits). Feature columns other
    than the intercept are standardized; constants are recorded so
    coefficients can be reported on the natural scale.
    """
    required = {"entity_id", "impact", "pre_mean"}
    if not required.issubset(impacts.columns):
        raise ImpactorError(f"impacts frame must have columns {sorted(required)}")
    rows = impacts.sort_values("entity_id", ignore_index=True)

    ids, outcome, feats, ridx, cidx = [], [], [], [], []
    for _, row in rows.iterrows():
        eid = row["entity_id"]
        if eid not in panel.meta:
            raise ImpactorError(f"entity {eid!r} has impacts but no panel metadata")
        meta = panel.meta[eid]
        if meta.region not in REGION_INDEX:
            raise ImpactorError(
                f"entity {eid!r}: region {meta.region!r} is not a treated region"
            )
        if meta.damage_rate is None or np.isnan(meta.damage_rate):
            raise ImpactorError(f"entity {eid!r}: missing damage_rate")
        ids.append(eid)
        outcome.append(float(row["impact"]))
        feats.append([1.0, float(row["pre_mean"]), float(meta.damage_rate)])
        ridx.append(REGION_INDEX[meta.region])
        cidx.append(CATEGORY_INDEX[meta.category])

    features = np.asarray(feats, dtype=float)
    center = np.zeros(features.shape[1])
    scale = np.ones(features.shape[1])
    for j in range(1, features.shape[1]):
        center[j] = features[:, j].mean()
        sd = features[:, j].std()
        scale[j] = sd if sd > 0 else 1.0
        features[:, j] = (features[:, j] - center[j]) / scale[j]

    return HbmData(
        entity_ids=ids,
        outcome=np.asarray(outcome, dtype=float),
        features=features,
        region_idx=np.asarray(ridx, dtype=np.int64),
        category_idx=np.asarray(cidx, dtype=np.int64),
        feature_center=center,
        feature_scale=scale,
    )


def fit_hbm(data: HbmData, sampler: SamplerConfig | None = None):
    """Sample the effects model; returns (HbmPosterior, Diagnostics)."""
    sampler = prepare_hbm_config(sampler)
    for r in range(data.n_regions):
        count = int((data.region_idx == r).sum())
        if 0 < count < 2:
            log.warning("region %s has a single entity; effects weakly informed",
                        TREATED_REGIONS[r])
    pack_f, pack_i = data.pack()
    p = data.n_features
    d = 3 + p + data.n_regions + data.n_categories
    scratch_len = kernels.scratch_size(kernels.KIND_HBM, pack_i)

    scale_guess = max(float(np.std(data.outcome)), 1e-3)
    lo = np.full(d, -1.0)
    hi = np.full(d, 1.0)
    lo[0], hi[0] = np.log(scale_guess) - 2.0, np.log(scale_guess) + 1.0
    lo[1], hi[1] = np.log(scale_guess) - 3.0, np.log(scale_guess) + 1.0
    lo[2], hi[2] = np.log(scale_guess) - 3.0, np.log(scale_guess) + 1.0
    spread = max(3.0 * scale_guess, 1.0)
    lo[3 : 3 + p] = -spread
    hi[3 : 3 + p] = spread

    win_start, win_end = nuts.warmup_windows(sampler.warmup)
    keep = sampler.keep_per_chain
    theta = np.empty((sampler.chains, keep, d))
    divergent = np.zeros((sampler.chains, keep), dtype=np.int64)

    attempts = sampler.retries + 1
    last_diag = None
    for attempt in range(attempts):
        for c in range(sampler.chains):
            seed_c = derive_seed(sampler.seed, "hbm-chain", c, attempt)
            draws, _acc, _dep, divs, _eps, _im, _nd = nuts.run_chain(
                kernels.KIND_HBM, pack_f, pack_i, d, scratch_len, lo, hi,
                sampler.iterations_per_chain, sampler.warmup, seed_c,
                sampler.max_tree_depth, sampler.target_accept,
                win_start, win_end, 1000.0,
            )
            theta[c] = draws
            divergent[c] = divs
        if not np.isfinite(theta).all():
            continue
        post = _assemble_hbm(data, theta, int(divergent.sum()), sampler.seed)
        diag = diag_mod.compute(post.named_draws(), divergences=post.divergences)
        if diag.all_converged or not sampler.require_convergence:
            return post, diag
        last_diag = diag
    raise NonConvergenceError(
        f"effects model did not converge within {attempts} attempts",
        diagnostics=last_diag,
    )


def _assemble_hbm(data: HbmData, theta: np.ndarray, divergences: int, seed: int):
    p = data.n_features
    r_off = 3 + p
    c_off = 3 + p + data.n_regions
    tau_r = np.exp(theta[:, :, 1])
    tau_c = np.exp(theta[:, :, 2])
    return HbmPosterior(
        coef=theta[:, :, 3 : 3 + p].copy(),
        region_effects=tau_r[:, :, None] * theta[:, :, r_off : r_off + data.n_regions],
        category_effects=tau_c[:, :, None] * theta[:, :, c_off : c_off + data.n_categories],
        noise_scale=np.exp(theta[:, :, 0]),
        region_spread=tau_r,
        category_spread=tau_c,
        data=data,
        seed=seed,
        divergences=divergences,
    )


def summarize(post: HbmPosterior, diagnostics: Diagnostics | None = None) -> pd.DataFrame:
    """Posterior summary table, one row per parameter.

    Regression coefficients additionally get a natural-scale column (undoing
    feature standardization); the ``significant`` flag marks 95% credible
    intervals excluding zero.
    """
    qs = (0.025, 0.25, 0.5, 0.75, 0.975)
    diag = diagnostics.as_dict() if diagnostics is not None else {}
    rows = []
    scale = post.data.feature_scale
    for name, arr in post.named_draws().items():
        flat = arr.reshape(-1)
        quants = {f"q{int(q * 1000) / 10:g}": float(np.quantile(flat, q)) for q in qs}
        natural = np.nan
        if name.startswith("coef[") and scale is not None:
            feat = name[5:-1]
            j = list(post.data.feature_names).index(feat)
            natural = float(flat.mean() / scale[j]) if j > 0 else float(flat.mean())
        row = {
            "parameter": name,
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)),
            **quants,
            "natural_mean": natural,
            "significant": bool(quants["q2.5"] > 0 or quants["q97.5"] < 0),
        }
        row.update(diag.get(name, {}))
        rows.append(row)
    return pd.DataFrame(rows)
