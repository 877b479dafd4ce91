"""Prediction-accuracy evaluation and per-entity model selection.

Reproduces the two-setting validation protocol: fit on the training window,
predict a held-out window, score with MAPE and Pearson correlation per
covariate strategy, then pick each entity's best strategy. Day indices are
0-based internally: Setting 1 tests days [150, 200), Setting 2 days
[150, 400) (the long-horizon split within unaffected control regions).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .bsts.fit import fit
from .bsts.model import BstsConfig, SamplerConfig, build_model
from .bsts.posterior import posterior_predict
from .errors import ImpactorError, MatchingError, ModelSpecError, NonConvergenceError
from .matching import STRATEGIES, STRATEGY_NONE, choose_covariate
from .panel import Panel, StudyWindows
from .rng import derive_seed

log = logging.getLogger(__name__)

STRATEGY_SIMPLICITY = {s: i for i, s in enumerate(STRATEGIES)}  # none < category < specific


@dataclass(frozen=True)
class EvalRecord:
    entity_id: str
    strategy: str
    split: str  # train | test
    mape: float
    pearson_r: float
    excluded_zero_days: int


@dataclass(frozen=True)
class ExperimentSetting:
    """A fixed train/test split with target and covariate-source roles."""

    id: str
    train_end: int
    test_start: int
    test_end: int
    target_role: str  # treated | control
    source_role: str = "control"

    @property
    def test_days(self) -> int:
        return self.test_end - self.test_start


def setting_1(windows: StudyWindows) -> ExperimentSetting:
    """Inter-region prediction: treated entities, short hold-out."""
    return ExperimentSetting(
        id="setting1",
        train_end=windows.train_end,
        test_start=windows.train_end,
        test_end=min(windows.train_end + 50, windows.total_days),
        target_role="treated",
    )


def setting_2(windows: StudyWindows) -> ExperimentSetting:
    """Intra-control prediction: control entities, full horizon."""
    return ExperimentSetting(
        id="setting2",
        train_end=windows.train_end,
        test_start=windows.train_end,
        test_end=windows.total_days,
        target_role="control",
    )


def mape(y: np.ndarray, yhat: np.ndarray) -> tuple[float, int]:
    """Mean absolute percentage error, excluding zero or missing outcomes.

    Returns (mape, number of excluded indices).
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ImpactorError(f"length mismatch: {y.shape} vs {yhat.shape}")
    valid = ~(np.isnan(y) | np.isnan(yhat)) & (y != 0)
    excluded = int(len(y) - valid.sum())
    if valid.sum() == 0:
        raise ImpactorError("no valid index for MAPE (all zero or missing)")
    value = float(np.abs((y[valid] - yhat[valid]) / y[valid]).mean())
    return value, excluded


def _split_panels(setting: ExperimentSetting, treated: Panel, control: Panel):
    """Resolve (targets panel, covariate source panel) for a setting.

    Setting 2 predicts control entities from *other-region* control
    entities; the target region is the lexicographically first control
    region, mirroring the one-city-predicts-another design.
    """
    if setting.target_role == "treated":
        return treated, control
    regions = control.regions()
    if len(regions) < 2:
        log.warning(
            "setting %s: control panel has a single region; targets and "
            "covariate sources share it (self-matches excluded by entity)",
            setting.id,
        )
        return control, control
    target_region = regions[0]
    target_ids = [e for e in control.entity_ids if control.meta[e].region == target_region]
    source_ids = [e for e in control.entity_ids if control.meta[e].region != target_region]
    return control.subset(target_ids), control.subset(source_ids)


def evaluate_entity(
    entity_id: str,
    strategy: str,
    setting: ExperimentSetting,
    targets: Panel,
    source: Panel,
    config: BstsConfig,
    seed: int,
) -> list[EvalRecord]:
    """Fit one (entity, strategy) pair and score both splits."""
    windows = targets.windows
    series = targets.series[entity_id]
    meta = targets.meta[entity_id]

    if strategy == STRATEGY_NONE:
        choice_series = None
    else:
        source_panel = source
        if entity_id in source.series:
            source_panel = source.subset([e for e in source.entity_ids if e != entity_id])
        choice = choose_covariate(
            strategy, series, source_panel, windows, meta.category, meta.brand
        )
        choice_series = choice.series

    eval_windows = StudyWindows(
        train_end=setting.train_end,
        shock_day=setting.train_end,
        total_days=setting.test_end,
        secondary_shock_day=None,
    )
    spec = build_model(series, choice_series, eval_windows, config)
    sampler = config.sampler
    post, _diag = fit(
        spec,
        SamplerConfig(
            chains=sampler.chains,
            iterations_per_chain=sampler.iterations_per_chain,
            warmup=sampler.warmup,
            seed=seed,
            max_tree_depth=sampler.max_tree_depth,
            target_accept=sampler.target_accept,
            retries=sampler.retries,
            require_convergence=sampler.require_convergence,
        ),
    )

    records = []
    fitted = post.in_sample_mean()
    y_train = series.values[: setting.train_end]
    m_train, excl_train = mape(y_train, fitted)
    r_train = _safe_pearson(y_train, fitted)
    records.append(
        EvalRecord(entity_id, strategy, "train", m_train, r_train, excl_train)
    )

    x_future = None
    if choice_series is not None:
        x_future = choice_series[setting.train_end : setting.test_end]
    pred = posterior_predict(post, spec, x_future=x_future)
    yhat_test = pred.mean()[: setting.test_days]
    y_test = series.values[setting.test_start : setting.test_end]
    m_test, excl_test = mape(y_test, yhat_test)
    r_test = _safe_pearson(y_test, yhat_test)
    records.append(EvalRecord(entity_id, strategy, "test", m_test, r_test, excl_test))
    return records


def _safe_pearson(y, yhat) -> float:
    from .matching import pearson

    try:
        return pearson(np.asarray(y, dtype=float), np.asarray(yhat, dtype=float))
    except MatchingError:
        return float("nan")


def run_setting(
    setting: ExperimentSetting,
    treated: Panel,
    control: Panel,
    config: BstsConfig,
    seed: int = 0,
    workers: int = 1,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Evaluate all entities under all three strategies.

    Per-entity failures are recorded and skipped. Returns (records, failures)
    as DataFrames; records mirror EvalRecord fields plus the setting id.
    """
    from concurrent.futures import ThreadPoolExecutor

    targets, source = _split_panels(setting, treated, control)
    jobs = [(eid, strat) for eid in targets.entity_ids for strat in STRATEGIES]

    def run_job(job):
        eid, strat = job
        job_seed = derive_seed(seed, setting.id, eid, strat)
        try:
            recs = evaluate_entity(eid, strat, setting, targets, source, config, job_seed)
            return job, recs, None
        except (MatchingError, ModelSpecError, NonConvergenceError, ImpactorError) as exc:
            return job, [], f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(run_job, jobs))
    else:
        outcomes = [run_job(j) for j in jobs]

    rows, failures = [], []
    for (eid, strat), recs, err in outcomes:
        if err is not None:
            failures.append(
                {"setting": setting.id, "entity_id": eid, "strategy": strat, "error": err}
            )
            continue
        for r in recs:
            rows.append(
                {
                    "setting": setting.id,
                    "entity_id": r.entity_id,
                    "strategy": r.strategy,
                    "split": r.split,
                    "mape": r.mape,
                    "pearson_r": r.pearson_r,
                    "excluded_zero_days": r.excluded_zero_days,
                }
            )
    records = pd.DataFrame(
        rows,
        columns=["setting", "entity_id", "strategy", "split", "mape", "pearson_r",
                 "excluded_zero_days"],
    )
    fail_df = pd.DataFrame(failures, columns=["setting", "entity_id", "strategy", "error"])
    return records, fail_df


def aggregate_records(records: pd.DataFrame) -> pd.DataFrame:
    """Mean +/- sd per (setting, split, metric, strategy), long format."""
    rows = []
    for (setting, split, strategy), group in records.groupby(["setting", "split", "strategy"]):
        for metric in ("mape", "pearson_r"):
            vals = group[metric].dropna()
            rows.append(
                {
                    "setting": setting,
                    "split": split,
                    "metric": metric,
                    "strategy": strategy,
                    "mean": vals.mean() if len(vals) else np.nan,
                    "sd": vals.std(ddof=1) if len(vals) > 1 else np.nan,
                    "n": len(vals),
                }
            )
    return pd.DataFrame(rows).sort_values(
        ["setting", "split", "metric", "strategy"], ignore_index=True
    )


def select_best_model(
    records: pd.DataFrame, criterion: str = "test_mape"
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Pick each entity's best strategy from its test-split records.

    ``criterion`` is ``test_mape`` (minimized, default) or ``test_pearson``
    (maximized). Exact ties resolve toward fewer covariates (none, then
    category, then specific). Entities with no successful strategy are
    dropped with a notice. Returns (selection, percentages).
    """
    if criterion not in ("test_mape", "test_pearson"):
        raise ImpactorError(f"unknown selection criterion {criterion!r}")
    metric = "mape" if criterion == "test_mape" else "pearson_r"
    test = records[records["split"] == "test"].dropna(subset=[metric])

    chosen = []
    for eid, group in test.groupby("entity_id"):
        best_row, best_key = None, None
        for _, row in group.iterrows():
            value = row[metric] if metric == "mape" else -row[metric]
            key = (value, STRATEGY_SIMPLICITY[row["strategy"]])
            if best_key is None or key < best_key:
                best_key, best_row = key, row
        chosen.append(
            {
                "entity_id": eid,
                "chosen_strategy": best_row["strategy"],
                "criterion": criterion,
                "criterion_value": best_row[metric],
            }
        )
    selection = pd.DataFrame(
        chosen, columns=["entity_id", "chosen_strategy", "criterion", "criterion_value"]
    ).sort_values("entity_id", ignore_index=True)

    skipped = sorted(set(records["entity_id"]) - set(selection["entity_id"]))
    if skipped:
        log.warning("select_best_model: no successful strategy for %s", skipped)

    if len(selection):
        counts = selection["chosen_strategy"].value_counts()
        pct = pd.DataFrame(
            {
                "strategy": list(STRATEGIES),
                "selected_pct": [100.0 * counts.get(s, 0) / len(selection) for s in STRATEGIES],
                "n": [int(counts.get(s, 0)) for s in STRATEGIES],
            }
        )
    else:
        pct = pd.DataFrame({"strategy": list(STRATEGIES), "selected_pct": 0.0, "n": 0})
    return selection, pct
