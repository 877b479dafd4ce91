"""Convergence diagnostics: rank-normalized split R-hat and bulk ESS.

Implements the standard rank-normalization recipe: draws are converted to
fractional ranks, mapped through the normal quantile function, split in
half per chain, and fed to the classic between/within variance ratio and
the Geyer initial-monotone-sequence ESS estimator. The reported R-hat is
the max of the bulk and folded (median-absolute-deviation) variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from ..errors import ModelSpecError

RHAT_THRESHOLD = 1.01
ESS_THRESHOLD = 400.0


@dataclass
class Diagnostics:
    """Per-parameter convergence summary for one fitted model."""

    parameters: list[str]
    rhat: np.ndarray
    ess: np.ndarray
    n_chains: int
    n_draws: int  # per chain, post-warmup
    divergences: int = 0
    rhat_threshold: float = RHAT_THRESHOLD
    ess_threshold: float = ESS_THRESHOLD

    @property
    def max_rhat(self) -> float:
        return float(np.nanmax(self.rhat)) if len(self.rhat) else float("nan")

    @property
    def min_ess(self) -> float:
        return float(np.nanmin(self.ess)) if len(self.ess) else float("nan")

    @property
    def all_converged(self) -> bool:
        finite = np.isfinite(self.rhat).all() and np.isfinite(self.ess).all()
        return bool(
            finite
            and self.max_rhat <= self.rhat_threshold
            and self.min_ess >= self.ess_threshold
        )

    def worst(self, k: int = 5) -> list[tuple[str, float, float]]:
        order = np.argsort(-np.nan_to_num(self.rhat, nan=np.inf))[:k]
        return [(self.parameters[i], float(self.rhat[i]), float(self.ess[i])) for i in order]

    def as_dict(self) -> dict:
        return {
            name: {"rhat": float(r), "ess": float(e)}
            for name, r, e in zip(self.parameters, self.rhat, self.ess)
        }


def _split(draws: np.ndarray) -> np.ndarray:
    """(chains, n) -> (2*chains, n//2), dropping an odd trailing draw."""
    m, n = draws.shape
    half = n // 2
    return np.concatenate([draws[:, :half], draws[:, n - half :]], axis=0)


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    flat = draws.reshape(-1)
    ranks = rankdata(flat, method="average")
    total = flat.size
    z = ndtri((ranks - 0.375) / (total + 0.25))
    return z.reshape(draws.shape)


def _basic_rhat(draws: np.ndarray) -> float:
    m, n = draws.shape
    if n < 2:
        return float("nan")
    within = draws.var(axis=1, ddof=1).mean()
    between = n * draws.mean(axis=1).var(ddof=1)
    if within <= 0.0:
        return float("nan")
    var_plus = (n - 1.0) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocovariance(draws: np.ndarray) -> np.ndarray:
    m, n = draws.shape
    centered = draws - draws.mean(axis=1, keepdims=True)
    size = 1
    while size < 2 * n:
        size *= 2
    freq = np.fft.rfft(centered, size, axis=1)
    acov = np.fft.irfft(freq * np.conj(freq), size, axis=1)[:, :n].real
    return acov / n


def _basic_ess(draws: np.ndarray) -> float:
    m, n = draws.shape
    if n < 4:
        return float("nan")
    acov = _autocovariance(draws)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += draws.mean(axis=1).var(ddof=1)
    if var_plus <= 0.0:
        return float("nan")

    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial positive monotone sequence over lag pairs (0,1), (2,3), ...
    total = 0.0
    prev_pair = np.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev_pair)
        total += pair
        prev_pair = pair
        k += 1
    tau = -1.0 + 2.0 * total if total > 0.0 else 1.0
    if tau <= 0.0:
        tau = 1.0
    ess_val = m * n / tau
    return float(min(ess_val, m * n))


def rhat(draws: np.ndarray) -> float:
    """Rank-normalized split R-hat (max of bulk and folded variants)."""
    draws = np.asarray(draws, dtype=float)
    split = _split(draws)
    if split.shape[1] < 2:
        return float("nan")
    if np.allclose(split, split.flat[0]):
        return float("nan")
    bulk = _basic_rhat(_rank_normalize(split))
    folded = _basic_rhat(_rank_normalize(np.abs(split - np.median(split))))
    value = np.nanmax([bulk, folded])
    return float(max(value, 1.0)) if np.isfinite(value) else float("nan")


def ess(draws: np.ndarray) -> float:
    """Rank-normalized bulk effective sample size."""
    draws = np.asarray(draws, dtype=float)
    split = _split(draws)
    if split.shape[1] < 2:
        return float("nan")
    if np.allclose(split, split.flat[0]):
        return 1.0
    return _basic_ess(_rank_normalize(split))


def compute(named_draws: dict[str, np.ndarray], divergences: int = 0) -> Diagnostics:
    """Diagnostics over a mapping name -> (chains, draws) array."""
    names = list(named_draws)
    first = named_draws[names[0]]
    n_chains, n_draws = first.shape
    if n_chains < 2:
        raise ModelSpecError("diagnostics need >= 2 chains")
    if n_draws < 4:
        raise ModelSpecError("diagnostics need >= 4 draws per chain")
    rhats = np.array([rhat(named_draws[k]) for k in names])
    esses = np.array([ess(named_draws[k]) for k in names])
    return Diagnostics(
        parameters=names,
        rhat=rhats,
        ess=esses,
        n_chains=n_chains,
        n_draws=n_draws,
        divergences=divergences,
    )


def diagnostics(posterior) -> Diagnostics:
    """Diagnostics over every scalar quantity stored in a posterior."""
    return compute(posterior.named_draws(), divergences=posterior.divergences)
