"""Marginal log-likelihood of the structural model via Kalman recursion.

States are fully integrated out, so this evaluates p(y | scale and init
parameters) exactly. Used as the state-recursion side of the likelihood
equivalence check against dense multivariate-normal brute force, and as a
standalone utility for deterministic likelihood computations.

State vector (dimension S): [level, seasonal_t, seasonal_{t-1}, ...,
seasonal_{t-S+2}]. The first S-1 seasonal states are injected one per step
through a time-varying transition (mean season_init_mean, variance
season_init_scale^2, no dependence on the register), after which the
sum-to-zero recursion takes over. This reproduces the generative model in
which the initial seasonal values are drawn i.i.d. and the recursion starts
at t = S-1.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ModelSpecError

LOG_2PI = math.log(2.0 * math.pi)


def marginal_log_likelihood(
    y: np.ndarray,
    *,
    obs_scale: float,
    level_scale: float,
    season_scale: float,
    level_init_mean: float,
    level_init_scale: float,
    season_init_mean: float,
    season_init_scale: float,
    season_length: int = 7,
    x: np.ndarray | None = None,
    coef: float = 0.0,
) -> float:
    """Exact log p(y | parameters) with all latent states marginalized.

    ``y`` may contain NaN for missing days (skipped in the filter update;
    states still propagate). ``x`` is an optional covariate of equal length.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    s_len = int(season_length)
    if s_len < 2:
        raise ModelSpecError("season_length must be >= 2")
    if x is not None:
        x = np.asarray(x, dtype=float)
        if len(x) != n:
            raise ModelSpecError("covariate length must match y")
        if np.isnan(x).any():
            raise ModelSpecError("covariate must be fully observed")
    if obs_scale <= 0 or level_scale < 0 or season_scale < 0:
        raise ModelSpecError("scales must be positive (obs) / non-negative (state)")

    dim = s_len  # level + S-1 seasonal register slots
    mean = np.zeros(dim)
    cov = np.zeros((dim, dim))
    mean[0] = level_init_mean
    cov[0, 0] = level_init_scale**2
    # register slots start as deterministic zeros; they shift out before use
    mean[1] = season_init_mean
    cov[1, 1] = season_init_scale**2

    obs_var = obs_scale**2
    level_var = level_scale**2
    seas_var = season_scale**2
    init_var = season_init_scale**2

    z = np.zeros(dim)
    z[0] = 1.0
    z[1] = 1.0

    loglik = 0.0
    for t in range(n):
        if not np.isnan(y[t]):
            offset = coef * x[t] if x is not None else 0.0
            resid = y[t] - (mean @ z) - offset
            var = z @ cov @ z + obs_var
            loglik += -0.5 * (LOG_2PI + math.log(var) + resid * resid / var)
            gain = (cov @ z) / var
            mean = mean + gain * resid
            cov = cov - np.outer(gain, cov @ z)
            cov = 0.5 * (cov + cov.T)

        # transition t -> t+1
        trans = np.zeros((dim, dim))
        trans[0, 0] = 1.0
        shift_const = np.zeros(dim)
        if t + 1 < s_len - 1:
            # still injecting i.i.d. initial seasonal values
            shift_const[1] = season_init_mean
            new_seas_var = init_var
        else:
            trans[1, 1:] = -1.0
            new_seas_var = seas_var
        for j in range(2, dim):
            trans[j, j - 1] = 1.0

        mean = trans @ mean + shift_const
        cov = trans @ cov @ trans.T
        cov[0, 0] += level_var
        cov[1, 1] += new_seas_var
        cov = 0.5 * (cov + cov.T)

    return float(loglik)
