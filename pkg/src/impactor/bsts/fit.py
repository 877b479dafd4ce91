"""Fit orchestration: chains, initialisation, retries, posterior assembly."""

from __future__ import annotations

import numpy as np

from ..errors import NonConvergenceError
from ..rng import derive_seed, generator
from . import diagnostics as diag_mod
from . import kernels, nuts
from .model import ModelSpec, SamplerConfig
from .posterior import Posterior


def _init_box(spec: ModelSpec):
    d = spec.n_params
    lo = np.full(d, -1.0)
    hi = np.full(d, 1.0)
    # log scales start modest on the standardized scale
    lo[0], hi[0] = -2.5, 0.5  # log obs_scale
    lo[1], hi[1] = -4.0, -0.5  # log level_scale
    lo[2], hi[2] = -4.0, -0.5  # log season_scale
    lo[4], hi[4] = -2.0, 0.5  # log level_init_scale
    lo[6], hi[6] = -2.0, 0.5  # log season_init_scale
    return lo, hi


def _reconstruct_states(theta: np.ndarray, spec: ModelSpec, seed: int):
    """Vectorized level/seasonal paths for all draws, sampled scale.

    The initial level is marginalized during sampling; here it is drawn
    from its exact Gaussian conditional given each draw and the data, so
    the stored paths are draws from the full joint posterior.
    """
    n = spec.train_end
    s_len = spec.config.season_length
    off = 7 + int(spec.has_covariate)
    soff = off + n - 1
    z = theta[:, :, off:soff]
    w = theta[:, :, soff : soff + n]
    obs_scale = np.exp(theta[:, :, 0])
    level_scale = np.exp(theta[:, :, 1])
    season_scale = np.exp(theta[:, :, 2])
    init_mean = theta[:, :, 3]
    init_scale = np.exp(theta[:, :, 4])

    shape = theta.shape[:2]
    rel = np.zeros(shape + (n,))
    np.cumsum(level_scale[:, :, None] * z, axis=2, out=rel[:, :, 1:])

    seas = np.empty(shape + (n,))
    seas[:, :, : s_len - 1] = w[:, :, : s_len - 1]
    window = seas[:, :, : s_len - 1].sum(axis=2)
    for t in range(s_len - 1, n):
        seas_t = -window + season_scale * w[:, :, t]
        seas[:, :, t] = seas_t
        window += seas_t - seas[:, :, t - s_len + 1]

    # initial level | draw, data  ~  Gaussian (conjugate)
    mask = spec.observed_mask
    k = int(mask.sum())
    y_obs = np.nan_to_num(spec.y_train, nan=0.0)[mask]
    signal = rel[:, :, mask] + seas[:, :, mask]
    if spec.has_covariate:
        signal = signal + theta[:, :, 7][:, :, None] * spec.x_train[None, None, mask]
    resid_sum = (y_obs[None, None, :] - signal).sum(axis=2)
    prec = 1.0 / init_scale**2 + k / obs_scale**2
    mean0 = (init_mean / init_scale**2 + resid_sum / obs_scale**2) / prec
    rng = generator(seed, "init-state", shape[0], shape[1])
    level0 = mean0 + rng.standard_normal(shape) / np.sqrt(prec)

    return level0[:, :, None] + rel, seas


def _run_chains(spec: ModelSpec, sampler: SamplerConfig, attempt: int):
    pack_f, pack_i = spec.pack()
    d = spec.n_params
    scratch_len = kernels.scratch_size(kernels.KIND_BSTS, pack_i)
    lo, hi = _init_box(spec)
    win_start, win_end = nuts.warmup_windows(sampler.warmup)

    keep = sampler.keep_per_chain
    theta = np.empty((sampler.chains, keep, d))
    accept = np.empty((sampler.chains, keep))
    divergent = np.zeros((sampler.chains, keep), dtype=np.int64)
    info = {"step_size": [], "warmup_divergences": 0}
    for c in range(sampler.chains):
        seed_c = derive_seed(sampler.seed, "chain", c, attempt)
        draws, acc, _depths, divs, eps, _inv_mass, ndiv = nuts.run_chain(
            kernels.KIND_BSTS,
            pack_f,
            pack_i,
            d,
            scratch_len,
            lo,
            hi,
            sampler.iterations_per_chain,
            sampler.warmup,
            seed_c,
            sampler.max_tree_depth,
            sampler.target_accept,
            win_start,
            win_end,
            1000.0,
        )
        theta[c] = draws
        accept[c] = acc
        divergent[c] = divs
        info["step_size"].append(float(eps))
        info["warmup_divergences"] += int(ndiv) - int(divs.sum())
    return theta, accept, divergent, info


def _assemble(spec: ModelSpec, theta: np.ndarray, divergences: int, seed: int, info: dict):
    params = {
        "obs_scale": np.exp(theta[:, :, 0]),
        "level_scale": np.exp(theta[:, :, 1]),
        "season_scale": np.exp(theta[:, :, 2]),
        "level_init_mean": theta[:, :, 3].copy(),
        "level_init_scale": np.exp(theta[:, :, 4]),
        "season_init_mean": theta[:, :, 5].copy(),
        "season_init_scale": np.exp(theta[:, :, 6]),
    }
    if spec.has_covariate:
        params["covariate_coef"] = theta[:, :, 7].copy()
    level, seasonal = _reconstruct_states(theta, spec, seed)
    return Posterior(
        params=params,
        level=level,
        seasonal=seasonal,
        spec=spec,
        seed=seed,
        divergences=divergences,
        sampler_info=info,
    )


def fit(spec: ModelSpec, sampler: SamplerConfig | None = None):
    """Sample the posterior; returns (Posterior, Diagnostics).

    Deterministic given (seed, chains, iterations): chain seeds derive from
    the sampler seed, so results do not depend on scheduling. When the
    convergence gate fails, the fit retries with twice the retained draws;
    past the retry budget a NonConvergenceError carries the diagnostics.
    """
    sampler = sampler or spec.config.sampler
    last_diag = None
    for attempt in range(sampler.retries + 1):
        theta, _accept, divergent, info = _run_chains(spec, sampler, attempt)
        if not np.isfinite(theta).all():
            last_diag = None
            sampler = _grow(sampler)
            continue
        n_div = int(divergent.sum())
        posterior = _assemble(spec, theta, n_div, sampler.seed, info)
        diag = diag_mod.diagnostics(posterior)
        if diag.all_converged or not sampler.require_convergence:
            return posterior, diag
        last_diag = diag
        sampler = _grow(sampler)
    raise NonConvergenceError(
        f"entity {spec.entity_id!r}: sampling did not converge within "
        f"{sampler.retries + 1} attempts"
        + (
            f" (max rhat {last_diag.max_rhat:.4f}, min ess {last_diag.min_ess:.0f})"
            if last_diag is not None
            else ""
        ),
        diagnostics=last_diag,
    )


def _grow(sampler: SamplerConfig) -> SamplerConfig:
    from dataclasses import replace

    return replace(
        sampler,
        iterations_per_chain=sampler.warmup + 2 * sampler.keep_per_chain,
    )
