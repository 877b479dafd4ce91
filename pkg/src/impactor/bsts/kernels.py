"""Log-posterior kernels with hand-derived gradients.

These functions are the sampler's hot path: one call per leapfrog step.
They are written in numba-compatible style and compiled via ``jit_kernel``
(pure-Python fallback when ``IMPACTOR_NUMBA=0``).

Two models share one entry point, selected by an integer code so the NUTS
driver stays a single cacheable compilation:

* ``KIND_BSTS`` -- structural time series: observation = level + seasonal
  (+ coef * covariate) + Gaussian noise. Level is a random walk; seasonal
  states follow the S-1-lag sum-to-zero recursion. States are sampled
  non-centered: the parameter vector carries standard-normal innovations,
  scaled inside the kernel.
* ``KIND_HBM`` -- hierarchical regression of per-entity cumulative impacts
  on exogenous features with region and category random effects
  (non-centered).

Parameter vector layouts are documented next to each kernel. Scale
parameters are sampled on the log scale; the Jacobian terms live in the
kernels. Priors: half-Cauchy on scales, Cauchy on location-like parameters
and regression coefficients.
"""

import math

import numpy as np

from .._backend import jit_kernel

KIND_BSTS = 0
KIND_HBM = 1
KIND_GAUSS = 2  # iid standard normal; sampler validation only

LOG_2PI = math.log(2.0 * math.pi)

# ---------------------------------------------------------------------------
# BSTS parameter vector (D = 7 + has_covariate + (n-1) + n):
#   theta[0] log obs_scale          theta[4] log level_init_scale
#   theta[1] log level_scale        theta[5] season_init_mean
#   theta[2] log season_scale       theta[6] log season_init_scale
#   theta[3] level_init_mean        theta[7] covariate_coef (if present)
#   theta[off : off+n-1]            level innovations z_1..z_{n-1},
#                                   non-centered standard normals
#   theta[soff + j], j < S-1        initial seasonal states (centered)
#   theta[soff + t], t >= S-1       seasonal innovations, non-centered
#   with off = 7 + has_covariate, soff = off + n - 1.
#
# The initial level state is NOT a sampled coordinate: it is marginalized
# analytically. Every observation shares it additively, so conditional on
# the innovations the observation covariance is sigma_y^2 I + sigma_0^2 11';
# the log-density and gradient use the rank-one Sherman-Morrison identity.
# A single latent cannot identify its own prior scale, and sampling that
# pair (either centered or non-centered) leaves a sticky funnel/ridge; the
# marginal form removes the pathology exactly. Initial-level draws are
# recovered afterwards from their Gaussian conditional.
#
# The seasonal initial states stay centered (six of them, strongly data-
# identified); the per-step innovations are non-centered (weakly
# identified individually). Mixed centering is deliberate.
#
# pack_f = [y(n; NaN replaced by 0), x(n; zeros if absent),
#           prior_scale, coef_prior_scale]
# pack_i = [n, S, has_covariate, observed_mask(n)]
# ---------------------------------------------------------------------------


@jit_kernel
def _halfcauchy_logpdf_logscale(s, gamma):
    # density of log(s) when s ~ half-Cauchy(0, gamma); includes Jacobian
    return math.log(2.0 / (math.pi * gamma)) - math.log1p((s / gamma) ** 2) + math.log(s)


@jit_kernel
def _halfcauchy_grad_logscale(s, gamma):
    # d/dlog(s) of the above
    return 1.0 - 2.0 * s * s / (gamma * gamma + s * s)


@jit_kernel
def _cauchy_logpdf(v, gamma):
    return -math.log(math.pi * gamma) - math.log1p((v / gamma) ** 2)


@jit_kernel
def _cauchy_grad(v, gamma):
    return -2.0 * v / (gamma * gamma + v * v)


@jit_kernel
def bsts_states(theta, pack_i, level_rel, seas):
    """State paths from the parameter vector.

    ``level_rel`` is the level path relative to the (marginalized) initial
    state, i.e. level_t - level_0; ``seas`` is the seasonal path itself.
    """
    n = pack_i[0]
    s_len = pack_i[1]
    has_x = pack_i[2]
    off = 7 + has_x
    soff = off + n - 1

    sig_level = math.exp(theta[1])
    sig_seas = math.exp(theta[2])

    level_rel[0] = 0.0
    for t in range(1, n):
        level_rel[t] = level_rel[t - 1] + sig_level * theta[off + t - 1]

    for j in range(s_len - 1):
        seas[j] = theta[soff + j]
    for t in range(s_len - 1, n):
        acc = 0.0
        for s in range(1, s_len):
            acc -= seas[t - s]
        seas[t] = acc + sig_seas * theta[soff + t]


@jit_kernel
def _bsts_logp_grad(theta, pack_f, pack_i, grad, scratch, include_priors):
    n = pack_i[0]
    s_len = pack_i[1]
    has_x = pack_i[2]
    off = 7 + has_x
    soff = off + n - 1

    prior_scale = pack_f[2 * n]
    coef_prior_scale = pack_f[2 * n + 1]

    sig_obs = math.exp(theta[0])
    sig_level = math.exp(theta[1])
    sig_seas = math.exp(theta[2])
    init_mean = theta[3]
    init_scale = math.exp(theta[4])
    seas_mean = theta[5]
    seas_scale = math.exp(theta[6])
    coef = theta[7] if has_x == 1 else 0.0

    level_rel = scratch[0:n]
    seas = scratch[n : 2 * n]
    resid = scratch[2 * n : 3 * n]  # Sigma^-1 (y - mean), 0 where missing
    seas_adj = scratch[3 * n : 4 * n]

    bsts_states(theta, pack_i, level_rel, seas)

    for i in range(grad.shape[0]):
        grad[i] = 0.0

    # Marginal Gaussian log-likelihood with the initial level integrated out:
    # observed y ~ N(m + init_mean, sig_obs^2 I + init_scale^2 11'), where m
    # is the level-relative + seasonal + covariate mean. Rank-one
    # Sherman-Morrison gives O(n) density and gradient.
    a = sig_obs * sig_obs
    b = init_scale * init_scale
    n_obs = 0
    dsum = 0.0
    dsq = 0.0
    for t in range(n):
        if pack_i[3 + t] == 1:
            mean_t = level_rel[t] + seas[t] + init_mean
            if has_x == 1:
                mean_t += coef * pack_f[n + t]
            d = pack_f[t] - mean_t
            resid[t] = d
            n_obs += 1
            dsum += d
            dsq += d * d
        else:
            resid[t] = 0.0

    denom = a + n_obs * b
    quad = (dsq - b * dsum * dsum / denom) / a
    loglik = -0.5 * (
        n_obs * LOG_2PI + n_obs * math.log(a) + math.log(denom / a) + quad
    )

    # u = Sigma^-1 (y - mean); shared correction from the rank-one term
    shared = b * dsum / denom
    dcoef = 0.0
    usum = 0.0
    usq = 0.0
    for t in range(n):
        if pack_i[3 + t] == 1:
            u = (resid[t] - shared) / a
            resid[t] = u
            usum += u
            usq += u * u
            if has_x == 1:
                dcoef += u * pack_f[n + t]

    logp = loglik
    if include_priors == 0:
        return logp

    # d loglik / d log sig_obs = 2a * dL/da, with
    # dL/da = 0.5 * (u'u - tr(Sigma^-1 I)) restricted to the identity block
    tr_inv = n_obs / a - n_obs * b / (a * denom)
    dlog_sig_obs = a * usq - a * tr_inv
    # d loglik / d log init_scale = 2b * dL/db, rank-one block
    dlog_init_scale = b * (usum * usum - n_obs / denom)

    # level chain: suffix sums of dlogp/dlevel_rel_t feed innovations z_t
    csum = 0.0
    dlog_sig_level = 0.0
    for t in range(n - 1, 0, -1):
        csum += resid[t]
        grad[off + t - 1] = sig_level * csum
        dlog_sig_level += sig_level * theta[off + t - 1] * csum

    # seasonal chain: backward adjoint through the sum-to-zero recursion
    for t in range(n - 1, -1, -1):
        acc = resid[t]
        kmax = t + s_len - 1
        if kmax > n - 1:
            kmax = n - 1
        for k in range(t + 1, kmax + 1):
            if k >= s_len - 1:
                acc -= seas_adj[k]
        seas_adj[t] = acc

    dlog_sig_seas = 0.0
    for j in range(s_len - 1):
        grad[soff + j] = seas_adj[j]
    for t in range(s_len - 1, n):
        grad[soff + t] = sig_seas * seas_adj[t]
        dlog_sig_seas += sig_seas * theta[soff + t] * seas_adj[t]

    # centered priors on the initial seasonal states
    ivs = 1.0 / (seas_scale * seas_scale)
    dseas_mean = 0.0
    dlog_seas_scale = 0.0
    for j in range(s_len - 1):
        dj = theta[soff + j] - seas_mean
        logp += -theta[6] - 0.5 * dj * dj * ivs - 0.5 * LOG_2PI
        grad[soff + j] -= dj * ivs
        dseas_mean += dj * ivs
        dlog_seas_scale += -1.0 + dj * dj * ivs

    # standard-normal priors on the non-centered innovations
    for t in range(1, n):
        zt = theta[off + t - 1]
        logp += -0.5 * zt * zt - 0.5 * LOG_2PI
        grad[off + t - 1] -= zt
    for t in range(s_len - 1, n):
        wt = theta[soff + t]
        logp += -0.5 * wt * wt - 0.5 * LOG_2PI
        grad[soff + t] -= wt

    # hyperpriors (+ log-scale Jacobians)
    logp += _halfcauchy_logpdf_logscale(sig_obs, prior_scale)
    logp += _halfcauchy_logpdf_logscale(sig_level, prior_scale)
    logp += _halfcauchy_logpdf_logscale(sig_seas, prior_scale)
    logp += _halfcauchy_logpdf_logscale(init_scale, prior_scale)
    logp += _halfcauchy_logpdf_logscale(seas_scale, prior_scale)
    logp += _cauchy_logpdf(init_mean, prior_scale)
    logp += _cauchy_logpdf(seas_mean, prior_scale)

    grad[0] = dlog_sig_obs + _halfcauchy_grad_logscale(sig_obs, prior_scale)
    grad[1] = dlog_sig_level + _halfcauchy_grad_logscale(sig_level, prior_scale)
    grad[2] = dlog_sig_seas + _halfcauchy_grad_logscale(sig_seas, prior_scale)
    grad[3] = usum + _cauchy_grad(init_mean, prior_scale)
    grad[4] = dlog_init_scale + _halfcauchy_grad_logscale(init_scale, prior_scale)
    grad[5] = dseas_mean + _cauchy_grad(seas_mean, prior_scale)
    grad[6] = dlog_seas_scale + _halfcauchy_grad_logscale(seas_scale, prior_scale)
    if has_x == 1:
        logp += _cauchy_logpdf(coef, coef_prior_scale)
        grad[7] = dcoef + _cauchy_grad(coef, coef_prior_scale)

    return logp


# ---------------------------------------------------------------------------
# HBM parameter vector (D = 3 + p + n_regions + n_cats):
#   theta[0] log noise_scale   theta[1] log region_spread   theta[2] log cat_spread
#   theta[3:3+p]                      regression coefficients
#   theta[3+p : 3+p+n_regions]        region effects (non-centered)
#   theta[3+p+n_regions : ...+n_cats] category effects (non-centered)
#
# pack_f = [outcome(ne), X(ne*p, row-major), prior_scale]
# pack_i = [ne, p, n_regions, n_cats, region_idx(ne), cat_idx(ne)]
# ---------------------------------------------------------------------------


@jit_kernel
def _hbm_logp_grad(theta, pack_f, pack_i, grad, scratch):
    ne = pack_i[0]
    p = pack_i[1]
    n_reg = pack_i[2]
    n_cat = pack_i[3]
    prior_scale = pack_f[ne + ne * p]

    sig = math.exp(theta[0])
    tau_reg = math.exp(theta[1])
    tau_cat = math.exp(theta[2])
    b_off = 3
    r_off = 3 + p
    c_off = 3 + p + n_reg

    for i in range(grad.shape[0]):
        grad[i] = 0.0

    adj_reg = scratch[0:n_reg]
    adj_cat = scratch[n_reg : n_reg + n_cat]
    for r in range(n_reg):
        adj_reg[r] = 0.0
    for c in range(n_cat):
        adj_cat[c] = 0.0

    inv_var = 1.0 / (sig * sig)
    logp = 0.0
    dlog_sig = 0.0
    for i in range(ne):
        mu = 0.0
        for j in range(p):
            mu += theta[b_off + j] * pack_f[ne + i * p + j]
        reg = pack_i[4 + i]
        cat = pack_i[4 + ne + i]
        mu += tau_reg * theta[r_off + reg] + tau_cat * theta[c_off + cat]
        r_i = pack_f[i] - mu
        logp += -theta[0] - 0.5 * r_i * r_i * inv_var - 0.5 * LOG_2PI
        dlog_sig += -1.0 + r_i * r_i * inv_var
        e_i = r_i * inv_var
        for j in range(p):
            grad[b_off + j] += e_i * pack_f[ne + i * p + j]
        adj_reg[reg] += e_i
        adj_cat[cat] += e_i

    dlog_tau_reg = 0.0
    for r in range(n_reg):
        u = theta[r_off + r]
        grad[r_off + r] = tau_reg * adj_reg[r] - u
        dlog_tau_reg += tau_reg * u * adj_reg[r]
        logp += -0.5 * u * u - 0.5 * LOG_2PI
    dlog_tau_cat = 0.0
    for c in range(n_cat):
        u = theta[c_off + c]
        grad[c_off + c] = tau_cat * adj_cat[c] - u
        dlog_tau_cat += tau_cat * u * adj_cat[c]
        logp += -0.5 * u * u - 0.5 * LOG_2PI

    for j in range(p):
        logp += _cauchy_logpdf(theta[b_off + j], prior_scale)
        grad[b_off + j] += _cauchy_grad(theta[b_off + j], prior_scale)

    logp += _halfcauchy_logpdf_logscale(sig, prior_scale)
    logp += _halfcauchy_logpdf_logscale(tau_reg, prior_scale)
    logp += _halfcauchy_logpdf_logscale(tau_cat, prior_scale)
    grad[0] = dlog_sig + _halfcauchy_grad_logscale(sig, prior_scale)
    grad[1] = dlog_tau_reg + _halfcauchy_grad_logscale(tau_reg, prior_scale)
    grad[2] = dlog_tau_cat + _halfcauchy_grad_logscale(tau_cat, prior_scale)

    return logp


@jit_kernel
def _gauss_logp_grad(theta, grad):
    logp = 0.0
    for i in range(theta.shape[0]):
        grad[i] = -theta[i]
        logp += -0.5 * theta[i] * theta[i] - 0.5 * LOG_2PI
    return logp


@jit_kernel
def logp_grad(kind, theta, pack_f, pack_i, grad, scratch):
    """Log posterior density and gradient (written into ``grad``)."""
    if kind == KIND_BSTS:
        return _bsts_logp_grad(theta, pack_f, pack_i, grad, scratch, 1)
    if kind == KIND_HBM:
        return _hbm_logp_grad(theta, pack_f, pack_i, grad, scratch)
    return _gauss_logp_grad(theta, grad)


@jit_kernel
def bsts_loglik(theta, pack_f, pack_i, grad, scratch):
    """Observation log-likelihood only (no priors); gradient not meaningful."""
    return _bsts_logp_grad(theta, pack_f, pack_i, grad, scratch, 0)


def scratch_size(kind, pack_i) -> int:
    if kind == KIND_BSTS:
        return 4 * int(pack_i[0])
    return int(pack_i[2] + pack_i[3])
