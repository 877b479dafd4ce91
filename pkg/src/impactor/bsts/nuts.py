"""Dynamic-trajectory Hamiltonian Monte Carlo (multinomial NUTS).

Single-chain driver compiled through ``jit_kernel``. The tree of each
transition is built iteratively (no recursion) with a checkpoint stack for
the sub-tree U-turn checks, following the scheme used by modern samplers:

* leaves are produced sequentially by leapfrog steps;
* every aligned power-of-two block of leaves is checked for a U-turn using
  stored block-start momenta and cumulative momentum sums;
* across doublings, proposals are combined by biased progressive sampling
  and the merged tree is checked with boundary-extended criteria.

Warmup follows the usual windowed schedule: step-size dual averaging
throughout, diagonal mass-matrix (inverse metric) estimation over doubling
memory windows, step size re-initialised after each metric update.

Momenta are drawn with covariance ``1/inv_mass``; ``inv_mass`` is the
estimated posterior variance. Kinetic energy is ``0.5 * sum(r^2 * inv_mass)``.
"""

import math

import numpy as np

from .._backend import jit_kernel
from ..rng import rng_new, rng_normal, rng_uniform
from .kernels import logp_grad

_NEG_INF = -math.inf


@jit_kernel
def _logaddexp(a, b):
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@jit_kernel
def _kinetic(r, inv_mass):
    k = 0.0
    for i in range(r.shape[0]):
        k += r[i] * r[i] * inv_mass[i]
    return 0.5 * k


@jit_kernel
def _turn_dot(p, inv_mass, rho):
    d = 0.0
    for i in range(p.shape[0]):
        d += p[i] * inv_mass[i] * rho[i]
    return d


@jit_kernel
def _is_turning(p_a, p_b, rho, inv_mass):
    return (
        _turn_dot(p_a, inv_mass, rho) <= 0.0 or _turn_dot(p_b, inv_mass, rho) <= 0.0
    )


@jit_kernel
def _leapfrog(kind, pack_f, pack_i, theta, r, grad, scratch, inv_mass, eps):
    half = 0.5 * eps
    for i in range(theta.shape[0]):
        r[i] += half * grad[i]
    for i in range(theta.shape[0]):
        theta[i] += eps * inv_mass[i] * r[i]
    logp = logp_grad(kind, theta, pack_f, pack_i, grad, scratch)
    for i in range(theta.shape[0]):
        r[i] += half * grad[i]
    return logp


@jit_kernel
def _draw_momentum(r, inv_mass, rng):
    for i in range(r.shape[0]):
        r[i] = rng_normal(rng) / math.sqrt(inv_mass[i])


@jit_kernel
def _find_reasonable_eps(kind, pack_f, pack_i, theta, logp0, grad0, inv_mass, rng, scratch):
    """Initial step size heuristic: scale until one-step accept crosses 1/2."""
    d = theta.shape[0]
    eps = 1.0
    theta_w = np.empty(d)
    r_w = np.empty(d)
    r0 = np.empty(d)
    grad_w = np.empty(d)
    _draw_momentum(r0, inv_mass, rng)
    h0 = logp0 - _kinetic(r0, inv_mass)

    theta_w[:] = theta
    r_w[:] = r0
    grad_w[:] = grad0
    logp = _leapfrog(kind, pack_f, pack_i, theta_w, r_w, grad_w, scratch, inv_mass, eps)
    dh = logp - _kinetic(r_w, inv_mass) - h0
    if not math.isfinite(dh):
        dh = _NEG_INF
    direction = 1.0 if dh > math.log(0.5) else -1.0
    for _ in range(100):
        theta_w[:] = theta
        r_w[:] = r0
        grad_w[:] = grad0
        logp = _leapfrog(kind, pack_f, pack_i, theta_w, r_w, grad_w, scratch, inv_mass, eps)
        dh = logp - _kinetic(r_w, inv_mass) - h0
        if not math.isfinite(dh):
            dh = _NEG_INF
        if direction > 0.0:
            if dh <= math.log(0.5):
                break
            eps *= 2.0
        else:
            if dh >= math.log(0.5):
                break
            eps *= 0.5
        if eps > 1.0e7 or eps < 1.0e-10:
            break
    return eps


@jit_kernel
def _build_subtree(
    kind,
    pack_f,
    pack_i,
    n_leaves,
    eps_signed,
    h0,
    max_delta,
    inv_mass,
    rng,
    theta_edge,
    r_edge,
    grad_edge,
    scratch,
    theta_prop,
    grad_prop,
    rho_sub,
    p_inner,
    ckpt_p,
    ckpt_csum,
    rho_blk,
):
    """Extend the trajectory by ``n_leaves`` leapfrog steps (one subtree).

    Mutates the edge state in place; writes the subtree's multinomial
    proposal into ``theta_prop``/``grad_prop`` and its momentum sum into
    ``rho_sub``. Returns (log_sum_weight, logp_prop, turning, divergent,
    sum_accept, leaves_done).
    """
    d = theta_edge.shape[0]
    lsw = _NEG_INF
    logp_prop = 0.0
    sum_accept = 0.0
    sp = 0  # checkpoint stack pointer
    for i in range(d):
        rho_sub[i] = 0.0

    for leaf in range(n_leaves):
        logp = _leapfrog(
            kind, pack_f, pack_i, theta_edge, r_edge, grad_edge, scratch, inv_mass, eps_signed
        )
        if leaf == 0:
            p_inner[:] = r_edge
        w = _NEG_INF
        if math.isfinite(logp):
            w = logp - _kinetic(r_edge, inv_mass) - h0
        if not math.isfinite(w) or w < -max_delta:
            return lsw, logp_prop, False, True, sum_accept, leaf + 1
        if w > 0.0:
            sum_accept += 1.0
        else:
            sum_accept += math.exp(w)

        lsw_new = _logaddexp(lsw, w)
        if math.log(rng_uniform(rng)) < w - lsw_new:
            theta_prop[:] = theta_edge
            grad_prop[:] = grad_edge
            logp_prop = logp
        lsw = lsw_new

        if n_leaves > 1 and leaf % 2 == 0:
            # leaf starts at least one power-of-two block: checkpoint it
            ckpt_p[sp, :] = r_edge
            ckpt_csum[sp, :] = rho_sub
            sp += 1
        for i in range(d):
            rho_sub[i] += r_edge[i]
        if leaf % 2 == 1:
            # check every block this leaf closes (trailing ones of its index)
            trailing = 0
            ii = leaf
            while ii & 1 == 1:
                trailing += 1
                ii >>= 1
            for k in range(1, trailing + 1):
                entry = sp - k
                for i in range(d):
                    rho_blk[i] = rho_sub[i] - ckpt_csum[entry, i]
                if _is_turning(ckpt_p[entry], r_edge, rho_blk, inv_mass):
                    return lsw, logp_prop, True, False, sum_accept, leaf + 1
            sp -= trailing - 1

    return lsw, logp_prop, False, False, sum_accept, n_leaves


@jit_kernel
def run_chain(
    kind,
    pack_f,
    pack_i,
    d,
    scratch_len,
    init_lo,
    init_hi,
    n_iter,
    n_warmup,
    seed,
    max_depth,
    target_accept,
    win_start,
    win_end,
    max_delta,
):
    """Run one chain; returns post-warmup draws and per-iteration stats."""
    rng = rng_new(seed)
    scratch = np.zeros(scratch_len)

    theta = np.empty(d)
    grad = np.empty(d)
    inv_mass = np.ones(d)

    # initialise from the given box, re-drawing while the density is degenerate
    logp = _NEG_INF
    for _ in range(100):
        for i in range(d):
            theta[i] = init_lo[i] + (init_hi[i] - init_lo[i]) * rng_uniform(rng)
        logp = logp_grad(kind, theta, pack_f, pack_i, grad, scratch)
        if math.isfinite(logp):
            ok = True
            for i in range(d):
                if not math.isfinite(grad[i]):
                    ok = False
                    break
            if ok:
                break
            logp = _NEG_INF

    # tree state buffers
    theta_minus = np.empty(d)
    r_minus = np.empty(d)
    grad_minus = np.empty(d)
    theta_plus = np.empty(d)
    r_plus = np.empty(d)
    grad_plus = np.empty(d)
    theta_prop = np.empty(d)
    grad_prop = np.empty(d)
    theta_sub = np.empty(d)
    grad_sub = np.empty(d)
    rho_total = np.empty(d)
    rho_sub = np.empty(d)
    rho_blk = np.empty(d)
    p_inner = np.empty(d)
    r_edge_old = np.empty(d)
    ckpt_p = np.empty((max_depth + 2, d))
    ckpt_csum = np.empty((max_depth + 2, d))

    # warmup adaptation state
    eps = _find_reasonable_eps(kind, pack_f, pack_i, theta, logp, grad, inv_mass, rng, scratch)
    da_mu = math.log(10.0 * eps)
    da_log_eps = math.log(eps)
    da_log_eps_bar = math.log(eps)
    da_hbar = 0.0
    da_count = 0
    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    wf_count = 0
    wf_mean = np.zeros(d)
    wf_m2 = np.zeros(d)
    win_idx = 0
    n_windows = win_start.shape[0]

    n_keep = n_iter - n_warmup
    draws = np.empty((n_keep, d))
    accept_out = np.empty(n_keep)
    depth_out = np.empty(n_keep, dtype=np.int64)
    div_out = np.zeros(n_keep, dtype=np.int64)
    n_div_total = 0

    for it in range(n_iter):
        adapting = it < n_warmup

        _draw_momentum(r_minus, inv_mass, rng)
        r_plus[:] = r_minus
        rho_total[:] = r_minus
        theta_minus[:] = theta
        theta_plus[:] = theta
        grad_minus[:] = grad
        grad_plus[:] = grad
        theta_prop[:] = theta
        grad_prop[:] = grad
        logp_prop = logp
        h0 = logp - _kinetic(r_minus, inv_mass)
        lsw_tree = 0.0

        sum_accept = 0.0
        n_leaf = 0
        divergent = False
        depth_done = 0

        for depth in range(max_depth):
            forward = rng_uniform(rng) < 0.5
            if forward:
                r_edge_old[:] = r_plus
                lsw_sub, logp_sub, turning_sub, div_sub, acc_sub, leaves = _build_subtree(
                    kind, pack_f, pack_i, 1 << depth, eps, h0, max_delta, inv_mass, rng,
                    theta_plus, r_plus, grad_plus, scratch,
                    theta_sub, grad_sub, rho_sub, p_inner, ckpt_p, ckpt_csum, rho_blk,
                )
            else:
                r_edge_old[:] = r_minus
                lsw_sub, logp_sub, turning_sub, div_sub, acc_sub, leaves = _build_subtree(
                    kind, pack_f, pack_i, 1 << depth, -eps, h0, max_delta, inv_mass, rng,
                    theta_minus, r_minus, grad_minus, scratch,
                    theta_sub, grad_sub, rho_sub, p_inner, ckpt_p, ckpt_csum, rho_blk,
                )
            sum_accept += acc_sub
            n_leaf += leaves
            if div_sub:
                divergent = True
                break
            if turning_sub:
                break

            # biased progressive sampling between old tree and new subtree
            accept_sub = False
            if lsw_sub > lsw_tree:
                accept_sub = True
            elif math.log(rng_uniform(rng)) < lsw_sub - lsw_tree:
                accept_sub = True
            if accept_sub:
                theta_prop[:] = theta_sub
                grad_prop[:] = grad_sub
                logp_prop = logp_sub
            lsw_tree = _logaddexp(lsw_tree, lsw_sub)
            depth_done = depth + 1

            # merged-tree U-turn checks (full + boundary-extended)
            turned = False
            for i in range(d):
                rho_blk[i] = rho_total[i] + rho_sub[i]
            if _is_turning(r_minus, r_plus, rho_blk, inv_mass):
                turned = True
            if not turned:
                for i in range(d):
                    rho_blk[i] = rho_total[i] + p_inner[i]
                if forward:
                    if _is_turning(r_minus, p_inner, rho_blk, inv_mass):
                        turned = True
                else:
                    if _is_turning(p_inner, r_plus, rho_blk, inv_mass):
                        turned = True
            if not turned:
                for i in range(d):
                    rho_blk[i] = rho_sub[i] + r_edge_old[i]
                if forward:
                    if _is_turning(r_edge_old, r_plus, rho_blk, inv_mass):
                        turned = True
                else:
                    if _is_turning(r_minus, r_edge_old, rho_blk, inv_mass):
                        turned = True
            for i in range(d):
                rho_total[i] += rho_sub[i]
            if turned:
                break

        theta[:] = theta_prop
        grad[:] = grad_prop
        logp = logp_prop
        accept_stat = sum_accept / n_leaf if n_leaf > 0 else 0.0
        if divergent:
            n_div_total += 1

        if adapting:
            da_count += 1
            eta = 1.0 / (da_count + t0)
            da_hbar = (1.0 - eta) * da_hbar + eta * (target_accept - accept_stat)
            da_log_eps = da_mu - da_hbar * math.sqrt(da_count) / gamma
            x_eta = da_count ** (-kappa)
            da_log_eps_bar = x_eta * da_log_eps + (1.0 - x_eta) * da_log_eps_bar
            eps = math.exp(da_log_eps)

            if win_idx < n_windows and it >= win_start[win_idx]:
                wf_count += 1
                for i in range(d):
                    delta = theta[i] - wf_mean[i]
                    wf_mean[i] += delta / wf_count
                    wf_m2[i] += delta * (theta[i] - wf_mean[i])
            if win_idx < n_windows and it == win_end[win_idx] - 1:
                if wf_count >= 2:
                    shrink = wf_count / (wf_count + 5.0)
                    for i in range(d):
                        var = wf_m2[i] / (wf_count - 1.0)
                        inv_mass[i] = shrink * var + 1.0e-3 * (1.0 - shrink)
                        if inv_mass[i] <= 0.0:
                            inv_mass[i] = 1.0e-3
                wf_count = 0
                for i in range(d):
                    wf_mean[i] = 0.0
                    wf_m2[i] = 0.0
                win_idx += 1
                eps = _find_reasonable_eps(
                    kind, pack_f, pack_i, theta, logp, grad, inv_mass, rng, scratch
                )
                da_mu = math.log(10.0 * eps)
                da_log_eps = math.log(eps)
                da_log_eps_bar = math.log(eps)
                da_hbar = 0.0
                da_count = 0
            if it == n_warmup - 1:
                eps = math.exp(da_log_eps_bar)
        else:
            k = it - n_warmup
            draws[k, :] = theta
            accept_out[k] = accept_stat
            depth_out[k] = depth_done
            if divergent:
                div_out[k] = 1

    return draws, accept_out, depth_out, div_out, eps, inv_mass, n_div_total


def warmup_windows(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Stan-style memory windows for mass-matrix adaptation.

    Returns (win_start, win_end) int64 arrays of [start, end) iteration
    ranges; the metric updates after the last iteration of each window.
    """
    if warmup < 20:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if init_buffer + base_window + term_buffer > warmup:
        init_buffer = int(0.15 * warmup)
        term_buffer = int(0.10 * warmup)
        base_window = warmup - init_buffer - term_buffer
    starts, ends = [], []
    pos = init_buffer
    size = base_window
    last = warmup - term_buffer
    while pos < last:
        end = pos + size
        # the closing window absorbs the tail once the next doubling overshoots
        if pos + 3 * size > last:
            end = last
        starts.append(pos)
        ends.append(min(end, last))
        pos = ends[-1]
        size *= 2
    return np.asarray(starts, dtype=np.int64), np.asarray(ends, dtype=np.int64)
