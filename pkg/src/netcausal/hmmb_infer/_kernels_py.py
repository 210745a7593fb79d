"""Pure NumPy implementation of the HMMB sampler kernels.

This module defines the reference semantics; ``_kernels.pyx`` mirrors it
loop for loop. All randomness is supplied by the caller as pre-drawn arrays,
so both backends consume identical draws and make identical decisions.

Shared array conventions
------------------------
a        (N, N) float64  interaction counts, zero diagonal
on       (N, N) uint8    edge switches I
mix      (N, N) float64  cached pi_i' B pi_j
lam      (N,)   float64
pi       (N, K) float64  rows on the simplex
block    (K, K) float64
"""

from __future__ import annotations

import math

import numpy as np

NEG_INF = -math.inf

POLICY_MAP_FIXED = 0
POLICY_FULL = 1
POLICY_SELECTIVE = 2


def _accept(log_ratio: float, u: float) -> bool:
    # u == 0 never happens with numpy's [0, 1) uniforms except by chance; log(0) = -inf
    # would then accept anything finite, which is the correct limit.
    if math.isnan(log_ratio):
        return False
    if log_ratio >= 0.0:
        return True
    return u < math.exp(log_ratio)


def sweep_lambda(
    a, on, mix, lam, timespan, alpha_prior, lo, hi, order, steps, normals, uniforms,
    accepted, log_ratios,
):
    """Metropolis sweep over activity levels ``lam[order]`` (in place)."""
    for pos in range(order.shape[0]):
        i = int(order[pos])
        cur = lam[i]
        prop = cur + steps[i] * normals[pos]
        if not (lo <= prop <= hi):
            log_ratios[pos] = NEG_INF
            accepted[pos] = 0
            continue
        out_on = on[i].astype(bool)
        in_on = on[:, i].astype(bool)
        out_on[i] = False
        in_on[i] = False
        s_a = a[i, out_on].sum() + a[in_on, i].sum()
        s_r = timespan * ((lam[out_on] * mix[i, out_on]).sum() + (lam[in_on] * mix[in_on, i]).sum())
        lr = math.log(prop / cur)
        log_ratio = s_a * lr - (prop - cur) * s_r - alpha_prior * lr
        log_ratios[pos] = log_ratio
        if _accept(log_ratio, uniforms[pos]):
            lam[i] = prop
            accepted[pos] = 1
        else:
            accepted[pos] = 0


def _edge_delta(a_vals, old, new, weight):
    """sum a*(log new - log old) - weight*(new - old) over the given edges."""
    if np.any((new <= 0.0) & (a_vals > 0.0)):
        return NEG_INF
    pos = a_vals > 0.0
    total = float(np.sum(a_vals[pos] * (np.log(new[pos]) - np.log(old[pos]))))
    return total - float(np.sum(weight * (new - old)))


def sweep_block(
    a, on, mix, lam, pi, block, timespan, order, step, normals, uniforms, fixed,
    accepted, log_ratios,
):
    """Metropolis sweep over block entries ``order`` (flat row-major ids)."""
    k = block.shape[0]
    onb = on.astype(bool)
    np.fill_diagonal(onb, False)
    rows, cols = np.nonzero(onb)
    a_on = a[rows, cols]
    w_on = timespan * lam[rows] * lam[cols]
    for pos in range(order.shape[0]):
        flat = int(order[pos])
        m, q = divmod(flat, k)
        if fixed[flat]:
            log_ratios[pos] = 0.0
            accepted[pos] = 0
            continue
        cur = block[m, q]
        prop = cur + step * normals[pos]
        if prop < 0.0:
            log_ratios[pos] = NEG_INF
            accepted[pos] = 0
            continue
        delta = prop - cur
        t = pi[rows, m] * pi[cols, q]
        old = mix[rows, cols]
        new = old + delta * t
        log_ratio = _edge_delta(a_on, old, new, w_on)
        log_ratios[pos] = log_ratio
        if _accept(log_ratio, uniforms[pos]):
            block[m, q] = prop
            mix += delta * np.outer(pi[:, m], pi[:, q])
            accepted[pos] = 1
        else:
            accepted[pos] = 0


def alr(p, clamp):
    c = np.maximum(p, clamp)
    return np.log(c[:-1]) - math.log(c[-1])


def alr_inverse(eta):
    full = np.append(eta, 0.0)
    full -= full.max()
    e = np.exp(full)
    return e / e.sum()


def sweep_pi(
    a, on, mix, lam, pi, block, timespan, order, scales, normals, uniforms, clamp,
    accepted, log_ratios, log_hastings,
):
    """Logistic-normal Metropolis-Hastings sweep over memberships ``pi[order]``."""
    n, k = pi.shape
    for pos in range(order.shape[0]):
        i = int(order[pos])
        old = pi[i].copy()
        eta = alr(old, clamp) + scales * normals[pos]
        new = alr_inverse(eta)
        u_old = block @ pi.T  # (K, N): column j is B pi_j
        v_old = block.T @ pi.T  # column j is B' pi_j
        out_new = new @ u_old
        in_new = new @ v_old
        out_on = on[i].astype(bool)
        in_on = on[:, i].astype(bool)
        out_on[i] = False
        in_on[i] = False
        w = timespan * lam[i] * lam
        d_out = _edge_delta(a[i, out_on], mix[i, out_on], out_new[out_on], w[out_on])
        d_in = _edge_delta(a[in_on, i], mix[in_on, i], in_new[in_on], w[in_on])
        hast = float(np.sum(np.log(np.maximum(new, clamp))) - np.sum(np.log(np.maximum(old, clamp))))
        log_ratio = d_out + d_in + hast
        log_ratios[pos] = log_ratio
        log_hastings[pos] = hast
        if _accept(log_ratio, uniforms[pos]):
            pi[i] = new
            mix[i, :] = out_new
            mix[:, i] = in_new
            mix[i, i] = new @ block @ new
            accepted[pos] = 1
        else:
            accepted[pos] = 0


def sweep_switches(a, on, mix, lam, timespan, sparsity, uniforms, policy, cutoff):
    """Gibbs update of the edge switches (in place)."""
    pos_count = a > 0
    if policy == POLICY_MAP_FIXED:
        on[...] = pos_count
    else:
        rate = timespan * np.outer(lam, lam) * mix
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(-rate) * sparsity
            denom = e + (1.0 - sparsity)
            p_on = np.where(denom > 0, e / np.where(denom > 0, denom, 1.0), 1.0)
        draw = uniforms < p_on
        if policy == POLICY_SELECTIVE:
            draw &= rate < cutoff
        on[...] = np.where(pos_count, True, draw)
    np.fill_diagonal(on, 0)


def log_joint(a, on, mix, lam, timespan, sparsity, alpha_prior, log_fact):
    """Log joint posterior up to the flat priors on B and pi.

    Returns -inf when a positive count sits on an off switch.
    """
    onb = on.astype(bool)
    np.fill_diagonal(onb, False)
    if np.any((a > 0) & ~onb):
        return NEG_INF
    rows, cols = np.nonzero(onb)
    rate = timespan * lam[rows] * lam[cols] * mix[rows, cols]
    av = a[rows, cols]
    if np.any((rate <= 0) & (av > 0)):
        return NEG_INF
    pos = av > 0
    total = float(np.sum(av[pos] * np.log(rate[pos])) - np.sum(rate) - np.sum(log_fact[rows, cols]))
    n = lam.shape[0]
    n_on = rows.shape[0]
    n_off = n * (n - 1) - n_on
    if n_on:
        total += n_on * math.log(sparsity) if sparsity > 0 else NEG_INF
    if n_off:
        total += n_off * math.log1p(-sparsity) if sparsity < 1 else NEG_INF
    total -= alpha_prior * float(np.sum(np.log(lam)))
    return total
