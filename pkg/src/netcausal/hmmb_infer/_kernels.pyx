# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled HMMB sampler kernels.

Loop-for-loop twin of ``_kernels_py``; see that module for the array
conventions. Every function here must make the same accept/reject decisions
as its Python counterpart given the same pre-drawn random numbers.
"""

from libc.math cimport log, exp, log1p, INFINITY, isnan

import numpy as np
cimport numpy as cnp

cnp.import_array()

POLICY_MAP_FIXED = 0
POLICY_FULL = 1
POLICY_SELECTIVE = 2


cdef inline bint _accept(double log_ratio, double u) nogil:
    if isnan(log_ratio):
        return False
    if log_ratio >= 0.0:
        return True
    return u < exp(log_ratio)


def sweep_lambda(
    const double[:, ::1] a, const cnp.uint8_t[:, ::1] on, const double[:, ::1] mix,
    double[::1] lam, double timespan, double alpha_prior, double lo, double hi,
    const cnp.int64_t[::1] order, const double[::1] steps, const double[::1] normals,
    const double[::1] uniforms, cnp.uint8_t[::1] accepted, double[::1] log_ratios,
):
    cdef Py_ssize_t n = lam.shape[0]
    cdef Py_ssize_t pos, i, j
    cdef double cur, prop, s_a, s_r_out, s_r_in, lr, log_ratio
    with nogil:
        for pos in range(order.shape[0]):
            i = order[pos]
            cur = lam[i]
            prop = cur + steps[i] * normals[pos]
            if not (lo <= prop <= hi):
                log_ratios[pos] = -INFINITY
                accepted[pos] = 0
                continue
            s_a = 0.0
            s_r_out = 0.0
            s_r_in = 0.0
            for j in range(n):
                if j == i:
                    continue
                if on[i, j]:
                    s_a += a[i, j]
                    s_r_out += lam[j] * mix[i, j]
                if on[j, i]:
                    s_a += a[j, i]
                    s_r_in += lam[j] * mix[j, i]
            lr = log(prop / cur)
            log_ratio = s_a * lr - (prop - cur) * (timespan * (s_r_out + s_r_in)) - alpha_prior * lr
            log_ratios[pos] = log_ratio
            if _accept(log_ratio, uniforms[pos]):
                lam[i] = prop
                accepted[pos] = 1
            else:
                accepted[pos] = 0


def sweep_block(
    const double[:, ::1] a, const cnp.uint8_t[:, ::1] on, double[:, ::1] mix,
    const double[::1] lam, const double[:, ::1] pi, double[:, ::1] block, double timespan,
    const cnp.int64_t[::1] order, double step, const double[::1] normals,
    const double[::1] uniforms, const cnp.uint8_t[::1] fixed,
    cnp.uint8_t[::1] accepted, double[::1] log_ratios,
):
    cdef Py_ssize_t n = lam.shape[0]
    cdef Py_ssize_t k = block.shape[0]
    cdef Py_ssize_t pos, flat, m, q, i, j
    cdef double cur, prop, delta, t, old, new, log_sum, lin_sum, log_ratio
    cdef bint dead
    with nogil:
        for pos in range(order.shape[0]):
            flat = order[pos]
            m = flat // k
            q = flat % k
            if fixed[flat]:
                log_ratios[pos] = 0.0
                accepted[pos] = 0
                continue
            cur = block[m, q]
            prop = cur + step * normals[pos]
            if prop < 0.0:
                log_ratios[pos] = -INFINITY
                accepted[pos] = 0
                continue
            delta = prop - cur
            log_sum = 0.0
            lin_sum = 0.0
            dead = False
            for i in range(n):
                if pi[i, m] == 0.0:
                    continue
                for j in range(n):
                    if j == i or not on[i, j]:
                        continue
                    t = pi[i, m] * pi[j, q]
                    old = mix[i, j]
                    new = old + delta * t
                    if a[i, j] > 0.0:
                        if new <= 0.0:
                            dead = True
                            break
                        log_sum += a[i, j] * (log(new) - log(old))
                    lin_sum += (timespan * lam[i] * lam[j]) * (new - old)
                if dead:
                    break
            log_ratio = -INFINITY if dead else log_sum - lin_sum
            log_ratios[pos] = log_ratio
            if _accept(log_ratio, uniforms[pos]):
                block[m, q] = prop
                for i in range(n):
                    for j in range(n):
                        mix[i, j] += delta * (pi[i, m] * pi[j, q])
                accepted[pos] = 1
            else:
                accepted[pos] = 0


def sweep_pi(
    const double[:, ::1] a, const cnp.uint8_t[:, ::1] on, double[:, ::1] mix,
    const double[::1] lam, double[:, ::1] pi, const double[:, ::1] block, double timespan,
    const cnp.int64_t[::1] order, const double[::1] scales, const double[:, ::1] normals,
    const double[::1] uniforms, double clamp, cnp.uint8_t[::1] accepted,
    double[::1] log_ratios, double[::1] log_hastings,
):
    cdef Py_ssize_t n = pi.shape[0]
    cdef Py_ssize_t k = pi.shape[1]
    cdef Py_ssize_t pos, i, j, c, d
    cdef double[::1] old = np.empty(k)
    cdef double[::1] new = np.empty(k)
    cdef double[::1] eta = np.empty(k)
    cdef double[::1] out_new = np.empty(n)
    cdef double[::1] in_new = np.empty(n)
    cdef double last, mx, tot, hast, w, d_out, d_in, log_ratio, uo, vo, self_mix
    cdef bint dead
    with nogil:
        for pos in range(order.shape[0]):
            i = order[pos]
            for c in range(k):
                old[c] = pi[i, c]
            last = log(old[k - 1] if old[k - 1] > clamp else clamp)
            for c in range(k - 1):
                eta[c] = log(old[c] if old[c] > clamp else clamp) - last + scales[c] * normals[pos, c]
            eta[k - 1] = 0.0
            mx = eta[0]
            for c in range(1, k):
                if eta[c] > mx:
                    mx = eta[c]
            tot = 0.0
            for c in range(k):
                new[c] = exp(eta[c] - mx)
                tot += new[c]
            for c in range(k):
                new[c] = new[c] / tot
            # new' B pi_j and pi_j' B new for every j
            for j in range(n):
                uo = 0.0
                vo = 0.0
                for c in range(k):
                    for d in range(k):
                        uo += new[c] * (block[c, d] * pi[j, d])
                        vo += pi[j, c] * (block[c, d] * new[d])
                out_new[j] = uo
                in_new[j] = vo
            d_out = 0.0
            d_in = 0.0
            dead = False
            for j in range(n):
                if j == i:
                    continue
                w = timespan * lam[i] * lam[j]
                if on[i, j]:
                    if a[i, j] > 0.0:
                        if out_new[j] <= 0.0:
                            dead = True
                            break
                        d_out += a[i, j] * (log(out_new[j]) - log(mix[i, j]))
                    d_out -= w * (out_new[j] - mix[i, j])
                if on[j, i]:
                    if a[j, i] > 0.0:
                        if in_new[j] <= 0.0:
                            dead = True
                            break
                        d_in += a[j, i] * (log(in_new[j]) - log(mix[j, i]))
                    d_in -= w * (in_new[j] - mix[j, i])
            hast = 0.0
            for c in range(k):
                hast += log(new[c] if new[c] > clamp else clamp)
                hast -= log(old[c] if old[c] > clamp else clamp)
            log_ratio = -INFINITY if dead else d_out + d_in + hast
            log_ratios[pos] = log_ratio
            log_hastings[pos] = hast
            if _accept(log_ratio, uniforms[pos]):
                for c in range(k):
                    pi[i, c] = new[c]
                for j in range(n):
                    mix[i, j] = out_new[j]
                    mix[j, i] = in_new[j]
                self_mix = 0.0
                for c in range(k):
                    for d in range(k):
                        self_mix += new[c] * block[c, d] * new[d]
                mix[i, i] = self_mix
                accepted[pos] = 1
            else:
                accepted[pos] = 0


def sweep_switches(
    const double[:, ::1] a, cnp.uint8_t[:, ::1] on, const double[:, ::1] mix,
    const double[::1] lam, double timespan, double sparsity, const double[:, ::1] uniforms,
    int policy, double cutoff,
):
    cdef Py_ssize_t n = lam.shape[0]
    cdef Py_ssize_t i, j
    cdef double rate, e, denom, p_on
    with nogil:
        for i in range(n):
            for j in range(n):
                if i == j:
                    on[i, j] = 0
                elif a[i, j] > 0.0:
                    on[i, j] = 1
                elif policy == 0:
                    on[i, j] = 0
                else:
                    rate = timespan * (lam[i] * lam[j]) * mix[i, j]
                    if policy == 2 and not (rate < cutoff):
                        on[i, j] = 0
                        continue
                    e = exp(-rate) * sparsity
                    denom = e + (1.0 - sparsity)
                    p_on = e / denom if denom > 0.0 else 1.0
                    on[i, j] = 1 if uniforms[i, j] < p_on else 0


def log_joint(
    const double[:, ::1] a, const cnp.uint8_t[:, ::1] on, const double[:, ::1] mix,
    const double[::1] lam, double timespan, double sparsity, double alpha_prior,
    const double[:, ::1] log_fact,
):
    cdef Py_ssize_t n = lam.shape[0]
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n_on = 0
    cdef double total = 0.0, rate, lam_log = 0.0
    cdef bint dead = False
    with nogil:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if not on[i, j]:
                    if a[i, j] > 0.0:
                        dead = True
                        break
                    continue
                n_on += 1
                rate = timespan * lam[i] * lam[j] * mix[i, j]
                if a[i, j] > 0.0:
                    if rate <= 0.0:
                        dead = True
                        break
                    total += a[i, j] * log(rate)
                total -= rate
                total -= log_fact[i, j]
            if dead:
                break
        for i in range(n):
            lam_log += log(lam[i])
    if dead:
        return -INFINITY
    cdef Py_ssize_t n_off = n * (n - 1) - n_on
    if n_on:
        total += n_on * log(sparsity) if sparsity > 0 else -INFINITY
    if n_off:
        total += n_off * log1p(-sparsity) if sparsity < 1 else -INFINITY
    total -= alpha_prior * lam_log
    return total
