# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring and gradient kernels.

Mirrors :mod:`transe_nmm._fallback` argument for argument. Neighbor pairs
are passed in CSR form (``ptr``, ``nbr_ent``, ``nbr_rel``).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef inline f64 _rel_sign(i64 r, i64 n_rel, i64* base) noexcept nogil:
    if r < n_rel:
        base[0] = r
        return 1.0
    base[0] = r - n_rel
    return -1.0


cdef f64 _theta(f64[:, ::1] ent, f64[:, ::1] rel, f64[::1] alpha, f64[:, ::1] beta,
                i64[::1] ptr, i64[::1] nbr_ent, i64[::1] nbr_rel,
                i64 e, i64 query, i64 exclude, f64 delta, f64* out) noexcept nogil:
    """Write theta_{e,query} (pairs with entity ``exclude`` skipped) into out; return Z."""
    cdef Py_ssize_t k = ent.shape[1], j
    cdef i64 n_rel = rel.shape[0], p, e2, base
    cdef f64 own = delta + exp(alpha[e]), w, z, sgn
    cdef bint used = False
    z = own
    for j in range(k):
        out[j] = own * ent[e, j]
    for p in range(ptr[e], ptr[e + 1]):
        e2 = nbr_ent[p]
        if e2 == exclude:
            continue
        used = True
        w = exp(beta[query, nbr_rel[p]])
        sgn = _rel_sign(nbr_rel[p], n_rel, &base)
        z += w
        for j in range(k):
            out[j] += w * (ent[e2, j] + sgn * rel[base, j])
    # empty effective neighborhood: weight one on the own vector, exactly
    for j in range(k):
        out[j] = out[j] / z if used else ent[e, j]
    return z


cdef inline bint _has_entity(i64[::1] ptr, i64[::1] nbr_ent, i64 e, i64 x) noexcept nogil:
    cdef i64 p
    for p in range(ptr[e], ptr[e + 1]):
        if nbr_ent[p] == x:
            return True
    return False


cdef f64 _dist(f64* hv, f64[:, ::1] rel, i64 r, f64* tv, Py_ssize_t k, bint l1,
               f64* d) noexcept nogil:
    cdef Py_ssize_t j
    cdef f64 acc = 0.0
    for j in range(k):
        d[j] = hv[j] + rel[r, j] - tv[j]
        if l1:
            acc += fabs(d[j])
        else:
            acc += d[j] * d[j]
    return acc if l1 else sqrt(acc)


def score_triples(f64[:, ::1] ent, f64[:, ::1] rel, f64[::1] alpha, f64[:, ::1] beta,
                  i64[::1] ptr, i64[::1] nbr_ent, i64[::1] nbr_rel,
                  i64[:, ::1] triples, double delta, bint l1):
    cdef Py_ssize_t n = triples.shape[0], k = ent.shape[1], i
    cdef i64 n_rel = rel.shape[0], h, r, t
    out_arr = np.empty(n, dtype=np.float64)
    cdef f64[::1] out = out_arr
    cdef f64[::1] buf = np.empty(3 * k, dtype=np.float64)
    with nogil:
        for i in range(n):
            h = triples[i, 0]
            r = triples[i, 1]
            t = triples[i, 2]
            _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, h, r, t, delta, &buf[0])
            _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, t, r + n_rel, h, delta, &buf[k])
            out[i] = _dist(&buf[0], rel, r, &buf[k], k, l1, &buf[2 * k])
    return out_arr


def theta_all(f64[:, ::1] ent, f64[:, ::1] rel, f64[::1] alpha, f64[:, ::1] beta,
              i64[::1] ptr, i64[::1] nbr_ent, i64[::1] nbr_rel, i64 query, double delta):
    """theta_{e,query} for every entity, without exclusion."""
    cdef Py_ssize_t n = ent.shape[0], k = ent.shape[1]
    cdef i64 e
    out_arr = np.empty((n, k), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    with nogil:
        for e in range(n):
            _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, e, query, -1, delta, &out[e, 0])
    return out_arr


def candidate_scores(f64[:, ::1] ent, f64[:, ::1] rel, f64[::1] alpha, f64[:, ::1] beta,
                     i64[::1] ptr, i64[::1] nbr_ent, i64[::1] nbr_rel,
                     i64 fixed, i64 r, bint corrupt_head, f64[:, ::1] theta_var,
                     double delta, bint l1):
    """Scores of every entity substituted into the head (or tail) slot.

    ``theta_var`` holds the unexcluded representation of every candidate for
    the varying slot's query relation; entries are recomputed only where the
    exclusion rule changes them.
    """
    cdef Py_ssize_t n = ent.shape[0], k = ent.shape[1], j
    cdef i64 n_rel = rel.shape[0], c
    cdef i64 q_fixed = r + n_rel if corrupt_head else r
    cdef i64 q_var = r if corrupt_head else r + n_rel
    out_arr = np.empty(n, dtype=np.float64)
    cdef f64[::1] out = out_arr
    cdef f64[::1] buf = np.empty(4 * k, dtype=np.float64)
    cdef f64* fixed_base = &buf[0]
    cdef f64* fixed_ex = &buf[k]
    cdef f64* var_ex = &buf[2 * k]
    cdef f64* d = &buf[3 * k]
    cdef f64* fv
    cdef f64* vv
    with nogil:
        _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, fixed, q_fixed, -1, delta, fixed_base)
        for c in range(n):
            if _has_entity(ptr, nbr_ent, fixed, c):
                _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, fixed, q_fixed, c, delta, fixed_ex)
                fv = fixed_ex
            else:
                fv = fixed_base
            if _has_entity(ptr, nbr_ent, c, fixed):
                _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, c, q_var, fixed, delta, var_ex)
                vv = var_ex
            else:
                vv = &theta_var[c, 0]
            if corrupt_head:
                out[c] = _dist(vv, rel, r, fv, k, l1, d)
            else:
                out[c] = _dist(fv, rel, r, vv, k, l1, d)
    return out_arr


cdef void _side_grad(f64[:, ::1] ent, f64[:, ::1] rel, f64[::1] alpha, f64[:, ::1] beta,
                     i64[::1] ptr, i64[::1] nbr_ent, i64[::1] nbr_rel,
                     i64 e, i64 query, i64 exclude, f64 delta, f64 z, f64* theta,
                     f64* g, f64 coef, bint vectors, bint mixing,
                     f64[:, ::1] g_ent, f64[:, ::1] g_rel, f64[::1] g_alpha, f64[:, ::1] g_beta,
                     cnp.uint8_t[::1] touched_ent, cnp.uint8_t[::1] touched_rel) noexcept nogil:
    cdef Py_ssize_t k = ent.shape[1], j
    cdef i64 n_rel = rel.shape[0], p, e2, base
    cdef f64 ea = exp(alpha[e]), a = (delta + ea) / z, b, sgn, dot
    cdef bint any_pair = False
    if vectors:
        for j in range(k):
            g_ent[e, j] += coef * a * g[j]
        touched_ent[e] = 1
    for p in range(ptr[e], ptr[e + 1]):
        e2 = nbr_ent[p]
        if e2 == exclude:
            continue
        any_pair = True
        b = exp(beta[query, nbr_rel[p]]) / z
        sgn = _rel_sign(nbr_rel[p], n_rel, &base)
        if vectors:
            for j in range(k):
                g_ent[e2, j] += coef * b * g[j]
                g_rel[base, j] += coef * sgn * b * g[j]
            touched_ent[e2] = 1
            touched_rel[base] = 1
        if mixing:
            dot = 0.0
            for j in range(k):
                dot += g[j] * (ent[e2, j] + sgn * rel[base, j] - theta[j])
            g_beta[query, nbr_rel[p]] += coef * dot * b
    if mixing and any_pair:
        dot = 0.0
        for j in range(k):
            dot += g[j] * (ent[e, j] - theta[j])
        g_alpha[e] += coef * dot * ea / z


cdef void _norm_grad(f64* d, Py_ssize_t k, f64 f, bint l1, f64* g) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(k):
        if l1:
            g[j] = 1.0 if d[j] > 0 else (-1.0 if d[j] < 0 else 0.0)
        else:
            g[j] = d[j] / f if f > 0 else 0.0


def batch_gradients(f64[:, ::1] ent, f64[:, ::1] rel, f64[::1] alpha, f64[:, ::1] beta,
                    i64[::1] ptr, i64[::1] nbr_ent, i64[::1] nbr_rel,
                    i64[:, ::1] pos, i64[:, ::1] neg, double delta, double gamma, bint l1,
                    bint vectors, bint mixing,
                    f64[:, ::1] g_ent, f64[:, ::1] g_rel, f64[::1] g_alpha, f64[:, ::1] g_beta,
                    cnp.uint8_t[::1] touched_ent, cnp.uint8_t[::1] touched_rel):
    """Accumulate hinge-loss gradients of a minibatch into the dense buffers.

    Returns ``(loss_sum, n_active)``.
    """
    cdef Py_ssize_t n = pos.shape[0], k = ent.shape[1], i, j, s
    cdef i64 n_rel = rel.shape[0]
    cdef i64 hs[2]
    cdef i64 ts[2]
    cdef f64 zs[4]
    cdef f64 fs[2]
    cdef f64 coef, loss, total = 0.0
    cdef Py_ssize_t active = 0
    cdef i64 r
    cdef f64[::1] buf = np.empty(8 * k, dtype=np.float64)
    # buf layout: [th_h, th_t] for pos then neg, then d, g
    cdef f64* th = &buf[0]
    cdef f64* d = &buf[4 * k]
    cdef f64* g = &buf[5 * k]
    cdef f64* d2 = &buf[6 * k]
    with nogil:
        for i in range(n):
            r = pos[i, 1]
            hs[0] = pos[i, 0]
            ts[0] = pos[i, 2]
            hs[1] = neg[i, 0]
            ts[1] = neg[i, 2]
            for s in range(2):
                zs[2 * s] = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel,
                                   hs[s], r, ts[s], delta, &th[2 * s * k])
                zs[2 * s + 1] = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel,
                                       ts[s], r + n_rel, hs[s], delta, &th[(2 * s + 1) * k])
            fs[0] = _dist(&th[0], rel, r, &th[k], k, l1, d)
            fs[1] = _dist(&th[2 * k], rel, r, &th[3 * k], k, l1, d2)
            loss = gamma + fs[0] - fs[1]
            if loss <= 0:
                continue
            total += loss
            active += 1
            for s in range(2):
                coef = 1.0 if s == 0 else -1.0
                _norm_grad(d if s == 0 else d2, k, fs[s], l1, g)
                if vectors:
                    for j in range(k):
                        g_rel[r, j] += coef * g[j]
                    touched_rel[r] = 1
                _side_grad(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, hs[s], r, ts[s], delta,
                           zs[2 * s], &th[2 * s * k], g, coef, vectors, mixing,
                           g_ent, g_rel, g_alpha, g_beta, touched_ent, touched_rel)
                _side_grad(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, ts[s], r + n_rel, hs[s], delta,
                           zs[2 * s + 1], &th[(2 * s + 1) * k], g, -coef, vectors, mixing,
                           g_ent, g_rel, g_alpha, g_beta, touched_ent, touched_rel)
    return total, active
