"""Pure numpy implementation of the kernel API (used when the extension is absent)."""

from __future__ import annotations

import numpy as np


def _signed_rel(rel, nbr_rel):
    n_rel = rel.shape[0]
    inv = nbr_rel >= n_rel
    base = np.where(inv, nbr_rel - n_rel, nbr_rel)
    return base, np.where(inv, -1.0, 1.0)


def _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, e, query, exclude, delta):
    lo, hi = ptr[e], ptr[e + 1]
    ne, nr = nbr_ent[lo:hi], nbr_rel[lo:hi]
    keep = ne != exclude
    ne, nr = ne[keep], nr[keep]
    own = delta + np.exp(alpha[e])
    w = np.exp(beta[query, nr])
    base, sgn = _signed_rel(rel, nr)
    u = ent[ne] + sgn[:, None] * rel[base]
    z = own + w.sum()
    theta = (own * ent[e] + w @ u) / z if len(ne) else ent[e].copy()
    return theta, z, ne, nr, w, u


def _dist(d, l1):
    return np.abs(d).sum(axis=-1) if l1 else np.sqrt((d * d).sum(axis=-1))


def score_triples(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, triples, delta, l1):
    n_rel = rel.shape[0]
    out = np.empty(len(triples))
    for i, (h, r, t) in enumerate(np.asarray(triples).tolist()):
        th_h = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, h, r, t, delta)[0]
        th_t = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, t, r + n_rel, h, delta)[0]
        out[i] = _dist(th_h + rel[r] - th_t, l1)
    return out


def theta_all(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, query, delta):
    n = ent.shape[0]
    owner = np.repeat(np.arange(n), np.diff(ptr))
    own = delta + np.exp(alpha)
    w = np.exp(beta[query, nbr_rel])
    base, sgn = _signed_rel(rel, nbr_rel)
    u = ent[nbr_ent] + sgn[:, None] * rel[base]
    num = own[:, None] * ent
    np.add.at(num, owner, w[:, None] * u)
    z = own + np.bincount(owner, weights=w, minlength=n)
    empty = np.diff(ptr) == 0
    return np.where(empty[:, None], ent, num / z[:, None])


def candidate_scores(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, fixed, r, corrupt_head,
                     theta_var, delta, l1):
    n, n_rel = ent.shape[0], rel.shape[0]
    q_fixed = r + n_rel if corrupt_head else r
    q_var = r if corrupt_head else r + n_rel
    fixed_base = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, fixed, q_fixed, -1, delta)[0]
    fixed_side = np.broadcast_to(fixed_base, theta_var.shape).copy()
    var_side = theta_var.copy()
    lo, hi = ptr[fixed], ptr[fixed + 1]
    for c in np.unique(nbr_ent[lo:hi]).tolist():
        fixed_side[c] = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, fixed, q_fixed, c, delta)[0]
    owner = np.repeat(np.arange(n), np.diff(ptr))
    for c in np.unique(owner[nbr_ent == fixed]).tolist():
        var_side[c] = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, c, q_var, fixed, delta)[0]
    if corrupt_head:
        d = var_side + rel[r] - fixed_side
    else:
        d = fixed_side + rel[r] - var_side
    return _dist(d, l1)


def _norm_grad(d, f, l1):
    if l1:
        return np.sign(d)
    return d / f if f > 0 else np.zeros_like(d)


def batch_gradients(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, pos, neg, delta, gamma, l1,
                    vectors, mixing, g_ent, g_rel, g_alpha, g_beta, touched_ent, touched_rel):
    n_rel = rel.shape[0]
    total, active = 0.0, 0
    for (h, r, t), (h2, _, t2) in zip(np.asarray(pos).tolist(), np.asarray(neg).tolist()):
        sides = []
        fs = []
        for hh, tt in ((h, t), (h2, t2)):
            head = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, hh, r, tt, delta)
            tail = _theta(ent, rel, alpha, beta, ptr, nbr_ent, nbr_rel, tt, r + n_rel, hh, delta)
            d = head[0] + rel[r] - tail[0]
            sides.append((hh, tt, head, tail, d))
            fs.append(float(_dist(d, l1)))
        loss = gamma + fs[0] - fs[1]
        if loss <= 0:
            continue
        total += loss
        active += 1
        for coef, (hh, tt, head, tail, d), f in zip((1.0, -1.0), sides, fs):
            g = _norm_grad(d, f, l1)
            if vectors:
                g_rel[r] += coef * g
                touched_rel[r] = 1
            for e, q, side, c in ((hh, r, head, coef), (tt, r + n_rel, tail, -coef)):
                theta, z, ne, nr, w, u = side
                ea = np.exp(alpha[e])
                b = w / z
                if vectors:
                    g_ent[e] += c * (delta + ea) / z * g
                    touched_ent[e] = 1
                    base, sgn = _signed_rel(rel, nr)
                    np.add.at(g_ent, ne, c * b[:, None] * g)
                    np.add.at(g_rel, base, c * (sgn * b)[:, None] * g)
                    touched_ent[ne] = 1
                    touched_rel[base] = 1
                if mixing and len(ne):
                    np.add.at(g_beta[q], nr, c * ((u - theta) @ g) * b)
                    g_alpha[e] += c * float(g @ (ent[e] - theta)) * ea / z
    return total, active
