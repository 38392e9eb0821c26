"""Pure-numpy versions of the compiled kernels (same signatures, same results)."""
from itertools import combinations

import numpy as np


def loglik_terms(theta, feats, sizes, chosen, want_hess):
    n, kmax, d = feats.shape
    if n == 0:
        return 0.0, np.zeros(d), np.zeros((d, d))
    mask = np.arange(kmax)[None, :] < sizes[:, None]
    util = np.where(mask, feats @ theta, -np.inf)
    umax = np.maximum(util.max(axis=1), 0.0)
    w = np.where(mask, np.exp(util - umax[:, None]), 0.0)
    z = np.exp(-umax) + w.sum(axis=1)
    logz = umax + np.log(z)
    p = w / z[:, None]
    rows = np.arange(n)
    bought = chosen >= 0
    safe = np.where(bought, chosen, 0)
    active = sizes > 0
    ll = float(np.sum(np.where(bought, util[rows, safe], 0.0)[active]) - np.sum(logz[active]))
    mean = np.einsum("tj,tja->ta", p, feats)
    grad = feats[rows[bought], chosen[bought]].sum(axis=0) - mean.sum(axis=0)
    if want_hess:
        neg_hess = np.einsum("tj,tja,tjb->ab", p, feats, feats) - mean.T @ mean
        neg_hess = 0.5 * (neg_hess + neg_hess.T)
    else:
        neg_hess = np.zeros((d, d))
    return ll, grad, neg_hess


def _objectives(a_sum, g_sum, b_sum, q_sum, omega):
    """Objective for a batch of candidate sums: a (m,), g (m,), b (m,d), q (m,d,d)."""
    denom = 1.0 + a_sum
    estr = g_sum / denom
    if omega <= 0.0:
        return estr
    mean = b_sum / denom[:, None]
    cov = q_sum / denom[:, None, None] - mean[:, :, None] * mean[:, None, :]
    lam = np.linalg.eigvalsh(cov)[:, -1]
    width = np.minimum(1.0, omega * np.sqrt(np.clip(lam, 0.0, None)))
    return estr + width


def _pick(values, lists):
    """Index of the max value; exact ties go to the lexicographically smallest list."""
    best = values.max()
    ties = np.flatnonzero(values == best)
    if ties.size == 1:
        return int(ties[0])
    return int(min(ties, key=lambda c: lists[c]))


def greedy_swap(u, r, x, capacity, omega, start, eps, max_moves):
    n_items, d = x.shape
    ux = u[:, None] * x
    uxx = ux[:, :, None] * x[:, None, :]
    ur = u * r
    cur = sorted(int(i) for i in start)
    moves = 0
    while True:
        idx = np.asarray(cur, dtype=np.int64)
        a0, g0 = u[idx].sum(), ur[idx].sum()
        b0, q0 = ux[idx].sum(axis=0), uxx[idx].sum(axis=0)
        if cur:
            cur_obj = float(_objectives(np.array([a0]), np.array([g0]), b0[None], q0[None], omega)[0])
        else:
            cur_obj = 0.0
        if moves >= max_moves:
            break
        outside = [i for i in range(n_items) if i not in set(cur)]
        cands = []
        for i in outside:
            for j in cur:
                cands.append((j, i))
            if len(cur) < capacity:
                cands.append((-1, i))
        if len(cur) > 1:
            cands.extend((j, -1) for j in cur)
        if not cands:
            break
        outs = np.array([c[0] for c in cands])
        ins = np.array([c[1] for c in cands])
        # sums over cur minus one item, by addition (subtracting a dominant
        # utility would leave only rounding error); last row: all of cur
        keep = 1.0 - np.eye(len(cur) + 1, len(cur))
        ex = [np.einsum("pk,k...->p...", keep, arr[idx]) for arr in (u, ur, ux, uxx)]
        pos = np.array([cur.index(j) if j >= 0 else len(cur) for j in outs], dtype=np.int64)
        sign_in = (ins >= 0).astype(float)
        si = np.maximum(ins, 0)
        a = ex[0][pos] + sign_in * u[si]
        g = ex[1][pos] + sign_in * ur[si]
        b = ex[2][pos] + sign_in[:, None] * ux[si]
        q = ex[3][pos] + sign_in[:, None, None] * uxx[si]
        vals = _objectives(a, g, b, q, omega)
        lists = []
        for j, i in cands:
            s = [it for it in cur if it != j]
            if i >= 0:
                s.append(i)
            lists.append(tuple(sorted(s)))
        c = _pick(vals, lists)
        if not vals[c] > cur_obj + eps:
            break
        cur = list(lists[c])
        moves += 1
    if 0.0 > cur_obj + eps:
        return np.empty(0, dtype=np.int64), 0.0, moves
    return np.asarray(cur, dtype=np.int64), cur_obj, moves


def brute_force(u, r, x, capacity, omega):
    n_items, d = x.shape
    ux = u[:, None] * x
    uxx = ux[:, :, None] * x[:, None, :]
    ur = u * r
    best_val, best_items = 0.0, ()
    visited = 1
    for k in range(1, min(capacity, n_items) + 1):
        combos = np.array(list(combinations(range(n_items), k)), dtype=np.int64)
        visited += len(combos)
        for lo in range(0, len(combos), 4096):
            chunk = combos[lo:lo + 4096]
            vals = _objectives(u[chunk].sum(axis=1), ur[chunk].sum(axis=1),
                               ux[chunk].sum(axis=1), uxx[chunk].sum(axis=1), omega)
            top = vals.max()
            if top < best_val:
                continue
            for c in np.flatnonzero(vals == top):
                cand = tuple(int(i) for i in chunk[c])
                if top > best_val or (top == best_val and cand < best_items):
                    best_val, best_items = float(top), cand
    return np.asarray(best_items, dtype=np.int64), best_val, visited
