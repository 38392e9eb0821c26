"""Numba-compiled hot loops.

Every function here has a twin with the same signature and semantics in
``_numpy.py``.  Arrays are float64 / int64 and C-contiguous; the dispatch
layer in ``kernels/__init__.py`` takes care of the conversions.
"""
import numpy as np

from .._accel import njit

_SQRT_EPS_SLACK = 1e-12


@njit
def loglik_terms(theta, feats, sizes, chosen, want_hess):
    """Log-likelihood, gradient and negative Hessian of an MNL observation log.

    feats[t, :sizes[t]] are the offered feature rows of entry t and
    chosen[t] is the position of the purchased row (-1 for no purchase).
    The Hessian is assembled as two Gram products so BLAS does the O(n d^2) part.
    """
    n, kmax, d = feats.shape
    ll = 0.0
    grad = np.zeros(d)
    rows = np.zeros((n * kmax if want_hess else 0, d))  # sqrt(p_j) * v_j
    means = np.zeros((n, d))
    util = np.empty(kmax)
    w = np.empty(kmax)
    for t in range(n):
        k = sizes[t]
        if k == 0:
            continue
        umax = 0.0
        for j in range(k):
            s = 0.0
            for a in range(d):
                s += feats[t, j, a] * theta[a]
            util[j] = s
            if s > umax:
                umax = s
        z = np.exp(-umax)
        for j in range(k):
            w[j] = np.exp(util[j] - umax)
            z += w[j]
        logz = umax + np.log(z)
        c = chosen[t]
        if c >= 0:
            ll += util[c] - logz
            for a in range(d):
                grad[a] += feats[t, c, a]
        else:
            ll -= logz
        for j in range(k):
            p = w[j] / z
            for a in range(d):
                means[t, a] += p * feats[t, j, a]
            if want_hess:
                sp = np.sqrt(p)
                for a in range(d):
                    rows[t * kmax + j, a] = sp * feats[t, j, a]
        for a in range(d):
            grad[a] -= means[t, a]
    if not want_hess:
        return ll, grad, np.zeros((d, d))
    neg_hess = rows.T @ rows - means.T @ means
    return ll, grad, 0.5 * (neg_hess + neg_hess.T)


@njit
def _fill_cov(a_sum, b_sum, q_sum, cov):
    d = b_sum.shape[0]
    denom = 1.0 + a_sum
    for a in range(d):
        ba = b_sum[a] / denom
        for b in range(d):
            cov[a, b] = q_sum[a, b] / denom - ba * (b_sum[b] / denom)


@njit
def _lam_max(cov):
    d = cov.shape[0]
    if d == 1:
        return cov[0, 0]
    return np.linalg.eigvalsh(cov)[d - 1]


@njit
def _lam_bounds(cov):
    """Wolkowicz-Styan bounds on the largest eigenvalue of a symmetric matrix."""
    d = cov.shape[0]
    if d == 1:
        return cov[0, 0], cov[0, 0]
    tr = 0.0
    fro2 = 0.0
    for a in range(d):
        tr += cov[a, a]
        for b in range(d):
            fro2 += cov[a, b] * cov[a, b]
    m = tr / d
    s2 = fro2 / d - m * m
    s = np.sqrt(s2) if s2 > 0.0 else 0.0
    return m + s / np.sqrt(d - 1.0), m + s * np.sqrt(d - 1.0)


@njit
def _width(lam, omega):
    if lam <= 0.0:
        return 0.0
    v = omega * np.sqrt(lam)
    return v if v < 1.0 else 1.0


@njit
def _lex_less(a, na, b, nb):
    m = na if na < nb else nb
    for i in range(m):
        if a[i] != b[i]:
            return a[i] < b[i]
    return na < nb


@njit
def _candidate_items(cur, k, out_item, in_item, buf):
    """Sorted item list of ``cur - {out_item} + {in_item}`` into buf; returns its length."""
    n = 0
    placed = in_item < 0
    for idx in range(k):
        it = cur[idx]
        if it == out_item:
            continue
        if not placed and in_item < it:
            buf[n] = in_item
            n += 1
            placed = True
        buf[n] = it
        n += 1
    if not placed:
        buf[n] = in_item
        n += 1
    return n


@njit
def _better(val, best_val, cur, k, out_item, in_item, buf_a, buf_b, best_len):
    """Compare a candidate against the incumbent (value, then lexicographic list).

    On success the candidate's item list is left in buf_b; returns (better, length).
    """
    if val > best_val:
        return True, _candidate_items(cur, k, out_item, in_item, buf_b)
    if val == best_val:
        ln = _candidate_items(cur, k, out_item, in_item, buf_a)
        if _lex_less(buf_a, ln, buf_b, best_len):
            buf_b[:ln] = buf_a[:ln]
            return True, ln
    return False, best_len


@njit
def greedy_swap(u, r, x, capacity, omega, start, eps, max_moves):
    """Best-improvement local search over swap / addition / deletion moves.

    With omega > 0, candidates are screened first by trace bounds on the
    largest eigenvalue (O(d) per move through cached inner products), then
    by Wolkowicz-Styan bounds, and the exact eigen-solve only runs for moves
    that can still beat the incumbent.  The selected move is the same as
    under exhaustive evaluation.  Candidate sums are built by addition from
    sums over the incumbent minus one item, never by subtracting an item:
    with utilities spread over many orders of magnitude, removing a dominant
    item by subtraction leaves only rounding error.
    Returns (sorted items, objective, moves).
    """
    n_items, d = x.shape
    ur = u * r
    use_ci = omega > 0.0
    ux = np.empty((n_items, d))
    uxx = np.empty((n_items, d, d))
    usq = np.zeros(n_items)  # u_i |x_i|^2
    if use_ci:
        for i in range(n_items):
            for a in range(d):
                ux[i, a] = u[i] * x[i, a]
                usq[i] += u[i] * x[i, a] * x[i, a]
                for b in range(d):
                    uxx[i, a, b] = u[i] * x[i, a] * x[i, b]

    in_s = np.zeros(n_items, dtype=np.bool_)
    cur = np.empty(capacity + 1, dtype=np.int64)
    k = 0
    for it in np.sort(start):
        in_s[it] = True
        cur[k] = it
        k += 1

    b_sum = np.zeros(d)
    q_sum = np.zeros((d, d))
    cov = np.empty((d, d))
    nb = np.empty(d)
    nq = np.empty((d, d))
    zvec = np.zeros(d)
    pz = np.empty(n_items)
    pz2 = np.empty(n_items)
    wz = np.zeros((n_items, d))
    max_cand = capacity * n_items + n_items + capacity + 1
    c_out = np.empty(max_cand, dtype=np.int64)
    c_pos = np.empty(max_cand, dtype=np.int64)  # position of c_out in cur, k for "none"
    c_in = np.empty(max_cand, dtype=np.int64)
    c_estr = np.empty(max_cand)
    c_lb = np.empty(max_cand)
    c_ub = np.empty(max_cand)
    surv = np.empty(max_cand, dtype=np.int64)
    surv_ub = np.empty(max_cand)
    buf_a = np.empty(capacity + 1, dtype=np.int64)
    # row p < k: sums over cur minus cur[p]; row k: sums over all of cur
    ex_a = np.empty(capacity + 1)
    ex_g = np.empty(capacity + 1)
    ex_s = np.empty(capacity + 1)
    ex_b = np.empty((capacity + 1, d))
    ex_q = np.empty((capacity + 1, d, d))
    ex_pz = np.empty(capacity + 1)
    ex_pz2 = np.empty(capacity + 1)
    ex_wz = np.empty((capacity + 1, d))
    buf_b = np.empty(capacity + 1, dtype=np.int64)

    moves = 0
    while True:
        a_sum = 0.0
        g_sum = 0.0
        b_sum[:] = 0.0
        q_sum[:, :] = 0.0
        for idx in range(k):
            it = cur[idx]
            a_sum += u[it]
            g_sum += ur[it]
            if use_ci:
                b_sum += ux[it]
                q_sum += uxx[it]
        for p in range(k + 1):
            ex_a[p] = 0.0
            ex_g[p] = 0.0
            ex_s[p] = 0.0
            ex_b[p] = 0.0
            if use_ci:
                ex_q[p] = 0.0
            for idx in range(k):
                if idx == p:
                    continue
                it = cur[idx]
                ex_a[p] += u[it]
                ex_g[p] += ur[it]
                if use_ci:
                    ex_s[p] += usq[it]
                    ex_b[p] += ux[it]
                    ex_q[p] += uxx[it]
        cur_estr = g_sum / (1.0 + a_sum)
        if use_ci and k > 0:
            _fill_cov(a_sum, b_sum, q_sum, cov)
            cur_obj = cur_estr + _width(_lam_max(cov), omega)
        else:
            cur_obj = cur_estr
        if moves >= max_moves:
            break

        # enumerate candidate moves: (out, in) with -1 meaning "none"
        nc = 0
        for i in range(n_items):
            if in_s[i]:
                continue
            for idx in range(k):
                c_out[nc] = cur[idx]
                c_pos[nc] = idx
                c_in[nc] = i
                nc += 1
            if k < capacity:
                c_out[nc] = -1
                c_pos[nc] = k
                c_in[nc] = i
                nc += 1
        if k > 1:
            for idx in range(k):
                c_out[nc] = cur[idx]
                c_pos[nc] = idx
                c_in[nc] = -1
                nc += 1
        if nc == 0:
            break

        best_val = -np.inf
        best_c = -1
        best_len = 0
        if use_ci:
            # Rayleigh quotients along the incumbent's top eigenvector give
            # near-tight lower bounds for neighbouring assortments
            if k > 0 and d > 1:
                _fill_cov(a_sum, b_sum, q_sum, cov)
                _, vecs = np.linalg.eigh(cov)
                for a in range(d):
                    zvec[a] = vecs[a, d - 1]
            else:
                zvec[:] = 0.0
                zvec[0] = 1.0
            for i in range(n_items):
                acc = 0.0
                for a in range(d):
                    acc += x[i, a] * zvec[a]
                pz[i] = u[i] * acc
                pz2[i] = u[i] * acc * acc
                for a in range(d):
                    wz[i, a] = ux[i, a] * acc
            for p in range(k + 1):
                ex_pz[p] = 0.0
                ex_pz2[p] = 0.0
                ex_wz[p] = 0.0
                for idx in range(k):
                    if idx != p:
                        it = cur[idx]
                        ex_pz[p] += pz[it]
                        ex_pz2[p] += pz2[it]
                        ex_wz[p] += wz[it]
        if not use_ci:
            for c in range(nc):
                j = c_out[c]
                i = c_in[c]
                p = c_pos[c]
                na = ex_a[p]
                ng = ex_g[p]
                if i >= 0:
                    na += u[i]
                    ng += ur[i]
                val = ng / (1.0 + na)
                if val >= best_val:
                    ok, best_len = _better(val, best_val, cur, k, j, i, buf_a, buf_b, best_len)
                    if ok:
                        best_val = val
                        best_c = c
        else:
            # pass 1: trace bounds, lambda_max in [tr / d, tr]
            best_lb = -np.inf
            for c in range(nc):
                i = c_in[c]
                p = c_pos[c]
                na = ex_a[p]
                ng = ex_g[p]
                ns = ex_s[p]
                rq2 = ex_pz2[p]
                rq = ex_pz[p]
                if i >= 0:
                    na += u[i]
                    ng += ur[i]
                    ns += usq[i]
                    rq2 += pz2[i]
                    rq += pz[i]
                nbb = 0.0
                for a in range(d):
                    bv = ex_b[p, a]
                    if i >= 0:
                        bv += ux[i, a]
                    nbb += bv * bv
                den = 1.0 + na
                tr = ns / den - nbb / (den * den)
                estr = ng / den
                c_estr[c] = estr
                ray = rq2 / den - (rq / den) ** 2
                lo = tr / d
                if ray > lo:
                    lo = ray
                # A z for the candidate covariance A; with c = |A z - ray z| and
                # B the compression to z-perp, lambda_max <= lambda_max([[ray, c], [c, tr(B)]])
                az2 = 0.0
                for a in range(d):
                    v = ex_wz[p, a]
                    bv = ex_b[p, a]
                    if i >= 0:
                        v += wz[i, a]
                        bv += ux[i, a]
                    v = v / den - bv * rq / (den * den)
                    az2 += v * v
                off2 = az2 - ray * ray
                if off2 < 0.0:
                    off2 = 0.0
                rest = tr - ray
                if rest < 0.0:
                    rest = 0.0
                half = 0.5 * (ray - rest)
                hi = 0.5 * (ray + rest) + np.sqrt(half * half + off2)
                if hi > tr:
                    hi = tr
                guard = 1e-12 * abs(ns / den)  # cancellation in tr and ray
                hi = hi * (1.0 + 1e-9) + guard
                lo = lo * (1.0 - 1e-9) - guard
                c_lb[c] = estr + _width(lo, omega)
                c_ub[c] = estr + _width(hi, omega)
                if c_lb[c] > best_lb:
                    best_lb = c_lb[c]
            # pass 2: tighter bounds on the survivors
            ns_ = 0
            for c in range(nc):
                if c_ub[c] >= best_lb - _SQRT_EPS_SLACK * (1.0 + abs(best_lb)):
                    surv[ns_] = c
                    ns_ += 1
            if d > 1:
                for si in range(ns_):
                    c = surv[si]
                    p = c_pos[c]
                    i = c_in[c]
                    na = ex_a[p]
                    nb[:] = ex_b[p]
                    nq[:, :] = ex_q[p]
                    if i >= 0:
                        na += u[i]
                        nb += ux[i]
                        nq += uxx[i]
                    _fill_cov(na, nb, nq, cov)
                    lo, hi = _lam_bounds(cov)
                    lb = c_estr[c] + _width(lo, omega)
                    ub = c_estr[c] + _width(hi, omega)
                    if lb > c_lb[c]:
                        c_lb[c] = lb
                    if ub < c_ub[c]:
                        c_ub[c] = ub
                    if c_lb[c] > best_lb:
                        best_lb = c_lb[c]
            m = 0
            for si in range(ns_):
                c = surv[si]
                if c_ub[c] >= best_lb - _SQRT_EPS_SLACK * (1.0 + abs(best_lb)):
                    surv[m] = c
                    surv_ub[m] = -c_ub[c]
                    m += 1
            order = np.argsort(surv_ub[:m])
            # pass 3: exact values in decreasing order of the upper bound
            for oi in range(m):
                c = surv[order[oi]]
                thresh = best_val if best_val > best_lb else best_lb
                if c_ub[c] < thresh - _SQRT_EPS_SLACK * (1.0 + abs(thresh)):
                    break
                j = c_out[c]
                i = c_in[c]
                if c_lb[c] - c_estr[c] >= 1.0:
                    val = c_estr[c] + 1.0
                else:
                    p = c_pos[c]
                    na = ex_a[p]
                    nb[:] = ex_b[p]
                    nq[:, :] = ex_q[p]
                    if i >= 0:
                        na += u[i]
                        nb += ux[i]
                        nq += uxx[i]
                    _fill_cov(na, nb, nq, cov)
                    val = c_estr[c] + _width(_lam_max(cov), omega)
                if val >= best_val:
                    ok, best_len = _better(val, best_val, cur, k, j, i, buf_a, buf_b, best_len)
                    if ok:
                        best_val = val
                        best_c = c

        if best_c < 0 or not (best_val > cur_obj + eps):
            break
        j = c_out[best_c]
        i = c_in[best_c]
        if j >= 0:
            in_s[j] = False
        if i >= 0:
            in_s[i] = True
        k = best_len
        cur[:k] = buf_b[:k]
        moves += 1

    if 0.0 > cur_obj + eps:
        return np.empty(0, dtype=np.int64), 0.0, moves
    return cur[:k].copy(), cur_obj, moves


@njit
def brute_force(u, r, x, capacity, omega):
    """Exhaustive search over |S| <= capacity in lexicographic order.

    The first strict maximum wins, so ties resolve to the lexicographically
    smallest item list.  Returns (items, objective, subsets visited).
    """
    n_items, d = x.shape
    ux = np.empty((n_items, d))
    uxx = np.empty((n_items, d, d))
    for i in range(n_items):
        for a in range(d):
            ux[i, a] = u[i] * x[i, a]
            for b in range(d):
                uxx[i, a, b] = u[i] * x[i, a] * x[i, b]
    ur = u * r
    kmax = capacity if capacity < n_items else n_items

    stack = np.empty(kmax + 1, dtype=np.int64)
    a_stk = np.zeros(kmax + 1)
    g_stk = np.zeros(kmax + 1)
    b_stk = np.zeros((kmax + 1, d))
    q_stk = np.zeros((kmax + 1, d, d))
    cov = np.empty((d, d))

    best_val = 0.0  # empty assortment
    best_items = np.empty(0, dtype=np.int64)
    visited = 1
    depth = 0
    if kmax == 0:
        return best_items, best_val, visited
    stack[0] = 0
    depth = 1
    while depth > 0:
        it = stack[depth - 1]
        a_stk[depth] = a_stk[depth - 1] + u[it]
        g_stk[depth] = g_stk[depth - 1] + ur[it]
        b_stk[depth] = b_stk[depth - 1] + ux[it]
        q_stk[depth] = q_stk[depth - 1] + uxx[it]
        visited += 1
        estr = g_stk[depth] / (1.0 + a_stk[depth])
        if omega > 0.0:
            _fill_cov(a_stk[depth], b_stk[depth], q_stk[depth], cov)
            lo, hi = _lam_bounds(cov)
            if estr + _width(hi, omega) >= best_val - _SQRT_EPS_SLACK:
                val = estr + _width(_lam_max(cov), omega)
            else:
                val = -np.inf
        else:
            val = estr
        if val > best_val:
            best_val = val
            best_items = stack[:depth].copy()
        # advance to the lexicographic successor
        if depth < kmax and it + 1 < n_items:
            stack[depth] = it + 1
            depth += 1
        else:
            while depth > 0 and stack[depth - 1] == n_items - 1:
                depth -= 1
            if depth > 0:
                stack[depth - 1] += 1
    return best_items, best_val, visited
