"""Solvers for the optimistic assortment subproblem

    max_{|S| <= K}  ESTR(S) + min(1, omega * CI(S))

where ESTR is the MNL revenue under the estimated utilities and CI is the
square root of the largest eigenvalue of the choice-weighted covariance of
the whitened feature vectors over S plus the outside option.
"""
import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy import stats

from . import kernels
from .core import ContextSlice, as_assortment

# log-utility clip when forming u = exp(v theta): exp(300) leaves ample float64
# headroom for the u * x * x^T sums inside the solvers
LOG_UTILITY_CLIP = 300.0

__all__ = [
    "BruteForceCapExceeded",
    "DiscretizedItem",
    "SolveReport",
    "Subproblem",
    "approx_multivariate",
    "approx_univariate",
    "best_revenue_assortment",
    "brute_force",
    "ci",
    "discretize",
    "dp_reachable_states",
    "dp_with_anchor",
    "estr",
    "exact_revenue_oracle",
    "greedy_swap",
    "objective",
    "reachable_states_by_definition",
    "recommended_num_directions",
]


class BruteForceCapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class Subproblem:
    utilities: np.ndarray
    revenues: np.ndarray
    x: np.ndarray
    capacity: int
    omega: float = 0.0

    def __post_init__(self):
        u = np.array(self.utilities, dtype=np.float64).reshape(-1)
        r = np.array(self.revenues, dtype=np.float64).reshape(-1)
        x = np.array(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if not (u.shape[0] == r.shape[0] == x.shape[0]):
            raise ValueError(f"inconsistent lengths: utilities {u.shape[0]}, revenues {r.shape[0]}, x {x.shape[0]}")
        if np.any(~np.isfinite(u)) or np.any(u <= 0):
            raise ValueError("utilities must be positive and finite")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("revenues must lie in [0, 1]")
        if not np.all(np.isfinite(x)):
            raise ValueError("x must be finite")
        if int(self.capacity) < 0:
            raise ValueError("capacity must be >= 0")
        if not self.omega >= 0:
            raise ValueError("omega must be >= 0")
        for a in (u, r, x):
            a.setflags(write=False)
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "revenues", r)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "capacity", int(self.capacity))
        object.__setattr__(self, "omega", float(self.omega))

    @property
    def n_items(self):
        return self.utilities.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def nu(self):
        return float(np.linalg.norm(self.x, axis=1).max()) if self.n_items else 0.0

    def with_x(self, x):
        return Subproblem(self.utilities, self.revenues, x, self.capacity, self.omega)

    def to_dict(self):
        return {
            "N": self.n_items,
            "K": self.capacity,
            "d": self.dim,
            "omega": self.omega,
            "utilities": self.utilities.tolist(),
            "revenues": self.revenues.tolist(),
            "x": self.x.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        sub = cls(doc["utilities"], doc["revenues"], doc["x"], doc["K"], doc.get("omega", 0.0))
        if "N" in doc and int(doc["N"]) != sub.n_items:
            raise ValueError(f"N={doc['N']} but {sub.n_items} items given")
        if "d" in doc and int(doc["d"]) != sub.dim:
            raise ValueError(f"d={doc['d']} but x has {sub.dim} columns")
        return sub


@dataclass
class SolveReport:
    assortment: tuple
    objective: float
    estr: float
    ci: float
    solver: str
    iterations: int = 0
    states: int = 0
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)


def _idx(sub, s):
    return np.asarray(as_assortment(s, sub.n_items), dtype=np.int64)


def estr(sub: Subproblem, s) -> float:
    idx = _idx(sub, s)
    if idx.size == 0:
        return 0.0
    u = sub.utilities[idx]
    return float(sub.revenues[idx] @ u / (1.0 + u.sum()))


def _weighted_cov(u, x):
    denom = 1.0 + u.sum()
    mean = (u @ x) / denom
    return (x * u[:, None]).T @ x / denom - np.outer(mean, mean)


def ci(sub: Subproblem, s) -> float:
    idx = _idx(sub, s)
    if idx.size == 0:
        return 0.0
    cov = _weighted_cov(sub.utilities[idx], sub.x[idx])
    lam = float(np.linalg.eigvalsh(cov)[-1])
    return math.sqrt(lam) if lam > 0 else 0.0


def objective(sub: Subproblem, s, omega: Optional[float] = None) -> float:
    omega = sub.omega if omega is None else omega
    val = estr(sub, s)
    if omega > 0:
        val += min(1.0, omega * ci(sub, s))
    return val


def _report(sub, s, solver, t0, **kw):
    s = as_assortment(s, sub.n_items)
    e, c = estr(sub, s), ci(sub, s)
    obj = e + (min(1.0, sub.omega * c) if sub.omega > 0 else 0.0)
    return SolveReport(assortment=s, objective=obj, estr=e, ci=c, solver=solver,
                       wall_time=time.perf_counter() - t0, **kw)


def _n_subsets(n, k):
    return sum(math.comb(n, j) for j in range(min(n, k) + 1))


def brute_force(sub: Subproblem, cap: int = 10**6) -> SolveReport:
    """Exact maximizer by enumeration; ties go to the lexicographically smallest list."""
    t0 = time.perf_counter()
    count = _n_subsets(sub.n_items, sub.capacity)
    if count > cap:
        raise BruteForceCapExceeded(f"{count} subsets exceed the enumeration cap {cap}")
    items, _, visited = kernels.brute_force(sub.utilities, sub.revenues, sub.x, sub.capacity, sub.omega)
    return _report(sub, items, "brute", t0, states=visited)


def greedy_swap(sub: Subproblem, rng: np.random.Generator, restarts: int = 1,
                improvement_epsilon: float = 1e-12, max_moves: Optional[int] = None) -> SolveReport:
    """Local search from a uniformly random assortment of size min(K, N).

    Each round applies the best swap, addition or deletion while it improves
    the objective by more than ``improvement_epsilon``.  With several
    restarts the best local maximum is returned.
    """
    t0 = time.perf_counter()
    n, k = sub.n_items, min(sub.capacity, sub.n_items)
    if max_moves is None:
        max_moves = 10 * max(n, 1) ** 4
    best = None
    total_moves = 0
    for _ in range(max(1, restarts)):
        start = np.sort(rng.choice(n, size=k, replace=False)) if k else np.empty(0, dtype=np.int64)
        items, val, moves = kernels.greedy_swap(sub.utilities, sub.revenues, sub.x, sub.capacity,
                                                sub.omega, start, improvement_epsilon, max_moves)
        total_moves += moves
        if best is None or val > best[1] or (val == best[1] and items < best[0]):
            best = (items, val)
    empty_better = best[1] < 0.0
    return _report(sub, () if empty_better else best[0], "greedy", t0, iterations=total_moves,
                   meta={"restarts": max(1, restarts)})


def best_revenue_assortment(utilities, revenues, capacity: int):
    """Revenue-maximizing assortment for known MNL utilities (ties: lexicographic).

    Runs the swap/add/delete local search without a confidence term, which
    reaches the exact optimum from any start; the start is the top-K items
    by revenue.
    """
    u = np.asarray(utilities, dtype=np.float64)
    r = np.asarray(revenues, dtype=np.float64)
    n = u.shape[0]
    k = min(int(capacity), n)
    start = np.sort(np.lexsort((-u, -r))[:k]) if k else np.empty(0, dtype=np.int64)
    items, val, moves = kernels.greedy_swap(u, r, np.zeros((n, 1)), capacity, 0.0, start, 1e-12, None)
    return items, val, moves


def exact_revenue_oracle(theta, ctx: ContextSlice, capacity: int) -> SolveReport:
    t0 = time.perf_counter()
    util = ctx.features @ np.asarray(theta, dtype=np.float64)
    u = np.exp(np.clip(util, -LOG_UTILITY_CLIP, LOG_UTILITY_CLIP))
    items, _, moves = best_revenue_assortment(u, ctx.revenues, capacity)
    sub = Subproblem(u, ctx.revenues, np.zeros((ctx.n_items, 1)), capacity, 0.0)
    return _report(sub, items, "oracle", t0, iterations=moves)


# ---------------------------------------------------------------------------
# discretized dynamic programming (univariate x)


@dataclass(frozen=True)
class DiscretizedItem:
    mu: float
    alpha: float
    beta: float
    gamma: float


def _require_univariate(sub):
    if sub.dim != 1:
        raise ValueError(f"the discretized DP needs d = 1, got d = {sub.dim}")


def _discretize_units(sub, q, epsilon0):
    if not epsilon0 > 0:
        raise ValueError("epsilon0 must be > 0")
    if not 0 <= q < sub.n_items:
        raise ValueError(f"anchor {q} outside [0, {sub.n_items})")
    u, r, x = sub.utilities, sub.revenues, sub.x[:, 0]
    delta = epsilon0 * max(1.0, u[q]) / max(sub.capacity, 1)
    scaled = np.stack([u, u * x, u * x * x, u * r], axis=1) / delta
    if not np.all(np.abs(scaled) < 2.0**62):
        raise ValueError("instance too badly scaled to discretize (grid coordinates overflow int64)")
    return delta, np.floor(scaled + 0.5).astype(np.int64)


def discretize(sub: Subproblem, q: int, epsilon0: float):
    """Grid step and per-item (mu, alpha, beta, gamma) rounded to multiples of it."""
    _require_univariate(sub)
    delta, units = _discretize_units(sub, q, epsilon0)
    return delta, [DiscretizedItem(*(float(v) * delta for v in row)) for row in units]


def _discrete_value(key, delta, omega):
    _, m, a, b, g = key
    denom = 1.0 + m * delta
    est = g * delta / denom
    var = b * delta / denom - (a * delta / denom) ** 2
    c = math.sqrt(var) if var > 0 else 0.0
    return est + (min(1.0, omega * c) if omega > 0 else 0.0)


def _dp_layers(sub, q, epsilon0):
    delta, units = _discretize_units(sub, q, epsilon0)
    u = sub.utilities
    cap = sub.capacity
    layers = [{(0, 0, 0, 0, 0): None}]
    for i in range(sub.n_items):
        nxt = {}
        take = cap > 0 and u[i] <= u[q]
        mu, al, be, ga = (int(v) for v in units[i])
        for key in layers[-1]:
            if i != q and key not in nxt:
                nxt[key] = (key, False)
            if take and key[0] < cap:
                k, m, a, b, g = key
                new = (k + 1, m + mu, a + al, b + be, g + ga)
                if new not in nxt:
                    nxt[new] = (key, True)
        layers.append(nxt)
    return delta, units, layers


def _trace_back(layers, key):
    items = []
    for i in range(len(layers) - 1, 0, -1):
        prev, took = layers[i][key]
        if took:
            items.append(i - 1)
        key = prev
    return tuple(reversed(items))


def _state_bound(sub, units):
    k = sub.capacity

    def span(col, signed):
        vals = np.sort(units[:, col])
        top = int(np.clip(vals[::-1][:k], 0, None).sum())
        bottom = int(np.clip(vals[:k], None, 0).sum()) if signed else 0
        return top - bottom + 1

    per_layer = (k + 1) * span(0, False) * span(1, True) * span(2, False) * span(3, False)
    return (sub.n_items + 1) * per_layer


def dp_reachable_states(sub: Subproblem, q: int, epsilon0: float):
    """Per-layer sets of reachable (k, mu, alpha, beta, gamma) integer states."""
    _require_univariate(sub)
    _, _, layers = _dp_layers(sub, q, epsilon0)
    return [set(layer) for layer in layers]


def reachable_states_by_definition(sub: Subproblem, q: int, epsilon0: float):
    """The same state sets, built by enumerating every assortment directly."""
    _require_univariate(sub)
    _, units = _discretize_units(sub, q, epsilon0)
    n, cap, u = sub.n_items, sub.capacity, sub.utilities
    out = [set() for _ in range(n + 1)]
    for k in range(min(cap, n) + 1):
        for s in combinations(range(n), k):
            if any(u[j] > u[q] for j in s):
                continue
            sums = tuple(int(v) for v in units[list(s)].sum(axis=0)) if s else (0, 0, 0, 0)
            lowest_layer = (s[-1] + 1) if s else 0
            for i in range(lowest_layer, n + 1):
                if i > q and q not in s:
                    continue
                out[i].add((k,) + sums)
    return out


def _best_final(layers, delta, omega):
    best_val, best_keys = -math.inf, []
    for key in layers[-1]:
        val = _discrete_value(key, delta, omega)
        if val > best_val:
            best_val, best_keys = val, [key]
        elif val == best_val:
            best_keys.append(key)
    if not best_keys:
        return None, -math.inf
    return min(_trace_back(layers, key) for key in best_keys), best_val


def dp_with_anchor(sub: Subproblem, q: int, epsilon0: float) -> SolveReport:
    """Discretized DP over assortments whose largest-utility member is item q.

    The reported objective is the exact (continuous) one; the discretized
    value that drove the selection is in ``meta['discretized_objective']``.
    """
    _require_univariate(sub)
    t0 = time.perf_counter()
    delta, units, layers = _dp_layers(sub, q, epsilon0)
    n_states = sum(len(layer) for layer in layers)
    s, val = _best_final(layers, delta, sub.omega)
    meta = {"anchor": q, "delta": delta, "state_bound": _state_bound(sub, units)}
    if s is None:
        meta["discretized_objective"] = 0.0
        return _report(sub, (), "dp_anchor", t0, states=n_states, meta=meta)
    meta["discretized_objective"] = val
    return _report(sub, s, "dp_anchor", t0, states=n_states, meta=meta)


def approx_univariate(sub: Subproblem, epsilon0: float) -> SolveReport:
    """Best anchored DP solution over all anchors (and the empty assortment)."""
    _require_univariate(sub)
    t0 = time.perf_counter()
    best_s, best_val, states = (), 0.0, 0
    for q in range(sub.n_items):
        rep = dp_with_anchor(sub, q, epsilon0)
        states += rep.states
        val = rep.meta["discretized_objective"]
        if val > best_val or (val == best_val and rep.assortment < best_s):
            best_s, best_val = rep.assortment, val
    return _report(sub, best_s, "dp_univariate", t0, states=states,
                   meta={"discretized_objective": best_val, "epsilon0": epsilon0})


def sample_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    y = rng.standard_normal((n, d))
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def approx_multivariate(sub: Subproblem, alpha: float, epsilon0: float, n_directions: int,
                        rng: np.random.Generator) -> SolveReport:
    """Randomized reduction to univariate instances along random unit directions.

    Each direction y gives the instance x_i -> <x_i, y>; its univariate
    solution is scored with ESTR + min(1, alpha * omega * CI) using the full
    d-dimensional CI, and the best-scoring candidate is returned.
    """
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    if n_directions < 1:
        raise ValueError("need at least one direction")
    t0 = time.perf_counter()
    dirs = sample_sphere(rng, n_directions, sub.dim)
    ci_cache = {}
    best_s, best_score, states = None, -math.inf, 0
    for y in dirs:
        rep = approx_univariate(sub.with_x(sub.x @ y), epsilon0)
        states += rep.states
        s = rep.assortment
        if s not in ci_cache:
            ci_cache[s] = ci(sub, s)
        score = estr(sub, s) + min(1.0, alpha * sub.omega * ci_cache[s])
        if score > best_score or (score == best_score and s < best_s):
            best_s, best_score = s, score
    return _report(sub, best_s, "dp_multivariate", t0, states=states, iterations=n_directions,
                   meta={"inflated_objective": best_score, "alpha": alpha, "epsilon0": epsilon0,
                         "candidates": len(ci_cache)})


def recommended_num_directions(delta: float, d: int, alpha: Optional[float] = None) -> int:
    """Directions needed so that some y has <y, y*> >= 1/alpha with probability 1 - delta.

    For y uniform on the sphere, y_1^2 ~ Beta(1/2, (d-1)/2), which gives the
    per-draw success probability exactly.  Default alpha is sqrt(d).
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if d == 1:
        return 1
    alpha = math.sqrt(d) if alpha is None else alpha
    p = 0.5 * stats.beta.sf(1.0 / alpha**2, 0.5, (d - 1) / 2.0)
    if p >= 1:
        return 1
    return max(1, math.ceil(math.log(delta) / math.log1p(-p)))
