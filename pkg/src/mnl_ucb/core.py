"""Closed-form quantities of the contextual multinomial-logit choice model.

Items are 0-based.  The outside (no-purchase) option is encoded as
``NO_PURCHASE = -1``; its utility is fixed at zero and it has a zero
feature vector and zero revenue.
"""
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import kernels

NO_PURCHASE = -1

__all__ = [
    "NO_PURCHASE",
    "ContextSlice",
    "InstanceStats",
    "ObservationLog",
    "as_assortment",
    "choice_probabilities",
    "cumulative_fisher",
    "empirical_fisher_m",
    "expected_revenue",
    "instance_stats",
    "log_likelihood",
    "sample_purchase",
]


@dataclass(frozen=True)
class ContextSlice:
    """Features (N x d) and revenues (N,) observed in one period."""

    features: np.ndarray
    revenues: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        revs = np.array(self.revenues, dtype=np.float64).reshape(-1)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.ndim != 2:
            raise ValueError(f"features must be an N x d matrix, got shape {feats.shape}")
        if revs.shape[0] != feats.shape[0]:
            raise ValueError(f"{feats.shape[0]} feature rows but {revs.shape[0]} revenues")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if np.any(revs < 0.0) or np.any(revs > 1.0):
            raise ValueError("revenues must lie in [0, 1]")
        feats.setflags(write=False)
        revs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "revenues", revs)

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def as_assortment(items, n_items: int, capacity: Optional[int] = None) -> tuple:
    """Validate and normalize an assortment to a sorted tuple of distinct ints."""
    s = tuple(sorted(int(i) for i in items))
    if len(set(s)) != len(s):
        raise ValueError(f"duplicate items in assortment {s}")
    if s and (s[0] < 0 or s[-1] >= n_items):
        raise ValueError(f"assortment {s} has indices outside [0, {n_items})")
    if capacity is not None and len(s) > capacity:
        raise ValueError(f"assortment of size {len(s)} exceeds capacity {capacity}")
    return s


def _check_theta(theta, ctx: ContextSlice) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != ctx.dim:
        raise ValueError(f"theta has length {theta.shape[0]}, features have d={ctx.dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta


def _probs(theta, ctx, s):
    """(p over s, p0) with the max-utility shift u_max = max(0, max u)."""
    theta = _check_theta(theta, ctx)
    idx = np.asarray(as_assortment(s, ctx.n_items), dtype=np.int64)
    if idx.size == 0:
        return idx, np.empty(0), 1.0
    util = ctx.features[idx] @ theta
    shift = max(0.0, float(util.max()))
    w = np.exp(util - shift)
    w0 = np.exp(-shift)
    z = w0 + w.sum()
    if not np.isfinite(z) or z <= 0.0:
        raise FloatingPointError("non-finite choice-probability normalizer")
    return idx, w / z, w0 / z


def choice_probabilities(theta, ctx: ContextSlice, s) -> dict:
    """Purchase probabilities over ``s`` plus ``NO_PURCHASE``."""
    idx, p, p0 = _probs(theta, ctx, s)
    out = {int(i): float(pi) for i, pi in zip(idx, p)}
    out[NO_PURCHASE] = float(p0)
    return out


def expected_revenue(theta, ctx: ContextSlice, s) -> float:
    idx, p, _ = _probs(theta, ctx, s)
    if idx.size == 0:
        return 0.0
    return float(ctx.revenues[idx] @ p)


def sample_purchase(theta, ctx: ContextSlice, s, rng: np.random.Generator) -> int:
    idx, p, p0 = _probs(theta, ctx, s)
    if idx.size == 0:
        return NO_PURCHASE
    u = rng.random()
    acc = 0.0
    for i, pi in zip(idx, p):
        acc += pi
        if u < acc:
            return int(i)
    return NO_PURCHASE


def empirical_fisher_m(theta, ctx: ContextSlice, s) -> np.ndarray:
    """Choice-weighted covariance of the offered feature vectors (outside option at 0)."""
    idx, p, _ = _probs(theta, ctx, s)
    d = ctx.dim
    if idx.size == 0:
        return np.zeros((d, d))
    v = ctx.features[idx]
    mean = p @ v
    m = (v * p[:, None]).T @ v - np.outer(mean, mean)
    return 0.5 * (m + m.T)


class ObservationLog:
    """Append-only record of (slice, assortment, purchase) triples.

    Only the offered feature rows are retained, packed into padded arrays
    that the likelihood kernels consume directly.
    """

    def __init__(self, dim: int, max_size: int = 1, capacity_hint: int = 64):
        self.dim = int(dim)
        self._kmax = max(int(max_size), 1)
        cap = max(int(capacity_hint), 1)
        self._feats = np.zeros((cap, self._kmax, self.dim))
        self._sizes = np.zeros(cap, dtype=np.int64)
        self._chosen = np.full(cap, -1, dtype=np.int64)
        self._items = []
        self._purchases = []
        self._revenues = []
        self._n = 0

    def __len__(self):
        return self._n

    def _grow(self, min_rows, kmax):
        rows = self._feats.shape[0]
        new_rows = max(rows, 1)
        while new_rows < min_rows:
            new_rows *= 2
        if new_rows == rows and kmax <= self._kmax:
            return
        kmax = max(kmax, self._kmax)
        feats = np.zeros((new_rows, kmax, self.dim))
        feats[: self._n, : self._kmax] = self._feats[: self._n]
        sizes = np.zeros(new_rows, dtype=np.int64)
        sizes[: self._n] = self._sizes[: self._n]
        chosen = np.full(new_rows, -1, dtype=np.int64)
        chosen[: self._n] = self._chosen[: self._n]
        self._feats, self._sizes, self._chosen, self._kmax = feats, sizes, chosen, kmax

    def append(self, ctx: ContextSlice, s, purchase: int) -> None:
        if ctx.dim != self.dim:
            raise ValueError(f"slice has d={ctx.dim}, log has d={self.dim}")
        s = as_assortment(s, ctx.n_items)
        purchase = int(purchase)
        if purchase != NO_PURCHASE and purchase not in s:
            raise ValueError(f"purchase {purchase} is neither NO_PURCHASE nor in {s}")
        self._grow(self._n + 1, len(s))
        t = self._n
        k = len(s)
        self._feats[t] = 0.0
        if k:
            self._feats[t, :k] = ctx.features[list(s)]
        self._sizes[t] = k
        self._chosen[t] = s.index(purchase) if purchase != NO_PURCHASE else -1
        self._items.append(s)
        self._purchases.append(purchase)
        self._revenues.append(ctx.revenues[list(s)].copy() if k else np.empty(0))
        self._n += 1

    def arrays(self):
        """(feats, sizes, chosen) views over the filled part of the buffers."""
        n = self._n
        return self._feats[:n], self._sizes[:n], self._chosen[:n]

    @property
    def assortments(self) -> list:
        return list(self._items)

    @property
    def purchases(self) -> list:
        return list(self._purchases)

    def entry(self, t: int):
        """The t-th entry as (offered-rows ContextSlice, local assortment, local purchase)."""
        k = int(self._sizes[t])
        ctx = ContextSlice(self._feats[t, :k].copy(), self._revenues[t])
        c = int(self._chosen[t])
        return ctx, tuple(range(k)), c if c >= 0 else NO_PURCHASE

    def __iter__(self) -> Iterator:
        for t in range(self._n):
            yield self.entry(t)

    def is_singleton(self) -> bool:
        return bool(np.all(self._sizes[: self._n] == 1))


def log_likelihood(theta, log: ObservationLog) -> float:
    if len(log) == 0:
        raise ValueError("log-likelihood of an empty log is undefined")
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != log.dim:
        raise ValueError(f"theta has length {theta.shape[0]}, log has d={log.dim}")
    feats, sizes, chosen = log.arrays()
    ll, _, _ = kernels.loglik_terms(theta, feats, sizes, chosen, want_hess=False)
    return ll


def cumulative_fisher(theta, log: ObservationLog, ridge: float = 1e-6) -> np.ndarray:
    """Sum of per-entry empirical Fisher matrices plus ``ridge * I`` (added once)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    d = log.dim
    out = ridge * np.eye(d)
    if len(log):
        feats, sizes, chosen = log.arrays()
        _, _, neg_hess = kernels.loglik_terms(theta, feats, sizes, chosen, want_hess=True)
        out = out + neg_hess
    return out


@dataclass(frozen=True)
class InstanceStats:
    nu: float
    rho: float
    lambda0: float
    rho_exact: Optional[float] = field(default=None)


def instance_stats(theta0, slices: Sequence[ContextSlice], exploration_horizon: int,
                   exact_rho: bool = False, capacity: Optional[int] = None) -> InstanceStats:
    """Empirical versions of the feature-norm, probability-ratio and eigenvalue constants.

    ``lambda0`` is the smallest eigenvalue of the average of v v^T over all
    item features in the first ``exploration_horizon`` slices.  The default
    ``rho`` only looks at singleton assortments.  With ``exact_rho`` the ratio
    over every assortment of size <= capacity is reported as well: for a
    capacity of at least two any pair of items can share an assortment, so
    the worst ratio is exp(max(0, max u) - min(0, min u)) per period.
    """
    if len(slices) == 0:
        raise ValueError("instance_stats needs at least one slice")
    theta0 = np.asarray(theta0, dtype=np.float64)
    nu = 0.0
    log_rho = 0.0
    log_rho_exact = 0.0
    for ctx in slices:
        nu = max(nu, float(np.linalg.norm(ctx.features, axis=1).max()))
        util = ctx.features @ theta0
        log_rho = max(log_rho, float(np.abs(util).max()))
        if exact_rho:
            if capacity is not None and capacity < 2:
                log_rho_exact = max(log_rho_exact, float(np.abs(util).max()))
            else:
                log_rho_exact = max(log_rho_exact, max(0.0, util.max()) - min(0.0, util.min()))
    horizon = max(1, min(int(exploration_horizon), len(slices)))
    v = np.concatenate([ctx.features for ctx in slices[:horizon]], axis=0)
    second = v.T @ v / v.shape[0]
    lambda0 = max(0.0, float(np.linalg.eigvalsh(second)[0]))
    return InstanceStats(nu=nu, rho=float(np.exp(log_rho)), lambda0=lambda0,
                         rho_exact=float(np.exp(log_rho_exact)) if exact_rho else None)
