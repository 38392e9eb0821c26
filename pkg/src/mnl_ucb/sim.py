"""Instance generators, episode runner with regret accounting, and replication harness."""
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .assortment import brute_force, exact_revenue_oracle, greedy_swap
from .core import ContextSlice, empirical_fisher_m, expected_revenue, sample_purchase
from .policy import BaselineConfig, MleUcbPolicy, MnlUcbBaseline, UcbConfig, default_hyperparams

__all__ = [
    "AdversarialInstance",
    "Aggregate",
    "EpisodeTrace",
    "InstanceConfig",
    "OraclePolicy",
    "PolicySpec",
    "QualityTable",
    "RandomPolicy",
    "elliptical_potential",
    "gen_adversarial",
    "gen_slice_section6",
    "gen_theta0",
    "greedy_quality_experiment",
    "run_episode",
    "run_replications",
    "write_aggregate_csv",
    "write_trace_csv",
    "write_trace_metadata",
]

FEATURE_MODES = ("section6", "fixed_features", "adversarial")
FEATURE_NORM = 2.0
UTILITY_THRESHOLD = -0.6
MAX_ATTEMPTS_PER_VECTOR = 10**6


@dataclass(frozen=True)
class InstanceConfig:
    N: int
    K: int
    d: int
    T: int
    feature_mode: str = "section6"
    revenue_range: tuple = (0.5, 0.8)
    utility_cap: float = 1.0  # optimistic-utility cap of the feature-free baseline
    adversarial_epsilon: float = 0.0
    adversarial_index: int = 0  # which parameter of the adversarial family is the truth
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "revenue_range", tuple(float(v) for v in self.revenue_range))
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}, got {self.feature_mode!r}")
        if self.d < 1 or self.T < 1:
            raise ValueError("need d >= 1 and T >= 1")
        if not 1 <= self.K <= self.N:
            raise ValueError(f"need 1 <= K <= N, got K={self.K}, N={self.N}")
        lo, hi = self.revenue_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"revenue_range must satisfy 0 <= lo <= hi <= 1, got {self.revenue_range}")
        if self.feature_mode == "adversarial":
            if self.d % 4:
                raise ValueError("adversarial mode needs d divisible by 4")
            n = self.K * math.comb(self.d, self.d // 4)
            if self.N != n:
                raise ValueError(f"adversarial mode with d={self.d}, K={self.K} has N={n}, got N={self.N}")


# ---------------------------------------------------------------------------
# generators


def gen_theta0(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random unit vector."""
    while True:
        g = rng.standard_normal(d)
        nrm = np.linalg.norm(g)
        if nrm > 1e-300:
            return g / nrm


def sample_constrained_features(theta0, n: int, rng: np.random.Generator, norm: float = FEATURE_NORM,
                                threshold: float = UTILITY_THRESHOLD,
                                max_attempts: int = MAX_ATTEMPTS_PER_VECTOR):
    """``n`` vectors uniform on the radius-``norm`` sphere with v . theta0 < threshold.

    Rejection sampling in batches; returns (features, attempts).
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    d = theta0.shape[0]
    out = np.empty((n, d))
    filled = attempts = 0
    since_last = 0
    while filled < n:
        batch = max(32, 4 * (n - filled))
        g = rng.standard_normal((batch, d))
        g *= norm / np.linalg.norm(g, axis=1, keepdims=True)
        ok = np.flatnonzero(g @ theta0 < threshold)
        take = ok[: n - filled]
        if take.size:
            used = int(take[-1]) + 1 if filled + take.size == n else batch
            out[filled: filled + take.size] = g[take]
            filled += take.size
            since_last = 0
        else:
            used = batch
            since_last += batch
        attempts += used
        if since_last > max_attempts:
            raise RuntimeError(f"rejection sampling found no feature with v.theta0 < {threshold} "
                               f"in {since_last} attempts (d={d})")
    return out, attempts


def gen_slice_section6(theta0, N: int, d: int, rng: np.random.Generator, revenue_range=(0.5, 0.8),
                       stats: Optional[dict] = None) -> ContextSlice:
    """Features of norm 2 with v . theta0 < -0.6 and uniform revenues.

    If ``stats`` is a dict, the running counts ``accepted`` and ``attempts``
    are accumulated in it.
    """
    if len(theta0) != d:
        raise ValueError(f"theta0 has length {len(theta0)}, expected d={d}")
    feats, attempts = sample_constrained_features(theta0, N, rng)
    revs = rng.uniform(revenue_range[0], revenue_range[1], size=N)
    if stats is not None:
        stats["accepted"] = stats.get("accepted", 0) + N
        stats["attempts"] = stats.get("attempts", 0) + attempts
    return ContextSlice(feats, revs)


@dataclass(frozen=True)
class AdversarialInstance:
    thetas: np.ndarray  # (M, d), one row per subset W
    subsets: tuple  # M subsets of size d/4
    slice: ContextSlice  # K copies of each feature v_U, unit revenues
    optimal: tuple  # optimal[m] = items carrying feature v_W for W = subsets[m]
    epsilon: float

    def items_of(self, m: int) -> tuple:
        return self.optimal[m]


def gen_adversarial(d: int, K: int, epsilon: float) -> AdversarialInstance:
    """All parameters theta_W (epsilon on W) and K copies of each feature v_U (1/sqrt(d) on U)."""
    if d < 4 or d % 4:
        raise ValueError("d must be a positive multiple of 4")
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0 < epsilon < 1.0 / (d * math.sqrt(d)):
        raise ValueError(f"epsilon must lie in (0, 1/(d sqrt d)) = (0, {1.0 / (d * math.sqrt(d)):.6g})")
    subsets = tuple(combinations(range(d), d // 4))
    m = len(subsets)
    thetas = np.zeros((m, d))
    feats = np.zeros((m * K, d))
    for j, w in enumerate(subsets):
        thetas[j, list(w)] = epsilon
        feats[j * K: (j + 1) * K, list(w)] = 1.0 / math.sqrt(d)
    optimal = tuple(tuple(range(j * K, (j + 1) * K)) for j in range(m))
    return AdversarialInstance(thetas, subsets, ContextSlice(feats, np.ones(m * K)), optimal, float(epsilon))


class Environment:
    """The true parameter and the per-period slices of one episode."""

    def __init__(self, config: InstanceConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.sampling = {}
        self.fixed = None
        if config.feature_mode == "adversarial":
            inst = gen_adversarial(config.d, config.K, config.adversarial_epsilon)
            self.theta0 = inst.thetas[config.adversarial_index % len(inst.thetas)].copy()
            self.fixed = inst.slice
        else:
            self.theta0 = gen_theta0(config.d, rng)
            if config.feature_mode == "fixed_features":
                self.fixed = self._draw()

    def _draw(self):
        c = self.config
        return gen_slice_section6(self.theta0, c.N, c.d, self.rng, c.revenue_range, self.sampling)

    def slice(self, t: int) -> ContextSlice:
        return self.fixed if self.fixed is not None else self._draw()

    @property
    def acceptance_rate(self) -> Optional[float]:
        if not self.sampling.get("attempts"):
            return None
        return self.sampling["accepted"] / self.sampling["attempts"]


# ---------------------------------------------------------------------------
# policies used only by the harness


class OraclePolicy:
    """Plays the exact revenue maximizer under the true parameter."""

    name = "oracle"

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.theta0 = None

    def bind(self, env: Environment):
        self.theta0 = env.theta0

    def select(self, ctx, rng):
        return exact_revenue_oracle(self.theta0, ctx, self.capacity).assortment

    def observe(self, ctx, s, purchase):
        pass

    def metadata(self):
        return {"policy": self.name}


class RandomPolicy:
    """Uniform random size in 1..K, then a uniform random subset of that size."""

    name = "random"

    def __init__(self, capacity: int):
        self.capacity = capacity

    def select(self, ctx, rng):
        k = int(rng.integers(1, min(self.capacity, ctx.n_items) + 1))
        return tuple(sorted(int(i) for i in rng.choice(ctx.n_items, size=k, replace=False)))

    def observe(self, ctx, s, purchase):
        pass

    def metadata(self):
        return {"policy": self.name}


@dataclass(frozen=True)
class PolicySpec:
    """Picklable recipe for building a policy for a given instance config."""

    kind: str = "mle-ucb"  # mle-ucb | mnl-ucb | oracle | random
    mode: str = "experiment"  # hyperparameter recipe when ``ucb`` is None
    ucb: Optional[UcbConfig] = None
    overrides: tuple = ()  # (name, value) pairs applied on top of the recipe
    baseline: BaselineConfig = BaselineConfig()

    def ucb_config(self, config: InstanceConfig) -> UcbConfig:
        if self.ucb is not None:
            return self.ucb
        return default_hyperparams(config.T, config.d, config.K, self.mode, **dict(self.overrides))

    def build(self, config: InstanceConfig):
        if self.kind == "mle-ucb":
            return MleUcbPolicy(self.ucb_config(config), config.K, config.d, horizon_hint=config.T)
        if self.kind == "mnl-ucb":
            base = self.baseline
            if base.utility_cap != config.utility_cap:
                base = BaselineConfig(base.width_scale, base.bonus_scale, config.utility_cap)
            return MnlUcbBaseline(config.N, config.K, base)
        if self.kind == "oracle":
            return OraclePolicy(config.K)
        if self.kind == "random":
            return RandomPolicy(config.K)
        raise ValueError(f"unknown policy kind {self.kind!r}")

    __call__ = build


# ---------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeTrace:
    assortments: list
    purchases: np.ndarray
    regret: np.ndarray
    cumulative: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.assortments)

    def average_regret(self, t: Optional[int] = None) -> float:
        t = self.horizon if t is None else t
        return float(self.cumulative[t - 1] / t)


def _streams(seed):
    """Three independent generators (instance, policy, purchases) from one seed."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(3)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def run_episode(config: InstanceConfig, policy, seed=None) -> EpisodeTrace:
    """Play ``config.T`` periods of ``policy`` and record regret against the exact oracle.

    ``seed`` (int, SeedSequence or Generator; default ``config.seed``) is
    split into separate instance, policy and purchase streams, so two
    policies run with the same seed face the same parameter and slices.
    """
    inst_rng, pol_rng, buy_rng = _streams(config.seed if seed is None else seed)
    env = Environment(config, inst_rng)
    if hasattr(policy, "bind"):
        policy.bind(env)
    T = config.T
    assortments = []
    purchases = np.empty(T, dtype=np.int64)
    regret = np.empty(T)
    cached_opt = None
    for t in range(T):
        ctx = env.slice(t)
        if env.fixed is not None:
            if cached_opt is None:
                cached_opt = exact_revenue_oracle(env.theta0, ctx, config.K).estr
            best = cached_opt
        else:
            best = exact_revenue_oracle(env.theta0, ctx, config.K).estr
        s = tuple(policy.select(ctx, pol_rng))
        if len(s) > config.K:
            raise RuntimeError(f"policy offered {len(s)} items with capacity {config.K}")
        buy = sample_purchase(env.theta0, ctx, s, buy_rng)
        policy.observe(ctx, s, buy)
        assortments.append(s)
        purchases[t] = buy
        regret[t] = best - expected_revenue(env.theta0, ctx, s)
    meta = {"config": _config_dict(config), "theta0": env.theta0.tolist(),
            "policy": policy.metadata() if hasattr(policy, "metadata") else {"policy": type(policy).__name__}}
    if env.acceptance_rate is not None:
        meta["acceptance_rate"] = env.acceptance_rate
    return EpisodeTrace(assortments, purchases, regret, np.cumsum(regret), meta)


def _config_dict(config: InstanceConfig) -> dict:
    out = asdict(config)
    out["revenue_range"] = list(config.revenue_range)
    return out


@dataclass
class Aggregate:
    mean: np.ndarray
    median: np.ndarray
    stderr: np.ndarray
    lower: np.ndarray  # per-period min across episodes
    upper: np.ndarray  # per-period max across episodes
    reps: int
    traces: list = field(default_factory=list)

    def average_regret(self, t: int) -> float:
        return float(self.mean[t - 1] / t)


def _episode_task(args):
    config, spec, ss = args
    return run_episode(config, spec.build(config), ss)


def episode_seeds(master_seed: int, reps: int) -> list:
    return np.random.SeedSequence(master_seed).spawn(reps)


def run_replications(config: InstanceConfig, policy_spec: PolicySpec, reps: int, parallelism: int = 1,
                     master_seed: Optional[int] = None, keep_traces: bool = True) -> Aggregate:
    """Independent episodes seeded from one master seed; per-period curve statistics."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    seeds = episode_seeds(config.seed if master_seed is None else master_seed, reps)
    tasks = [(config, policy_spec, ss) for ss in seeds]
    if parallelism > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            traces = list(pool.map(_episode_task, tasks))
    else:
        traces = [_episode_task(t) for t in tasks]
    return aggregate_traces(traces, keep_traces)


def aggregate_traces(traces: Sequence[EpisodeTrace], keep_traces: bool = True) -> Aggregate:
    curves = np.stack([tr.cumulative for tr in traces])
    reps = curves.shape[0]
    stderr = curves.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros(curves.shape[1])
    return Aggregate(curves.mean(axis=0), np.median(curves, axis=0), stderr, curves.min(axis=0),
                     curves.max(axis=0), reps, list(traces) if keep_traces else [])


# ---------------------------------------------------------------------------
# greedy quality (relative objective gap versus enumeration)

PERCENTILES = (94.0, 96.0, 98.0, 99.0, 99.5)


@dataclass
class QualityTable:
    horizons: list
    gaps: dict  # T -> array of relative gaps
    percentiles: tuple = PERCENTILES

    def row(self, T: int) -> dict:
        g = self.gaps[T]
        out = {f"p{p:g}": float(np.percentile(g, p)) for p in self.percentiles}
        out["mean"] = float(g.mean())
        out["n"] = int(g.size)
        return out

    def header(self) -> list:
        return ["T"] + [f"p{p:g}" for p in self.percentiles] + ["mean", "n"]


def harvest_subproblem(config: InstanceConfig, policy_spec: PolicySpec, seed):
    """Run MLE-UCB for T-1 periods; return (subproblem of period T, policy rng)."""
    inst_rng, pol_rng, buy_rng = _streams(seed)
    env = Environment(config, inst_rng)
    policy = policy_spec.build(config)
    for t in range(config.T - 1):
        ctx = env.slice(t)
        s = policy.select(ctx, pol_rng)
        policy.observe(ctx, s, sample_purchase(env.theta0, ctx, s, buy_rng))
    return policy.build_subproblem(env.slice(config.T - 1)), pol_rng


def greedy_quality_experiment(T_list=(50, 200, 800), instances_per_T: int = 200, seed: int = 0,
                              N: int = 10, K: int = 4, d: int = 5, restarts: int = 1,
                              policy_spec: PolicySpec = PolicySpec()) -> QualityTable:
    """Relative gap (brute - greedy) / brute on subproblems harvested at period T."""
    master = np.random.SeedSequence(seed)
    gaps = {}
    for T, ss in zip(T_list, master.spawn(len(T_list))):
        config = InstanceConfig(N=N, K=K, d=d, T=int(T))
        vals = np.empty(instances_per_T)
        for i, child in enumerate(ss.spawn(instances_per_T)):
            sub, rng = harvest_subproblem(config, policy_spec, child)
            best = brute_force(sub).objective
            got = greedy_swap(sub, rng, restarts=restarts).objective
            vals[i] = max(0.0, best - got) / best if best > 0 else 0.0
        gaps[int(T)] = vals
    return QualityTable(list(gaps), gaps)


# ---------------------------------------------------------------------------
# elliptical potential diagnostic


def elliptical_potential(log, theta0, t0: int):
    """(sum over t > t0 of min(1, ||I_{t-1}^-1/2 M_t I_{t-1}^-1/2||^2), 4 log det(I_T) / det(I_t0)).

    Matrices are the empirical Fisher matrices at ``theta0`` without ridge.
    """
    mats = [empirical_fisher_m(theta0, ctx, s) for ctx, s, _ in log]
    if t0 < 1 or t0 >= len(mats):
        raise ValueError("need 1 <= t0 < len(log)")
    cum = np.sum(mats[:t0], axis=0)
    sign0, logdet0 = np.linalg.slogdet(cum)
    if sign0 <= 0:
        raise np.linalg.LinAlgError("Fisher sum over the exploration phase is singular")
    total = 0.0
    for m in mats[t0:]:
        lam = float(scipy.linalg.eigh(m, cum, eigvals_only=True)[-1])
        total += min(1.0, max(lam, 0.0) ** 2)
        cum = cum + m
    _, logdet = np.linalg.slogdet(cum)
    return total, 4.0 * (logdet - logdet0)


# ---------------------------------------------------------------------------
# persistence


def _fmt(v) -> str:
    return format(float(v), ".9g")


def write_trace_csv(path, trace: EpisodeTrace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "assortment", "purchase", "regret", "cumulative_regret"])
        for t, (s, buy, r, c) in enumerate(zip(trace.assortments, trace.purchases, trace.regret,
                                                trace.cumulative), start=1):
            w.writerow([t, " ".join(str(i) for i in s), int(buy), _fmt(r), _fmt(c)])


def write_trace_metadata(path, trace: EpisodeTrace, extra: Optional[dict] = None) -> None:
    doc = dict(trace.metadata)
    doc["final_cumulative_regret"] = float(_fmt(trace.cumulative[-1]))
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_aggregate_csv(path, agg: Aggregate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "mean", "median", "stderr", "min", "max", "average_regret"])
        for t in range(agg.mean.shape[0]):
            w.writerow([t + 1, _fmt(agg.mean[t]), _fmt(agg.median[t]), _fmt(agg.stderr[t]),
                        _fmt(agg.lower[t]), _fmt(agg.upper[t]), _fmt(agg.mean[t] / (t + 1))])


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
