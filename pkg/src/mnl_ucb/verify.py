"""Self-contained numerical checks of the library's invariants.

Each suite builds its own seeded random instances, compares library output
against an independent computation, and returns a :class:`SuiteResult`.
Suites look up the functions under test through their modules, so a test
can patch one in and watch the matching suite fail.
"""
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import assortment, core
from .assortment import Subproblem
from .sim import InstanceConfig, PolicySpec, elliptical_potential, run_episode

__all__ = ["SUITES", "GROUPS", "SuiteResult", "run_suites", "resolve"]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    checks: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))


def _g(v) -> str:
    return format(float(v), ".9g")


# ---------------------------------------------------------------------------
# helpers shared by the suites


def _random_triple(rng, d_max=5, n_max=8, k_max=5):
    d = int(rng.integers(1, d_max + 1))
    n = int(rng.integers(1, n_max + 1))
    ctx = core.ContextSlice(rng.normal(size=(n, d)), rng.uniform(size=n))
    theta = rng.normal(size=d)
    k = int(rng.integers(1, min(n, k_max) + 1))
    s = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    return theta, ctx, s


def _neg_log_prob(theta, feats, i):
    """-log p(i | S) for the rows ``feats`` of S; i = -1 is the outside option."""
    util = np.concatenate([[0.0], feats @ theta])
    top = util.max()
    lse = top + math.log(np.exp(util - top).sum())
    return lse - util[i + 1]


def fd_hessian(f, theta, step):
    d = theta.shape[0]
    h = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            ea = np.zeros(d)
            eb = np.zeros(d)
            ea[a] = step
            eb[b] = step
            h[a, b] = (f(theta + ea + eb) - f(theta + ea - eb) - f(theta - ea + eb) + f(theta - ea - eb)) / (4 * step * step)
    return h


def _eig2_max(m):
    a, b, c = m[0, 0], m[0, 1], m[1, 1]
    return 0.5 * (a + c) + math.sqrt(0.25 * (a - c) ** 2 + b * b)


def _random_sub(rng, n, k, d, omega, x_scale=1.0):
    u = np.exp(rng.uniform(-2.0, 1.0, size=n))
    r = rng.uniform(size=n)
    x = rng.uniform(-x_scale, x_scale, size=(n, d)) if d == 1 else rng.normal(size=(n, d)) * x_scale
    return Subproblem(u, r, x, k, omega)


def corollary2_gap(epsilon0, omega, nu):
    return 6 * epsilon0 + omega * (1 + nu) * math.sqrt(24 * epsilon0)


# ---------------------------------------------------------------------------
# suites


def suite_fisher(rng, n_triples=200, step=1e-4, tol=1e-5):
    res = SuiteResult("fisher")
    worst = 0.0
    for _ in range(n_triples):
        theta, ctx, s = _random_triple(rng)
        m = core.empirical_fisher_m(theta, ctx, s)
        feats = ctx.features[list(s)]
        for i in (-1, int(rng.integers(len(s)))):
            h = fd_hessian(lambda th: _neg_log_prob(th, feats, i), theta, step)
            worst = max(worst, float(np.abs(h - m).max()))
    res.add("finite-difference Hessian", worst <= tol, f"max entry error {_g(worst)} (tol {tol:g})")
    return res


def suite_ci_eigen(rng, n_instances=200, tol=1e-10):
    res = SuiteResult("ci-eigen")
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 7))
        sub = _random_sub(rng, n, n, 2, 1.0)
        s = tuple(sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist()))
        u, x = sub.utilities[list(s)], sub.x[list(s)]
        den = 1 + u.sum()
        mean = u @ x / den
        cov = (x * u[:, None]).T @ x / den - np.outer(mean, mean)
        want = math.sqrt(max(_eig2_max(cov), 0.0))
        got = assortment.ci(sub, s)
        worst = max(worst, abs(got - want))
    res.add("2x2 closed-form eigenvalue", worst <= tol, f"max |ci - oracle| {_g(worst)}")
    sub = Subproblem([1.0], [0.6], [[2.0]], 1, 0.5)
    val = assortment.ci(sub, (0,))
    res.add("d=1 forced arithmetic", abs(val - 1.0) <= 1e-12, f"ci {_g(val)} (want 1)")
    return res


def suite_prop4(rng, n_instances=500, tol=1e-9):
    res = SuiteResult("prop4")
    worst = 0.0
    moves_ok = True
    for _ in range(n_instances):
        n = int(rng.integers(1, 13))
        k = int(rng.integers(1, 6))
        d = int(rng.choice([1, 2, 5]))
        sub = _random_sub(rng, n, k, d, 0.0)
        g = assortment.greedy_swap(sub, rng)
        b = assortment.brute_force(sub)
        worst = max(worst, abs(g.objective - b.objective))
        moves_ok &= g.iterations <= 10 * n**4
    res.add("greedy equals enumeration at omega=0", worst <= tol, f"max gap {_g(worst)} over {n_instances}")
    res.add("move count <= 10 N^4", moves_ok)
    return res


def suite_dp_states(rng, n_instances=40, epsilon0=0.05):
    res = SuiteResult("dp-states")
    mismatches = 0
    total = 0
    for _ in range(n_instances):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(0, 4))
        sub = _random_sub(rng, n, k, 1, 1.0, x_scale=2.0)
        for q in range(n):
            total += 1
            if assortment.dp_reachable_states(sub, q, epsilon0) != assortment.reachable_states_by_definition(sub, q, epsilon0):
                mismatches += 1
    res.add("reachable states equal the definition", mismatches == 0, f"{mismatches} of {total} anchored runs differ")
    return res


def suite_corollary2(rng, n_instances=100, epsilon0=0.01, omega=1.0):
    res = SuiteResult("corollary2")
    violations = 0
    worst = -math.inf
    for _ in range(n_instances):
        sub = _random_sub(rng, 8, 3, 1, omega, x_scale=3.0)
        a = assortment.approx_univariate(sub, epsilon0)
        b = assortment.brute_force(sub)
        slack = corollary2_gap(epsilon0, omega, sub.nu)
        gap = b.objective - a.objective
        worst = max(worst, gap)
        violations += gap > slack
    res.add("additive gap within bound", violations == 0,
            f"{violations} violations; largest observed gap {_g(worst)}")
    return res


def suite_multivariate(rng, n_instances=100, epsilon0=0.01, omega=1.0, n_directions=64, need=95):
    res = SuiteResult("multivariate")
    alpha = math.sqrt(2.0)
    hits_bound = 0
    hits_strict = 0
    for _ in range(n_instances):
        sub = _random_sub(rng, 6, 3, 2, omega)
        rep = assortment.approx_multivariate(sub, alpha, epsilon0, n_directions, rng)
        best = assortment.brute_force(sub).objective
        inflated = rep.meta["inflated_objective"]
        hits_bound += inflated >= best - corollary2_gap(epsilon0, omega, sub.nu)
        hits_strict += inflated >= best - epsilon0
    res.add("inflated objective within bound", hits_bound >= need, f"{hits_bound}/{n_instances} (need {need})")
    res.add("inflated objective within epsilon0", hits_strict >= need, f"{hits_strict}/{n_instances} (need {need})")
    return res


def suite_elliptical(rng, n_traces=10, N=20, K=4, d=3, T=1000):
    res = SuiteResult("elliptical")
    ok = 0
    worst = math.inf
    for seed in rng.integers(0, 2**32, size=n_traces):
        config = InstanceConfig(N=N, K=K, d=d, T=T)
        spec = PolicySpec()
        policy = spec.build(config)
        trace = run_episode(config, policy, int(seed))
        lhs, rhs = elliptical_potential(policy.state.log, np.array(trace.metadata["theta0"]), policy.config.t0)
        ok += lhs <= rhs
        worst = min(worst, rhs - lhs)
    res.add("potential sum <= 4 log det ratio", ok == n_traces, f"{ok}/{n_traces}; smallest margin {_g(worst)}")
    return res


def suite_normalization(rng, n_triples=500, tol=1e-12):
    res = SuiteResult("normalization")
    worst = 0.0
    positive = True
    for _ in range(n_triples):
        theta, ctx, s = _random_triple(rng)
        theta = theta * rng.choice([1.0, 5.0, 20.0])
        p = core.choice_probabilities(theta, ctx, s)
        worst = max(worst, abs(sum(p.values()) - 1.0))
        positive &= all(v > 0 for v in p.values())
    res.add("probabilities sum to one", worst <= tol, f"max deviation {_g(worst)}")
    res.add("probabilities strictly positive", positive)
    return res


def suite_psd(rng, n_triples=500, tol=1e-9):
    res = SuiteResult("psd")
    worst = math.inf
    asym = 0.0
    for _ in range(n_triples):
        theta, ctx, s = _random_triple(rng)
        m = core.empirical_fisher_m(theta, ctx, s)
        asym = max(asym, float(np.abs(m - m.T).max()))
        worst = min(worst, float(np.linalg.eigvalsh(m)[0]))
    res.add("empirical Fisher is PSD", worst >= -tol, f"min eigenvalue {_g(worst)}")
    res.add("empirical Fisher is symmetric", asym <= 1e-12, f"max asymmetry {_g(asym)}")
    return res


def suite_regret(rng, tol=1e-9):
    res = SuiteResult("regret")
    worst = math.inf
    for kind in ("random", "mle-ucb", "mnl-ucb"):
        mode = "fixed_features" if kind == "mnl-ucb" else "section6"
        config = InstanceConfig(N=12, K=3, d=3, T=150, feature_mode=mode)
        trace = run_episode(config, PolicySpec(kind=kind).build(config), int(rng.integers(2**32)))
        worst = min(worst, float(trace.regret.min()))
    oracle_cfg = InstanceConfig(N=12, K=3, d=3, T=100)
    o = run_episode(oracle_cfg, PolicySpec(kind="oracle").build(oracle_cfg), int(rng.integers(2**32)))
    res.add("per-period regret >= 0", worst >= -tol, f"min regret {_g(worst)}")
    res.add("oracle policy has zero regret", abs(o.cumulative[-1]) <= tol, f"{_g(o.cumulative[-1])}")
    return res


def suite_determinism(rng):
    res = SuiteResult("determinism")
    seed = int(rng.integers(2**32))
    config = InstanceConfig(N=10, K=3, d=3, T=120)
    runs = [run_episode(config, PolicySpec().build(config), seed) for _ in range(2)]
    same = runs[0].assortments == runs[1].assortments and np.array_equal(runs[0].regret, runs[1].regret) \
        and np.array_equal(runs[0].purchases, runs[1].purchases)
    res.add("identical seeds give identical traces", same)
    rng2 = np.random.default_rng(seed)
    sub = _random_sub(rng2, 10, 3, 2, 1.0)
    a = assortment.greedy_swap(sub, np.random.default_rng(seed))
    b = assortment.greedy_swap(sub, np.random.default_rng(seed))
    res.add("greedy is deterministic given its seed", a.assortment == b.assortment and a.objective == b.objective)
    return res


SUITES: dict = {
    "fisher": suite_fisher,
    "ci-eigen": suite_ci_eigen,
    "prop4": suite_prop4,
    "dp-states": suite_dp_states,
    "corollary2": suite_corollary2,
    "multivariate": suite_multivariate,
    "elliptical": suite_elliptical,
    "normalization": suite_normalization,
    "psd": suite_psd,
    "regret": suite_regret,
    "determinism": suite_determinism,
}

GROUPS = {
    "core": ["normalization", "psd", "regret", "determinism", "dp-states"],
    "all": list(SUITES),
}


def resolve(selectors) -> list:
    names = []
    for sel in selectors or ["all"]:
        if sel in GROUPS:
            names.extend(GROUPS[sel])
        elif sel in SUITES:
            names.append(sel)
        else:
            raise KeyError(f"unknown suite {sel!r}; choose from {sorted(SUITES) + sorted(GROUPS)}")
    seen = []
    for n in names:
        if n not in seen:
            seen.append(n)
    return seen


def run_suites(selectors=None, seed: int = 0, report: Optional[Callable[[str], None]] = None) -> list:
    """Run the selected suites, each with its own generator derived from ``seed``."""
    out = []
    for name in resolve(selectors):
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        t0 = time.perf_counter()
        res = SUITES[name](rng)
        res.wall_time = time.perf_counter() - t0
        out.append(res)
        if report is not None:
            for c in res.checks:
                report(f"[{'PASS' if c.passed else 'FAIL'}] {name}: {c.name}" + (f" ({c.detail})" if c.detail else ""))
    return out
