"""Sequential assortment policies: MLE-UCB and the epoch-based MNL-UCB baseline.

Both policies expose ``select(ctx, rng) -> assortment`` and
``observe(ctx, assortment, purchase)``; the functional ``*_step`` helpers
operate on the underlying state objects directly.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assortment import (LOG_UTILITY_CLIP, BruteForceCapExceeded, Subproblem, approx_multivariate, approx_univariate,
                         best_revenue_assortment, brute_force, greedy_swap)
from .core import NO_PURCHASE, ContextSlice, ObservationLog, cumulative_fisher, empirical_fisher_m, expected_revenue
from .estimation import MleConfig, local_mle, pilot_mle

__all__ = [
    "BaselineConfig",
    "BaselineState",
    "MleUcbPolicy",
    "MnlUcbBaseline",
    "SOLVERS",
    "UcbConfig",
    "UcbState",
    "default_hyperparams",
    "inv_sqrt_psd",
    "mle_ucb_step",
    "mnl_ucb_baseline_step",
    "ucb_bound",
]

SOLVERS = ("greedy", "brute", "dp_univariate", "dp_multivariate")


@dataclass(frozen=True)
class UcbConfig:
    t0: int
    tau: float
    omega: float
    solver: str = "greedy"
    ridge: float = 1e-6
    mle: MleConfig = MleConfig()
    refresh_every: int = 1
    greedy_restarts: int = 1
    epsilon0: float = 0.01
    alpha: float = 1.0
    n_directions: int = 16

    def __post_init__(self):
        if self.t0 < 1:
            raise ValueError("t0 must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


def default_hyperparams(T: int, d: int, K: int, mode: str = "experiment", *,
                        rho: Optional[float] = None, nu: Optional[float] = None, **overrides) -> UcbConfig:
    """Recommended (t0, omega, tau).

    experiment: t0 = floor(sqrt T), omega = sqrt(d ln(TK)), tau = 1/K.
    theory:     t0 = max(ceil(d ln T), ceil(T^(1/4))), omega = sqrt(d ln T), tau = 1/K;
                with ``rho`` and ``nu`` given, omega = sqrt(d ln(rho nu T K)) instead.

    With only floor(sqrt T) exploration periods the pilot is often further
    than 1/K from the truth, and a ball that excludes the truth pins the
    estimate; pass ``tau=math.inf`` to leave the local MLE unconstrained.
    """
    if T < 4 or d < 1 or K < 1:
        raise ValueError("need T >= 4, d >= 1, K >= 1")
    tau = 1.0 / K
    if mode == "experiment":
        t0 = math.isqrt(T)
        omega = math.sqrt(d * math.log(T * K))
    elif mode == "theory":
        t0 = max(math.ceil(d * math.log(T)), math.ceil(T ** 0.25))
        if rho is not None and nu is not None:
            omega = math.sqrt(d * math.log(max(rho * nu * T * K, math.e)))
        else:
            omega = math.sqrt(d * math.log(T))
    else:
        raise ValueError(f"mode must be 'experiment' or 'theory', got {mode!r}")
    params = {"t0": t0, "tau": tau, "omega": omega}
    params.update(overrides)
    return UcbConfig(**params)


def inv_sqrt_psd(mat, floor: float = 0.0):
    """Symmetric inverse square root with eigenvalues clamped below at ``floor``."""
    lam, q = np.linalg.eigh(0.5 * (mat + mat.T))
    if floor > 0:
        lam = np.maximum(lam, floor)
    if lam.min() <= 0:
        raise np.linalg.LinAlgError("matrix is singular; use a positive ridge")
    return (q / np.sqrt(lam)) @ q.T


def ucb_bound(theta_hat, fisher_cum, ctx: ContextSlice, s, omega: float) -> float:
    """Estimated revenue plus min(1, omega * sqrt(||I^-1/2 M I^-1/2||_op))."""
    rev = expected_revenue(theta_hat, ctx, s)
    if omega == 0 or len(s) == 0:
        return rev
    w = inv_sqrt_psd(np.asarray(fisher_cum, dtype=np.float64))
    m = empirical_fisher_m(theta_hat, ctx, s)
    lam = float(np.linalg.eigvalsh(w @ m @ w)[-1])
    return rev + min(1.0, omega * math.sqrt(max(lam, 0.0)))


@dataclass
class UcbState:
    log: ObservationLog
    theta_pilot: Optional[np.ndarray] = None
    theta_hat: Optional[np.ndarray] = None
    period: int = 0
    fisher: Optional[np.ndarray] = None  # sum of M-hat at theta_hat, without ridge
    last_subproblem: Optional[Subproblem] = None
    last_report: object = None
    mle_failures: int = 0
    faults: list = field(default_factory=list)

    @classmethod
    def initial(cls, dim: int, capacity: int, horizon_hint: int = 64):
        return cls(log=ObservationLog(dim, max_size=capacity, capacity_hint=horizon_hint))


def _refresh_estimates(state: UcbState, config: UcbConfig, t: int):
    if state.theta_pilot is None:
        res = pilot_mle(state.log, config.mle)
        if not res.converged:
            state.mle_failures += 1
        state.theta_pilot = res.theta
    due = state.theta_hat is None or (t - config.t0 - 1) % config.refresh_every == 0
    if due:
        res = local_mle(state.log, state.theta_pilot, config.tau, config.mle, start=state.theta_hat)
        if not res.converged:
            state.mle_failures += 1
        state.theta_hat = res.theta
        state.fisher = res.fisher
    else:
        state.fisher = cumulative_fisher(state.theta_hat, state.log, ridge=0.0)


def build_subproblem(state: UcbState, ctx: ContextSlice, config: UcbConfig, capacity: int) -> Subproblem:
    """The period's optimistic subproblem from the current estimate and Fisher sum."""
    w = inv_sqrt_psd(state.fisher + config.ridge * np.eye(ctx.dim), floor=config.ridge)
    util = np.clip(ctx.features @ state.theta_hat, -LOG_UTILITY_CLIP, LOG_UTILITY_CLIP)
    return Subproblem(np.exp(util), ctx.revenues, ctx.features @ w, capacity, config.omega)


def _solve(sub: Subproblem, config: UcbConfig, rng, state: UcbState):
    try:
        if config.solver == "greedy":
            return greedy_swap(sub, rng, restarts=config.greedy_restarts)
        if config.solver == "brute":
            return brute_force(sub)
        if config.solver == "dp_univariate":
            return approx_univariate(sub, config.epsilon0)
        return approx_multivariate(sub, config.alpha, config.epsilon0, config.n_directions, rng)
    except (BruteForceCapExceeded, ValueError) as exc:
        state.faults.append({"period": state.period + 1, "error": str(exc)})
        return greedy_swap(sub, rng, restarts=config.greedy_restarts)


def mle_ucb_step(state: UcbState, ctx: ContextSlice, config: UcbConfig, capacity: int,
                 rng: np.random.Generator):
    """Choose the assortment for period ``state.period + 1``; returns (assortment, state)."""
    t = state.period + 1
    if t <= config.t0:
        state.last_subproblem = None
        return (int(rng.integers(ctx.n_items)),), state
    _refresh_estimates(state, config, t)
    sub = build_subproblem(state, ctx, config, capacity)
    report = _solve(sub, config, rng, state)
    state.last_subproblem = sub
    state.last_report = report
    return report.assortment, state


def record_observation(state: UcbState, ctx: ContextSlice, s, purchase: int) -> UcbState:
    state.log.append(ctx, s, purchase)
    state.period += 1
    return state


class MleUcbPolicy:
    name = "mle-ucb"

    def __init__(self, config: UcbConfig, capacity: int, dim: int, horizon_hint: int = 64):
        self.config = config
        self.capacity = int(capacity)
        self.state = UcbState.initial(dim, capacity, horizon_hint)

    def select(self, ctx: ContextSlice, rng: np.random.Generator) -> tuple:
        s, self.state = mle_ucb_step(self.state, ctx, self.config, self.capacity, rng)
        return s

    def observe(self, ctx: ContextSlice, s, purchase: int) -> None:
        self.state = record_observation(self.state, ctx, s, purchase)

    def build_subproblem(self, ctx: ContextSlice) -> Subproblem:
        """Subproblem the policy would solve this period (estimates refreshed as needed)."""
        t = self.state.period + 1
        if t <= self.config.t0:
            raise RuntimeError("no subproblem during the pure-exploration phase")
        _refresh_estimates(self.state, self.config, t)
        return build_subproblem(self.state, ctx, self.config, self.capacity)

    def metadata(self) -> dict:
        cfg = self.config
        return {"policy": self.name, "t0": cfg.t0, "tau": cfg.tau if math.isfinite(cfg.tau) else None, "omega": cfg.omega,
                "solver": cfg.solver, "ridge": cfg.ridge, "refresh_every": cfg.refresh_every,
                "mle_failures": self.state.mle_failures, "faults": list(self.state.faults)}


# ---------------------------------------------------------------------------
# MNL-UCB baseline (no features; fixed item utilities)


@dataclass(frozen=True)
class BaselineConfig:
    width_scale: float = 48.0  # inside the square-root term
    bonus_scale: float = 48.0  # additive term
    utility_cap: float = 1.0


@dataclass
class BaselineState:
    purchases: np.ndarray
    epochs: np.ndarray
    epoch_counts: np.ndarray
    epoch_index: int = 0
    current: Optional[tuple] = None

    @classmethod
    def initial(cls, n_items: int):
        return cls(np.zeros(n_items), np.zeros(n_items, dtype=np.int64), np.zeros(n_items, dtype=np.int64))

    def mean_utilities(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.epochs > 0, self.purchases / np.maximum(self.epochs, 1), 0.0)


def optimistic_utilities(state: BaselineState, config: BaselineConfig, epoch: int) -> np.ndarray:
    n = state.purchases.shape[0]
    vbar = state.mean_utilities()
    logterm = math.log(math.sqrt(n) * epoch + 1.0)
    seen = state.epochs > 0
    width = np.full(n, np.inf)
    cnt = state.epochs[seen]
    width[seen] = np.sqrt(vbar[seen] * config.width_scale * logterm / cnt) + config.bonus_scale * logterm / cnt
    return np.minimum(vbar + width, config.utility_cap)


def mnl_ucb_baseline_step(state: BaselineState, ctx: ContextSlice, capacity: int,
                          config: BaselineConfig = BaselineConfig(), rng=None):
    """Re-offer the epoch's assortment, or open a new epoch with optimistic utilities."""
    if state.current is None:
        state.epoch_index += 1
        opt = optimistic_utilities(state, config, state.epoch_index)
        opt = np.maximum(opt, 1e-300)
        items, _, _ = best_revenue_assortment(opt, ctx.revenues, capacity)
        state.current = tuple(items)
    return state.current, state


def baseline_observe(state: BaselineState, s, purchase: int) -> BaselineState:
    if purchase == NO_PURCHASE:
        idx = list(s)
        state.epochs[idx] += 1
        state.purchases[idx] += state.epoch_counts[idx]
        state.epoch_counts[idx] = 0
        state.current = None
    else:
        state.epoch_counts[purchase] += 1
    return state


class MnlUcbBaseline:
    name = "mnl-ucb"

    def __init__(self, n_items: int, capacity: int, config: BaselineConfig = BaselineConfig()):
        self.capacity = int(capacity)
        self.config = config
        self.state = BaselineState.initial(n_items)

    def select(self, ctx: ContextSlice, rng: np.random.Generator) -> tuple:
        s, self.state = mnl_ucb_baseline_step(self.state, ctx, self.capacity, self.config, rng)
        return s

    def observe(self, ctx: ContextSlice, s, purchase: int) -> None:
        self.state = baseline_observe(self.state, s, purchase)

    def metadata(self) -> dict:
        return {"policy": self.name, "width_scale": self.config.width_scale,
                "bonus_scale": self.config.bonus_scale, "utility_cap": self.config.utility_cap,
                "epochs": self.state.epoch_index}
