"""Maximum-likelihood fitting of the MNL coefficient.

``pilot_mle`` is the unconstrained fit on singleton exploration data;
``local_mle`` maximizes the same likelihood over a Euclidean ball around a
center.  Both use Newton-type steps with Armijo backtracking.  On the ball,
each step maximizes the local quadratic model over the ball (a trust-region
subproblem solved through an eigendecomposition and a secular equation), and
the line search runs along the segment to that point, so every iterate stays
feasible.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .core import ObservationLog

__all__ = ["MleConfig", "MleResult", "local_mle", "pilot_mle"]

_BALL_TOL = 1e-9
_ROUNDING = 1e-13
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class MleConfig:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    step_shrink: float = 0.5
    ridge: float = 1e-6
    armijo: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass
class MleResult:
    theta: np.ndarray
    objective: float  # unpenalized log-likelihood at theta
    converged: bool
    iterations: int
    active_constraint: bool = False
    fisher: Optional[np.ndarray] = None  # sum of empirical Fisher matrices at theta (no ridge)
    history: list = field(default_factory=list)  # penalized objective of each accepted iterate


class _Objective:
    def __init__(self, log: ObservationLog, ridge: float):
        if len(log) == 0:
            raise ValueError("cannot fit an MLE on an empty log")
        self.arrays = log.arrays()
        self.ridge = ridge

    def __call__(self, theta, want_hess=True):
        ll, g, h = kernels.loglik_terms(theta, *self.arrays, want_hess=want_hess)
        pen = ll - 0.5 * self.ridge * float(theta @ theta)
        g = g - self.ridge * theta
        return ll, pen, g, h


def _newton_direction(g, h_pen):
    try:
        return np.linalg.solve(h_pen, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(h_pen, g, rcond=None)[0]


def _ball_model_target(theta, g, h_pen, center, tau):
    """Maximizer of the quadratic model of the objective at theta over the ball."""
    lam, q = np.linalg.eigh(h_pen)
    lam = np.clip(lam, 0.0, None)
    b = q.T @ (g + h_pen @ (theta - center))

    def radius(mult):
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(b == 0.0, 0.0, b / (lam + mult))
        return float(np.linalg.norm(z))

    if lam.min() > 0 and radius(0.0) <= tau:
        return theta + _newton_direction(g, h_pen)
    hi = max(np.linalg.norm(b) / tau, 1e-300)
    if radius(hi) > tau:  # pragma: no cover - guarded by construction
        hi *= 2.0
    lo = 0.0 if lam.min() > 0 else 1e-300
    if radius(lo) <= tau:
        mult = lo
    else:
        mult = brentq(lambda m: radius(m) - tau, lo, hi, xtol=1e-15 * hi, rtol=1e-12, maxiter=500)
    target = center + q @ (b / (lam + mult))
    off = target - center
    nrm = np.linalg.norm(off)
    if nrm > tau:
        target = center + off * (tau / nrm)
    return target


def _stationary(theta, g, center, tau, tol):
    if tau is None:
        return float(np.linalg.norm(g)) <= tol, False
    off = theta - center
    dist = float(np.linalg.norm(off))
    active = dist >= tau - _BALL_TOL
    if not active:
        return float(np.linalg.norm(g)) <= tol, False
    n = off / dist if dist > 0 else np.zeros_like(off)
    radial = float(g @ n)
    tangential = float(np.linalg.norm(g - radial * n)) if dist > 0 else float(np.linalg.norm(g))
    return tangential <= tol and radial >= -tol, True


def _kkt_residual(theta, g, center, tau):
    if tau is None:
        return float(np.linalg.norm(g))
    off = theta - center
    dist = float(np.linalg.norm(off))
    if dist < tau - _BALL_TOL or dist == 0:
        return float(np.linalg.norm(g))
    n = off / dist
    radial = float(g @ n)
    return float(np.linalg.norm(g - radial * n)) + max(0.0, -radial)


def _solve(log, config, start, center=None, tau=None):
    fn = _Objective(log, config.ridge)
    d = log.dim
    theta = np.array(start, dtype=np.float64)
    ll, pen, g, h = fn(theta)
    history = [pen]
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        ok, _ = _stationary(theta, g, center, tau, config.gradient_tolerance)
        if ok:
            converged = True
            it -= 1
            break
        h_pen = h + config.ridge * np.eye(d)
        if tau is None:
            direction = _newton_direction(g, h_pen)
        else:
            direction = _ball_model_target(theta, g, h_pen, center, tau) - theta
        slope = float(g @ direction)
        noise = _ROUNDING * (1.0 + abs(pen))
        if not np.all(np.isfinite(direction)) or slope < -noise:
            direction = g if tau is None else _projected_gradient_step(theta, g, center, tau)
            slope = float(g @ direction)
            if not slope > 0:
                break
        step = 1.0
        accepted = False
        g_norm = _kkt_residual(theta, g, center, tau)
        for _ in range(_MAX_BACKTRACKS):
            trial = theta + step * direction
            t_ll, t_pen, t_g, t_h = fn(trial)
            if np.isfinite(t_pen):
                if step * slope > noise:
                    if t_pen >= pen + config.armijo * step * slope:
                        accepted = True
                        break
                # ascent below the rounding level of the objective: judge by the gradient
                elif t_pen >= pen - noise and _kkt_residual(trial, t_g, center, tau) < g_norm:
                    accepted = True
                    break
            step *= config.step_shrink
        if not accepted:
            # no measurable ascent left; accept only if the value did not drop
            if np.isfinite(t_pen) and t_pen >= pen:
                theta, ll, pen, g, h = trial, t_ll, t_pen, t_g, t_h
                history.append(pen)
            ok, _ = _stationary(theta, g, center, tau, config.gradient_tolerance)
            converged = ok
            break
        theta, ll, pen, g, h = trial, t_ll, t_pen, t_g, t_h
        history.append(pen)
    else:
        converged, _ = _stationary(theta, g, center, tau, config.gradient_tolerance)
    if tau is not None:
        off = theta - center
        dist = float(np.linalg.norm(off))
        if dist > tau:
            theta = center + off * (tau / dist)
            ll, pen, g, h = fn(theta)
        active = float(np.linalg.norm(theta - center)) >= tau - _BALL_TOL
    else:
        active = False
    return MleResult(theta=theta, objective=ll, converged=bool(converged), iterations=it,
                     active_constraint=bool(active), fisher=h, history=history)


def _projected_gradient_step(theta, g, center, tau):
    target = theta + g / max(1.0, float(np.linalg.norm(g)))
    off = target - center
    nrm = np.linalg.norm(off)
    if nrm > tau:
        target = center + off * (tau / nrm)
    return target - theta


def pilot_mle(log: ObservationLog, config: MleConfig = MleConfig()) -> MleResult:
    """Global MLE on pure-exploration (singleton) data, started at zero."""
    if len(log) == 0:
        raise ValueError("pilot_mle needs a nonempty log")
    if not log.is_singleton():
        raise ValueError("pilot_mle expects singleton assortments only")
    return _solve(log, config, np.zeros(log.dim))


def local_mle(log: ObservationLog, center, tau: float, config: MleConfig = MleConfig(),
              start=None) -> MleResult:
    """MLE restricted to the ball ``||theta - center|| <= tau``.

    ``tau = inf`` (or None) drops the constraint.  ``start`` is a warm start;
    it is projected onto the ball if it lies outside.
    """
    if len(log) == 0:
        raise ValueError("local_mle needs a nonempty log")
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    if center.shape[0] != log.dim:
        raise ValueError(f"center has length {center.shape[0]}, log has d={log.dim}")
    if tau is not None and tau < 0:
        raise ValueError("tau must be >= 0")
    if tau is None or np.isinf(tau):
        x0 = center if start is None else np.asarray(start, dtype=np.float64)
        return _solve(log, config, x0)
    if tau == 0:
        fn = _Objective(log, config.ridge)
        ll, _, _, h = fn(center.copy())
        return MleResult(theta=center.copy(), objective=ll, converged=True, iterations=0,
                         active_constraint=True, fisher=h, history=[])
    x0 = center.copy() if start is None else np.array(start, dtype=np.float64)
    off = x0 - center
    nrm = np.linalg.norm(off)
    if nrm > tau:
        x0 = center + off * (tau / nrm)
    return _solve(log, config, x0, center=center, tau=float(tau))
