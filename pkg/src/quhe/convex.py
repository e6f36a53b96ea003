"""Small dense smooth-convex minimizer (log-barrier Newton).

Problems are ``min f(x)  s.t.  g_i(x) <= 0`` with ``f`` and every ``g_i``
smooth and convex on the strict interior. Iterates never leave the strict
interior: the line search backtracks until every ``g_i < 0``.

Hessians come from optional callbacks; when a callback is absent it is
replaced by central differences of the analytic gradient (dimensions here are
at most a few dozen, so this is cheap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ConvexSolveError(RuntimeError):
    pass


class InfeasibleStartError(ConvexSolveError):
    """The initial point is not strictly feasible."""


class NonFiniteError(ConvexSolveError):
    pass


@dataclass
class SmoothProblem:
    """Inequality-constrained smooth problem.

    Parameters
    ----------
    objective : callable
        ``x -> (f, grad f)``.
    x0 : ndarray
        Initial point; must be strictly feasible for :func:`minimize`.
    constraints : callable, optional
        ``x -> (g, J)`` with ``g`` of shape ``(m,)`` and Jacobian ``J`` of
        shape ``(m, n)``.
    objective_hess : callable, optional
        ``x -> H``.
    constraint_hess : callable, optional
        ``(x, weights) -> sum_i weights[i] * hess g_i(x)``.
    """

    objective: Callable
    x0: np.ndarray
    constraints: Optional[Callable] = None
    objective_hess: Optional[Callable] = None
    constraint_hess: Optional[Callable] = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).copy()

    @property
    def dim(self) -> int:
        return self.x0.size

    def eval_constraints(self, x):
        if self.constraints is None:
            return np.zeros(0), np.zeros((0, x.size))
        g, J = self.constraints(x)
        return np.atleast_1d(np.asarray(g, dtype=float)), np.atleast_2d(np.asarray(J, dtype=float))


@dataclass
class BarrierSettings:
    tol: float = 1e-4
    t0: float = 1.0
    mu: float = 10.0
    newton_tol: float = 1e-10
    max_newton: int = 200
    max_outer: int = 60
    armijo: float = 0.25
    backtrack: float = 0.5
    fd_step: float = 1e-6
    #: scaled KKT residual accepted as stationary; defaults to max(tol, 1e-5)
    kkt_tol: Optional[float] = None

    @property
    def stationarity_tol(self) -> float:
        return self.kkt_tol if self.kkt_tol is not None else max(self.tol, 1e-5)


@dataclass
class SolveCertificate:
    x: np.ndarray
    value: float
    stationarity: float
    violation: float
    gap: float
    outer_iterations: int
    newton_iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _fd_jacobian(fun, x, step):
    n = x.size
    cols = []
    for k in range(n):
        h = step * max(1.0, abs(x[k]))
        e = np.zeros(n)
        e[k] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    H = np.array(cols).T
    return 0.5 * (H + H.T)


def _objective_hessian(problem, x, step):
    if problem.objective_hess is not None:
        return np.asarray(problem.objective_hess(x), dtype=float)
    return _fd_jacobian(lambda y: problem.objective(y)[1], x, step)


def _constraint_hessian(problem, x, weights, step):
    if problem.constraint_hess is not None:
        return np.asarray(problem.constraint_hess(x, weights), dtype=float)
    return _fd_jacobian(lambda y: problem.eval_constraints(y)[1].T @ weights, x, step)


def _strictly_feasible(problem, x):
    if not np.all(np.isfinite(x)):
        return False
    try:
        g, _ = problem.eval_constraints(x)
    except (ValueError, FloatingPointError, ZeroDivisionError):
        return False
    return bool(np.all(np.isfinite(g)) and np.all(g < 0))


def _barrier_value(problem, x, t):
    f, _ = problem.objective(x)
    g, _ = problem.eval_constraints(x)
    return t * f - np.sum(np.log(-g))


def minimize(problem: SmoothProblem, settings: BarrierSettings = None,
             stop: Optional[Callable] = None) -> SolveCertificate:
    """Minimize by the barrier method; see module docstring.

    The barrier parameter grows by ``settings.mu`` until the duality-gap
    bound ``m / t`` falls below ``settings.tol``. ``stop(x)`` returning True
    after any accepted Newton step ends the solve early (unconverged).
    """
    s = settings or BarrierSettings()
    x = problem.x0.copy()
    if not _strictly_feasible(problem, x):
        raise InfeasibleStartError("initial point is not strictly feasible")
    g, _ = problem.eval_constraints(x)
    m = g.size
    t = s.t0 if m else 1.0
    history = []
    newton_total = 0
    outer = 0

    with np.errstate(all="ignore"):
        while True:
            outer += 1
            x, its, halted = _center(problem, x, t, s, stop)
            newton_total += its
            f, grad_f = problem.objective(x)
            if not np.isfinite(f):
                raise NonFiniteError(f"objective not finite at {x}")
            gap = m / t if m else 0.0
            history.append({"t": t, "objective": float(f), "gap": gap})
            if halted or gap <= s.tol or outer >= s.max_outer:
                break
            t *= s.mu

        stationarity, violation = _kkt_residual(problem, x, t)
        scale = max(1.0, float(np.max(np.abs(grad_f))) if grad_f.size else 1.0)
    converged = (gap <= s.tol and stationarity <= s.stationarity_tol * scale
                 and violation <= s.tol)
    return SolveCertificate(x, float(f), stationarity, violation, gap, outer,
                            newton_total, bool(converged), history)


def _kkt_residual(problem, x, t):
    _, grad_f = problem.objective(x)
    g, J = problem.eval_constraints(x)
    if g.size:
        mult = 1.0 / (-t * g)
        resid = grad_f + J.T @ mult
        violation = float(max(0.0, np.max(g)))
    else:
        resid = grad_f
        violation = 0.0
    return float(np.max(np.abs(resid))) if resid.size else 0.0, violation


def _center(problem, x, t, s, stop=None):
    """Newton's method on ``t f + barrier`` from a strictly feasible ``x``."""
    its = 0
    for its in range(1, s.max_newton + 1):
        f, grad_f = problem.objective(x)
        g, J = problem.eval_constraints(x)
        if not (np.isfinite(f) and np.all(np.isfinite(grad_f))):
            raise NonFiniteError(f"non-finite objective or gradient at {x}")
        inv = 1.0 / (-g)
        grad = t * grad_f + J.T @ inv
        H = t * _objective_hessian(problem, x, s.fd_step)
        if g.size:
            H = H + (J.T * inv**2) @ J + _constraint_hessian(problem, x, inv, s.fd_step)
        dx = _newton_direction(H, grad)
        decrement = -grad @ dx
        psi = t * f - np.sum(np.log(-g))
        # Below ~1e3 ulps of psi the decrement is roundoff.
        if decrement / 2 <= s.newton_tol:
            break
        if decrement / 2 <= 1e3 * np.finfo(float).eps * abs(psi):
            x, extra = _polish(problem, x, t, s, dx, grad)
            its += extra
            break
        step = 1.0
        accepted = False
        while step > 1e-14:
            xn = x + step * dx
            if _strictly_feasible(problem, xn):
                psin = _barrier_value(problem, xn, t)
                if np.isfinite(psin) and psin <= psi - s.armijo * step * decrement:
                    accepted = True
                    break
            step *= s.backtrack
        if not accepted:
            # No representable decrease left at this barrier weight.
            break
        x = xn
        if stop is not None and stop(x):
            return x, its, True
    return x, its, False


def _barrier_gradient(problem, x, t):
    _, grad_f = problem.objective(x)
    g, J = problem.eval_constraints(x)
    return t * grad_f + J.T @ (1.0 / (-g)), g, J


def _polish(problem, x, t, s, dx, grad, max_steps=5):
    """Full Newton steps judged by the gradient norm.

    Used once ``psi`` is too large to register the remaining decrease, so
    the Armijo test can no longer tell good steps from bad ones.
    """
    norm = float(np.max(np.abs(grad)))
    steps = 0
    for _ in range(max_steps):
        xn = x + dx
        if not _strictly_feasible(problem, xn):
            break
        gn, g, J = _barrier_gradient(problem, xn, t)
        norm_n = float(np.max(np.abs(gn)))
        if not norm_n < norm:
            break
        x, norm, grad = xn, norm_n, gn
        steps += 1
        inv = 1.0 / (-g)
        H = t * _objective_hessian(problem, x, s.fd_step)
        if g.size:
            H = H + (J.T * inv**2) @ J + _constraint_hessian(problem, x, inv, s.fd_step)
        dx = _newton_direction(H, grad)
        if -grad @ dx / 2 <= s.newton_tol:
            break
    return x, steps


def _newton_direction(H, grad):
    try:
        dx = np.linalg.solve(H, -grad)
        if np.all(np.isfinite(dx)) and grad @ dx < 0:
            return dx
    except np.linalg.LinAlgError:
        pass
    return -grad


def find_strictly_feasible(problem: SmoothProblem, margin: float = 1e-6,
                           settings: BarrierSettings = None) -> np.ndarray:
    """Phase-I search: minimize the largest constraint value.

    Returns a point with every ``g_i < -margin``, or raises
    :class:`ConvexSolveError` if the constraint set has no strict interior.
    """
    x0 = problem.x0
    g0, _ = problem.eval_constraints(x0)
    if g0.size == 0 or np.all(g0 < -margin):
        return x0.copy()
    n = x0.size
    s0 = float(np.max(g0)) + 1.0

    def obj(z):
        grad = np.zeros(n + 1)
        grad[-1] = 1.0
        return z[-1], grad

    def cons(z):
        g, J = problem.eval_constraints(z[:-1])
        floor = -1.0 - z[-1]
        Jz = np.hstack([J, -np.ones((g.size, 1))])
        row = np.zeros((1, n + 1))
        row[0, -1] = -1.0
        return np.append(g - z[-1], floor), np.vstack([Jz, row])

    def cons_hess(z, weights):
        H = np.zeros((n + 1, n + 1))
        if problem.constraint_hess is not None:
            H[:n, :n] = problem.constraint_hess(z[:-1], weights[:-1])
        else:
            H[:n, :n] = _fd_jacobian(
                lambda y: problem.eval_constraints(y)[1].T @ weights[:-1], z[:-1],
                (settings or BarrierSettings()).fd_step)
        return H

    aux = SmoothProblem(obj, np.append(x0, s0), cons,
                        objective_hess=lambda z: np.zeros((n + 1, n + 1)),
                        constraint_hess=cons_hess)
    def interior(z):
        return bool(np.all(problem.eval_constraints(z[:-1])[0] < -margin))

    cert = minimize(aux, settings or BarrierSettings(tol=1e-6), stop=interior)
    x = cert.x[:-1]
    g, _ = problem.eval_constraints(x)
    if not np.all(g < -margin):
        raise ConvexSolveError(
            f"no strictly feasible point found (max constraint {np.max(g):.3g})")
    return x


def check_gradient(fun, x, step=1e-6) -> float:
    """Largest relative gap between ``fun(x)[1]`` and central differences."""
    x = np.asarray(x, dtype=float)
    _, grad = fun(x)
    grad = np.asarray(grad, dtype=float)
    fd = np.empty_like(grad)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        fd[k] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * step)
    floor = 1e-8 * max(1.0, float(np.max(np.abs(fd))))
    return float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), floor)))


def sample_convexity(fun, sampler, trials, rng=None) -> float:
    """Largest midpoint-convexity gap ``f((x+y)/2) - (f(x)+f(y))/2`` observed.

    ``sampler(rng)`` must return points of a convex feasible set. A result
    that is not positive (up to rounding) means no violation was found.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    worst = -np.inf
    for _ in range(trials):
        x, y = sampler(rng), sampler(rng)
        gap = fun(0.5 * (x + y)) - 0.5 * (fun(x) + fun(y))
        worst = max(worst, float(gap))
    return worst
