"""Joint utility/cost objective, its constraints, and feasibility reporting."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import costs, qkd


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha_qkd: float = 1.0
    alpha_msl: float = 1e-2
    alpha_t: float = 1e-4
    alpha_e: float = 1e-4

    def __post_init__(self):
        vals = self.as_tuple()
        if any(v < 0 for v in vals):
            raise ValueError("objective weights must be non-negative")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one objective weight must be positive")

    def as_tuple(self):
        return (self.alpha_qkd, self.alpha_msl, self.alpha_t, self.alpha_e)


@dataclass(frozen=True)
class AllocationState:
    """Full decision vector of the joint problem plus the delay bound ``T``."""

    phi: np.ndarray
    w: np.ndarray
    lam: np.ndarray
    p: np.ndarray
    b: np.ndarray
    f_c: np.ndarray
    f_s: np.ndarray
    T: float

    def __post_init__(self):
        for name in ("phi", "w", "lam", "p", "b", "f_c", "f_s"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "T", float(self.T))

    def replace(self, **changes) -> "AllocationState":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ("phi", "w", "p", "b", "f_c", "f_s")}
        out["lam"] = [int(v) for v in self.lam]
        out["T"] = self.T
        return out


def _check_dims(scenario, state):
    N, L = scenario.N, scenario.topology.L
    for name in ("phi", "lam", "p", "b", "f_c", "f_s"):
        if getattr(state, name).shape != (N,):
            raise ValueError(f"state.{name} must have shape ({N},)")
    if state.w.shape != (L,):
        raise ValueError(f"state.w must have shape ({L},)")


def breakdown(scenario, state) -> costs.CostBreakdown:
    return costs.cost_breakdown(
        scenario.clients, scenario.server, scenario.gains,
        state.lam, state.p, state.b, state.f_c, state.f_s,
    )


@dataclass(frozen=True)
class ObjectiveTerms:
    u_qkd: float
    u_msl: float
    T: float
    e_total: float
    value: float


def objective_terms(scenario, state) -> ObjectiveTerms:
    _check_dims(scenario, state)
    wts = scenario.weights
    u_qkd = qkd.qkd_utility(scenario.topology, state.phi, state.w)
    u_msl = costs.security_utility(scenario.clients, state.lam)
    e_total = breakdown(scenario, state).e_total
    value = (wts.alpha_qkd * u_qkd + wts.alpha_msl * u_msl
             - wts.alpha_t * state.T - wts.alpha_e * e_total)
    return ObjectiveTerms(u_qkd, u_msl, state.T, e_total, value)


def p1_objective(scenario, state: AllocationState) -> float:
    """Weighted objective evaluated with the state's own ``T`` and ``w``."""
    return objective_terms(scenario, state).value


def tighten_T(scenario, state: AllocationState) -> AllocationState:
    """Set ``T`` to the largest per-client delay sum."""
    return state.replace(T=breakdown(scenario, state).t_total)


@dataclass(frozen=True)
class ConstraintCheck:
    passed: bool
    violation: float


@dataclass(frozen=True)
class FeasibilityReport:
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self):
        return [k for k, c in self.checks.items() if not c.passed]

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": {k: {"passed": c.passed, "violation": c.violation}
                       for k, c in self.checks.items()},
        }


def _le(lhs, rhs, tol) -> ConstraintCheck:
    """Check ``lhs <= rhs`` elementwise; slack scales with a nonzero rhs."""
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape)
    excess = lhs - rhs
    allowed = np.where(rhs != 0, tol * np.abs(rhs), tol)
    worst = float(max(0.0, np.max(excess)))
    return ConstraintCheck(bool(np.all(excess <= allowed)), worst)


def check_feasibility(scenario, state: AllocationState, tol: float = 1e-6) -> FeasibilityReport:
    """Evaluate every constraint of the joint problem; never raises on violations."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    _check_dims(scenario, state)
    clients = scenario.clients
    topo = scenario.topology
    phi_min = np.array([c.phi_min for c in clients])
    p_max = np.array([c.p_max for c in clients])
    f_max = np.array([c.f_max for c in clients])
    checks = {}

    checks["phi_min"] = _le(-state.phi, -phi_min, tol)
    w = state.w
    w_viol = float(max(0.0, np.max(w - 1.0), np.max(-w)))
    checks["werner_bounds"] = ConstraintCheck(
        bool(np.all(w > 0) and np.all(w - 1.0 <= tol)), w_viol)
    checks["link_capacity"] = _le(topo.A @ state.phi, topo.beta * (1.0 - w), tol)
    allowed = np.array(scenario.lambda_set.values, dtype=float)
    dist = np.min(np.abs(state.lam[:, None] - allowed[None, :]), axis=1)
    checks["lambda_set"] = ConstraintCheck(bool(np.all(dist == 0)), float(np.max(dist)))

    positive = np.concatenate([state.p, state.b, state.f_c, state.f_s])
    checks["positivity"] = ConstraintCheck(bool(np.all(positive > 0)),
                                           float(max(0.0, np.max(-positive))))
    checks["p_max"] = _le(state.p, p_max, tol)
    checks["b_total"] = _le(np.sum(state.b), scenario.server.b_total, tol)
    checks["f_max"] = _le(state.f_c, f_max, tol)
    checks["f_total"] = _le(np.sum(state.f_s), scenario.server.f_total, tol)

    if checks["positivity"].passed and checks["lambda_set"].passed:
        delays = breakdown(scenario, state).delays
        checks["delay"] = _le(delays, state.T, tol)
    else:
        checks["delay"] = ConstraintCheck(False, float("inf"))
    return FeasibilityReport(checks)


def stage2_objective(scenario, state: AllocationState, lam) -> float:
    """Objective restricted to the polynomial degrees, with ``T`` tightened.

    Every term except the security utility, the maximum delay and the server
    computation energy is constant in ``lam``.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (scenario.N,):
        raise ValueError(f"expected {scenario.N} degrees")
    if not all(v in scenario.lambda_set for v in lam):
        raise ValueError(f"degrees {lam} not in admissible set {scenario.lambda_set.values}")
    return p1_objective(scenario, tighten_T(scenario, state.replace(lam=lam)))
