"""Stage 3: transmit power, bandwidth, client and server CPU, and ``T``.

The transmission-energy ratio ``p d / r`` is the only non-convex piece. Its
quadratic transform ``(p d)^2 z + 1 / (4 r^2 z)`` majorizes it for every
``z > 0`` and touches it at ``z = 1 / (2 p d r)``, so alternating the
closed-form ``z`` update with a convex solve in the other variables never
decreases the true objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import costs
from .convex import BarrierSettings, SmoothProblem, minimize

LN2 = np.log(2.0)
F_S_FLOOR = 1e3
WARM_BARRIER_WEIGHT = 1e4
COLD_T_SLACK = 1.0


class Stage3Error(RuntimeError):
    """Alternation cap reached; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def update_z(p, b, gains, noise_psd, d_tr):
    """Closed-form auxiliary variable ``1 / (2 p d r)``."""
    r = np.asarray(costs.uplink_rate(b, p, gains, noise_psd))
    if np.any(r <= 0):
        raise costs.CostDomainError("rate must be positive")
    return 1.0 / (2.0 * np.asarray(p) * np.asarray(d_tr) * r)


def surrogate_tr_energy(b, p, z, gains, noise_psd, d_tr):
    """Quadratic-transform surrogate for the transmission energy ``p d / r``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise costs.CostDomainError("z must be positive")
    r = np.asarray(costs.uplink_rate(b, p, gains, noise_psd))
    pd = np.asarray(p) * np.asarray(d_tr)
    return pd**2 * z + 1.0 / (4.0 * r**2 * z)


def _rate_derivs(p, b, s):
    """Rate, gradient and Hessian entries in ``(p, b)``; ``s = g / N0``."""
    x = p * s / b
    onex = 1.0 + x
    r = b * np.log1p(x) / LN2
    r_p = s / (onex * LN2)
    r_b = (np.log1p(x) - x / onex) / LN2
    k = 1.0 / (b * onex**2 * LN2)
    r_pp = -s**2 * k
    r_pb = s * x * k
    r_bb = -x**2 * k
    return r, r_p, r_b, r_pp, r_pb, r_bb


@dataclass
class Stage3Block:
    """Convex subproblem with the auxiliary ``z`` held fixed.

    Variables are scaled: ``x = scale * y`` with ``y`` of order one.
    Layout ``[p (N), b (N), f_c (N), f_s (N), T]``.
    """

    scenario: object
    lam: np.ndarray
    z: np.ndarray
    T_scale: float

    def __post_init__(self):
        sc = self.scenario
        N = sc.N
        self.N = N
        self.s = np.asarray(sc.gains) / sc.server.noise_psd
        self.d_tr = sc.array("tr_bits")
        self.f_se = sc.array("se_cycles")
        self.kappa_c = sc.array("kappa_c")
        self.p_max = sc.array("p_max")
        self.f_max = sc.array("f_max")
        self.work = (np.atleast_1d(costs.server_cycles(np.asarray(self.lam, dtype=float)))
                     * sc.array("cmp_tokens") / sc.array("tokens_per_sample"))
        self.kappa_s = sc.server.kappa_s
        self.B = sc.server.b_total
        self.F = sc.server.f_total
        self.alpha_e = sc.weights.alpha_e
        self.alpha_t = sc.weights.alpha_t
        self.scale = np.concatenate([
            self.p_max, np.full(N, self.B / N), self.f_max,
            np.full(N, self.F / N), [self.T_scale]])
        # Row scales keep every constraint value of order one.
        self.row_scale = np.concatenate([
            self.p_max, self.p_max, np.full(N, self.B / N), [self.B], self.f_max,
            self.f_max, [self.F], np.full(N, self.F / N), np.full(N, self.T_scale)])
        self._J_lin = self._linear_jacobian()

    def unpack(self, y):
        x = y * self.scale
        N = self.N
        return x[:N], x[N:2 * N], x[2 * N:3 * N], x[3 * N:4 * N], x[4 * N]

    def pack(self, p, b, f_c, f_s, T):
        return np.concatenate([p, b, f_c, f_s, [T]]) / self.scale

    # objective ------------------------------------------------------------

    def objective(self, y):
        p, b, f_c, f_s, T = self.unpack(y)
        N = self.N
        r, r_p, r_b, *_ = _rate_derivs(p, b, self.s)
        z = self.z
        e_enc = self.kappa_c * self.f_se * f_c**2
        e_cmp = self.kappa_s * self.work * f_s**2
        sur = (p * self.d_tr) ** 2 * z + 1.0 / (4.0 * r**2 * z)
        val = self.alpha_e * np.sum(e_enc + e_cmp + sur) + self.alpha_t * T
        g = np.empty(4 * N + 1)
        inv_r3 = 1.0 / (2.0 * z * r**3)
        g[:N] = self.alpha_e * (2 * p * self.d_tr**2 * z - inv_r3 * r_p)
        g[N:2 * N] = self.alpha_e * (-inv_r3 * r_b)
        g[2 * N:3 * N] = self.alpha_e * 2 * self.kappa_c * self.f_se * f_c
        g[3 * N:4 * N] = self.alpha_e * 2 * self.kappa_s * self.work * f_s
        g[4 * N] = self.alpha_t
        return float(val), g * self.scale

    def objective_hess(self, y):
        p, b, f_c, f_s, T = self.unpack(y)
        N = self.N
        r, r_p, r_b, r_pp, r_pb, r_bb = _rate_derivs(p, b, self.s)
        z = self.z
        c = 1.0 / (4.0 * z)
        # hess of r^-2 = 6 r^-4 grad grad^T - 2 r^-3 hess r
        a4 = 6.0 / r**4
        a3 = 2.0 / r**3
        H = np.zeros((4 * N + 1, 4 * N + 1))
        i = np.arange(N)
        H[i, i] = self.alpha_e * (2 * self.d_tr**2 * z + c * (a4 * r_p**2 - a3 * r_pp))
        H[i, N + i] = H[N + i, i] = self.alpha_e * c * (a4 * r_p * r_b - a3 * r_pb)
        H[N + i, N + i] = self.alpha_e * c * (a4 * r_b**2 - a3 * r_bb)
        H[2 * N + i, 2 * N + i] = self.alpha_e * 2 * self.kappa_c * self.f_se
        H[3 * N + i, 3 * N + i] = self.alpha_e * 2 * self.kappa_s * self.work
        return H * np.outer(self.scale, self.scale)

    # constraints ----------------------------------------------------------

    def _linear_jacobian(self):
        N = self.N
        i = np.arange(N)
        J = np.zeros((7 * N + 2, 4 * N + 1))
        row = 0
        J[row + i, i] = 1.0; row += N
        J[row + i, i] = -1.0; row += N
        J[row + i, N + i] = -1.0; row += N
        J[row, N:2 * N] = 1.0; row += 1
        J[row + i, 2 * N + i] = 1.0; row += N
        J[row + i, 2 * N + i] = -1.0; row += N
        J[row, 3 * N:4 * N] = 1.0; row += 1
        J[row + i, 3 * N + i] = -1.0; row += N
        J[row + i, 4 * N] = -1.0
        return J * self.scale[None, :] / self.row_scale[:, None]

    def constraints(self, y):
        p, b, f_c, f_s, T = self.unpack(y)
        N = self.N
        i = np.arange(N)
        with np.errstate(all="ignore"):
            r, r_p, r_b, *_ = _rate_derivs(p, b, self.s)
            delay = self.f_se / f_c + self.d_tr / r + self.work / f_s
        g = np.concatenate([
            p - self.p_max, -p, -b, [np.sum(b) - self.B],
            f_c - self.f_max, -f_c, [np.sum(f_s) - self.F], F_S_FLOOR - f_s,
            delay - T,
        ])
        g = g / self.row_scale
        g[~np.isfinite(g)] = np.inf
        J = self._J_lin.copy()
        rows = 6 * N + 2 + i
        with np.errstate(all="ignore"):
            dr = -self.d_tr / r**2
            k = 1.0 / self.T_scale
            J[rows, i] = dr * r_p * self.scale[:N] * k
            J[rows, N + i] = dr * r_b * self.scale[N:2 * N] * k
            J[rows, 2 * N + i] = -self.f_se / f_c**2 * self.scale[2 * N:3 * N] * k
            J[rows, 3 * N + i] = -self.work / f_s**2 * self.scale[3 * N:4 * N] * k
        return g, J

    def constraint_hess(self, y, weights):
        p, b, f_c, f_s, T = self.unpack(y)
        N = self.N
        om = weights[6 * N + 2:] / self.T_scale
        r, r_p, r_b, r_pp, r_pb, r_bb = _rate_derivs(p, b, self.s)
        d = self.d_tr
        H = np.zeros((4 * N + 1, 4 * N + 1))
        i = np.arange(N)
        q2 = 2 * d / r**3
        q1 = d / r**2
        H[i, i] = om * (q2 * r_p**2 - q1 * r_pp)
        H[i, N + i] = H[N + i, i] = om * (q2 * r_p * r_b - q1 * r_pb)
        H[N + i, N + i] = om * (q2 * r_b**2 - q1 * r_bb)
        H[2 * N + i, 2 * N + i] = om * 2 * self.f_se / f_c**3
        H[3 * N + i, 3 * N + i] = om * 2 * self.work / f_s**3
        return H * np.outer(self.scale, self.scale)

    # true (non-surrogate) objective --------------------------------------

    def delays(self, p, b, f_c, f_s):
        r = costs.uplink_rate(b, p, self.scenario.gains, self.scenario.server.noise_psd)
        return self.f_se / f_c + self.d_tr / r + self.work / f_s

    def true_cost(self, p, b, f_c, f_s, T):
        """``alpha_e * E_total + alpha_t * T`` with the exact transmission energy."""
        r = costs.uplink_rate(b, p, self.scenario.gains, self.scenario.server.noise_psd)
        e = (self.kappa_c * self.f_se * f_c**2 + p * self.d_tr / r
             + self.kappa_s * self.work * f_s**2)
        return float(self.alpha_e * np.sum(e) + self.alpha_t * T)


def default_start(scenario):
    """Equal splits at half of every budget; ``p = p_max / 2``."""
    N = scenario.N
    return (scenario.array("p_max") / 2, np.full(N, scenario.server.b_total / (2 * N)),
            scenario.array("f_max") / 2, np.full(N, scenario.server.f_total / (2 * N)))


def _interior(block: Stage3Block, p, b, f_c, f_s, theta=1e-6, t_slack=1e-6):
    """Pull a (possibly boundary) allocation strictly inside the budgets.

    ``T`` starts at ``(1 + t_slack)`` times the largest delay. A cold start
    needs real slack: with ``T`` pinned to the delays, damped Newton
    steps on badly scaled budgets shrink to almost nothing.
    """
    cp, cb, cfc, cfs = default_start(block.scenario)
    p = (1 - theta) * p + theta * cp
    b = (1 - theta) * b + theta * cb
    f_c = (1 - theta) * f_c + theta * cfc
    f_s = (1 - theta) * f_s + theta * cfs
    f_s = np.maximum(f_s, 2 * F_S_FLOOR)
    T = float(np.max(block.delays(p, b, f_c, f_s))) * (1 + t_slack)
    return p, b, f_c, f_s, T


@dataclass
class Stage3Result:
    p: np.ndarray
    b: np.ndarray
    f_c: np.ndarray
    f_s: np.ndarray
    T: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    newton_iterations: int = 0


def solve_stage3(scenario, lam, warm_start=None, settings=None) -> Stage3Result:
    """Alternate the ``z`` update and the convex block solve until stable.

    Stops when the block objective changes by less than ``epsilon`` and
    ``z`` moves by less than 1e-3 relative. The trace records, per
    alternation, the surrogate objective and the true cost
    ``alpha_e E_total + alpha_t T`` (both as costs, lower is better).
    """
    eps = settings.epsilon if settings is not None else 1e-4
    max_iters = settings.stage3_max_iters if settings is not None else 100
    inner_tol = settings.inner_tol if settings is not None else 1e-9
    lam = np.asarray(lam, dtype=float)
    p, b, f_c, f_s = warm_start if warm_start is not None else default_start(scenario)
    p, b, f_c, f_s = (np.asarray(v, dtype=float) for v in (p, b, f_c, f_s))
    gains = scenario.gains
    N0 = scenario.server.noise_psd
    d_tr = scenario.array("tr_bits")

    T0 = None
    trace = []
    prev_obj = None
    newton = 0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        z = update_z(p, b, gains, N0, d_tr)
        if T0 is None:
            probe = Stage3Block(scenario, lam, z, 1.0)
            T0 = max(1.0, float(np.max(probe.delays(p, b, f_c, f_s))))
        block = Stage3Block(scenario, lam, z, T0)
        start = _interior(block, p, b, f_c, f_s, t_slack=COLD_T_SLACK if it == 1 else 1e-6)
        sp = SmoothProblem(block.objective, block.pack(*start), block.constraints,
                           objective_hess=block.objective_hess,
                           constraint_hess=block.constraint_hess)
        # Later alternations start next to the previous optimum, so skip the
        # low barrier weights that would only pull them back to the center.
        t0 = 1.0 if it == 1 else WARM_BARRIER_WEIGHT
        cert = minimize(sp, BarrierSettings(tol=inner_tol, t0=t0))
        newton += cert.newton_iterations
        p, b, f_c, f_s, _ = block.unpack(cert.x)
        T = float(np.max(block.delays(p, b, f_c, f_s)))
        sur_obj = cert.value
        true_cost = block.true_cost(p, b, f_c, f_s, T)
        trace.append({"iteration": it, "surrogate_cost": sur_obj, "true_cost": true_cost,
                      "newton": cert.newton_iterations, "inner_converged": cert.converged})
        z_new = update_z(p, b, gains, N0, d_tr)
        z_change = float(np.max(np.abs(z_new - z) / z))
        if prev_obj is not None and abs(sur_obj - prev_obj) < eps and z_change < 1e-3:
            converged = True
            break
        prev_obj = sur_obj
    result = Stage3Result(p, b, f_c, f_s, T, it, converged, trace, newton)
    if not converged:
        last = trace[-1]["surrogate_cost"] - trace[-2]["surrogate_cost"] if len(trace) > 1 else np.nan
        raise Stage3Error(
            f"stage 3 did not converge in {max_iters} alternations "
            f"(last objective change {last:.3g}, z change {z_change:.3g})", result)
    return result
