"""Stage 1: route rates and Werner parameters.

With every non-QKD variable fixed, the Werner parameters take their
closed-form optimum ``w = 1 - A phi / beta`` and the remaining rate problem is
convex in the log-rates ``varphi = ln phi``:

    minimize  -sum_n ln F_skf(varpi_n) - ln alpha_qkd - sum_n varphi_n
    s.t.      exp(varphi_n) > phi_min_n
              A exp(varphi) / beta < 1            (used links)
              varpi_n > SKF_THRESHOLD
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qkd
from .convex import BarrierSettings, SmoothProblem, SolveCertificate, minimize
from .qkd import SKF_THRESHOLD, QKDDomainError


class Stage1InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class Stage1Problem:
    topology: qkd.Topology
    phi_min: np.ndarray
    alpha_qkd: float = 1.0
    threshold: float = SKF_THRESHOLD

    def __post_init__(self):
        phi_min = np.asarray(self.phi_min, dtype=float)
        if phi_min.shape != (self.topology.N,) or np.any(phi_min <= 0):
            raise ValueError("phi_min must hold one positive value per route")
        if not self.alpha_qkd > 0:
            raise ValueError("the log transform needs alpha_qkd > 0")
        object.__setattr__(self, "phi_min", phi_min)

    @classmethod
    def from_scenario(cls, scenario) -> "Stage1Problem":
        return cls(scenario.topology, scenario.array("phi_min"), scenario.weights.alpha_qkd)

    @property
    def used_links(self) -> np.ndarray:
        return np.flatnonzero(self.topology.A.sum(axis=1) > 0)

    # -- shared pieces -----------------------------------------------------

    def _parts(self, varphi):
        A = self.topology.A
        beta = self.topology.beta
        phi = np.exp(varphi)
        V = A * phi[None, :] / beta[:, None]  # d(load_l/beta_l)/d varphi_k
        u = V.sum(axis=1)
        w = 1.0 - u
        return phi, V, u, w

    def constraints(self, varphi):
        """Values ``g <= 0`` and Jacobian for the three constraint families."""
        varphi = np.asarray(varphi, dtype=float)
        A = self.topology.A
        N = self.topology.N
        phi, V, u, w = self._parts(varphi)
        used = self.used_links
        with np.errstate(divide="ignore", invalid="ignore"):
            logw = np.log(w)
            g_rate = np.log(self.phi_min) - varphi
            g_link = u[used] - 1.0
            g_route = np.log(self.threshold) - A.T @ logw
            J_route = ((A / w[:, None]).T @ V)
        J = np.vstack([-np.eye(N), V[used], J_route])
        return np.concatenate([g_rate, g_link, g_route]), J

    def constraint_hess(self, varphi, weights):
        N = self.topology.N
        A = self.topology.A
        used = self.used_links
        _, V, _, w = self._parts(np.asarray(varphi, dtype=float))
        om_link = weights[N:N + used.size]
        om_route = weights[N + used.size:]
        H = np.diag(om_link @ V[used])
        c = A @ om_route
        for l in np.flatnonzero(c):
            v = V[l]
            H += c[l] * (np.diag(v) / w[l] + np.outer(v, v) / w[l] ** 2)
        return H

    def is_interior(self, varphi) -> bool:
        g, _ = self.constraints(varphi)
        if not (np.all(np.isfinite(g)) and np.all(g < 0)):
            return False
        return bool(self.interior_mask(np.exp(np.asarray(varphi, dtype=float))[None, :])[0])

    def value_and_gradient(self, varphi):
        """Transformed Stage-1 objective and its gradient in log-rates."""
        varphi = np.asarray(varphi, dtype=float)
        if varphi.shape != (self.topology.N,):
            raise ValueError(f"expected {self.topology.N} log-rates")
        A = self.topology.A
        phi, V, u, w = self._parts(varphi)
        if np.any(w <= 0):
            l = int(np.flatnonzero(w <= 0)[0])
            raise QKDDomainError(f"link {self.topology.links[l].id} over capacity")
        varpi = np.exp(A.T @ np.log(w))
        if np.any(varpi <= self.threshold):
            n = int(np.flatnonzero(varpi <= self.threshold)[0])
            raise QKDDomainError(
                f"route {self.topology.routes[n].id}: end-to-end Werner "
                f"{varpi[n]:.6f} <= {self.threshold}")
        F = qkd.skf_unclamped(varpi)
        if np.any(F <= 0):
            raise QKDDomainError("secret key fraction not positive")
        value = -np.sum(np.log(F)) - np.log(self.alpha_qkd) - np.sum(varphi)
        # d varpi_n / d varphi = -varpi_n * sum_l a_ln V_l / w_l
        dvarpi = -varpi[:, None] * ((A / w[:, None]).T @ V)
        ratio = qkd.skf_derivative(varpi) / F
        grad = -(ratio @ dvarpi) - 1.0
        return float(value), grad

    def hessian(self, varphi):
        """Analytic Hessian of :meth:`value_and_gradient`.

        Written through ``q_n = ln varpi_n``: each term is ``-ln G(q_n)`` with
        ``G(q) = F_skf(exp(q))``.
        """
        A = self.topology.A
        _, V, _, w = self._parts(np.asarray(varphi, dtype=float))
        varpi = np.exp(A.T @ np.log(w))
        F = qkd.skf_unclamped(varpi)
        d1 = qkd.skf_derivative(varpi)
        d2 = 2.0 / (np.log(2.0) * (1.0 - varpi**2))
        G1 = d1 * varpi
        G2 = d2 * varpi**2 + G1
        h1 = -G1 / F
        h2 = -(G2 * F - G1**2) / F**2
        Vw = V / w[:, None]
        grad_q = -(A.T @ Vw)  # rows: grad of q_n
        H = (grad_q.T * h2) @ grad_q
        c = A @ h1
        for l in np.flatnonzero(c):
            v = V[l]
            H -= c[l] * (np.diag(v) / w[l] + np.outer(v, v) / w[l] ** 2)
        return H

    def value(self, varphi) -> float:
        return self.value_and_gradient(varphi)[0]

    # -- batched helpers for the sampling baselines -------------------------

    def _batch(self, phis):
        phis = np.atleast_2d(np.asarray(phis, dtype=float))
        A = self.topology.A
        w = 1.0 - (phis @ A.T) / self.topology.beta[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            varpi = np.exp(np.log(w) @ A)
        return phis, w, varpi

    def interior_mask(self, phis) -> np.ndarray:
        """Row-wise strict feasibility of rate vectors (not log-rates)."""
        phis, w, varpi = self._batch(phis)
        used = self.used_links
        ok = (np.all(phis > self.phi_min, axis=1) & np.all(w[:, used] > 0, axis=1)
              & np.all(varpi > self.threshold, axis=1))
        # The stored threshold sits ~3e-7 below the true root of F_skf.
        F = qkd.skf_unclamped(np.where(ok[:, None], varpi, 1.0))
        return ok & np.all(F > 0, axis=1)

    def values(self, phis) -> np.ndarray:
        """Transformed objective for each row of rates; ``inf`` off the interior."""
        phis, _, varpi = self._batch(phis)
        ok = self.interior_mask(phis)
        out = np.full(phis.shape[0], np.inf)
        F = qkd.skf_unclamped(np.where(ok[:, None], varpi, 1.0))
        out[ok] = (-np.sum(np.log(F[ok]), axis=1) - np.log(self.alpha_qkd)
                   - np.sum(np.log(phis[ok]), axis=1))
        return out

    def rate_box(self, iters=60) -> tuple:
        """Tightest box ``[phi_min, hi]`` containing the feasible rates.

        Feasibility is monotone (raising a rate only tightens constraints), so
        ``hi_n`` is the largest feasible rate on route ``n`` with the others
        at their floors.
        """
        lo = self.phi_min * (1 + 1e-9)
        hi = np.empty_like(lo)
        cap = float(np.max(self.topology.beta))
        for n in range(lo.size):
            a, b = lo[n], cap
            for _ in range(iters):
                m = 0.5 * (a + b)
                x = lo.copy()
                x[n] = m
                a, b = (m, b) if self.interior_mask(x)[0] else (a, m)
            hi[n] = a
        return self.phi_min.copy(), hi


def p3_value_and_gradient(problem: Stage1Problem, varphi):
    return problem.value_and_gradient(varphi)


def initial_feasible_point(problem: Stage1Problem, factor=1.05, shrinks=50):
    """Log-rates just above the minimum rates.

    Raising any rate only tightens the link and threshold constraints, so if
    rates arbitrarily close to ``phi_min`` are not interior, none are.
    """
    excess = factor - 1.0
    for _ in range(shrinks + 1):
        varphi = np.log(problem.phi_min * (1.0 + excess))
        if problem.is_interior(varphi):
            return varphi
        excess *= 0.5
    raise Stage1InfeasibleError(
        "no strictly feasible rate allocation: minimum rates overload a link "
        "or push a route below the key-fraction threshold")


@dataclass(frozen=True)
class Stage1Result:
    phi: np.ndarray
    w: np.ndarray
    value: float
    certificate: SolveCertificate


def solve_stage1(scenario, settings=None, warm_start=None) -> Stage1Result:
    """Optimal ``(phi, w)`` for the scenario's topology and rate floors."""
    tol = settings.inner_tol if settings is not None else 1e-9
    problem = Stage1Problem.from_scenario(scenario)
    x0 = None
    if warm_start is not None:
        cand = np.log(np.asarray(warm_start, dtype=float))
        if problem.is_interior(cand):
            x0 = cand
    if x0 is None:
        x0 = initial_feasible_point(problem)
    sp = SmoothProblem(problem.value_and_gradient, x0, problem.constraints,
                       objective_hess=problem.hessian,
                       constraint_hess=problem.constraint_hess)
    cert = minimize(sp, BarrierSettings(tol=tol))
    phi = np.exp(cert.x)
    w = qkd.optimal_werner_from_rates(scenario.topology, phi)
    return Stage1Result(phi, w, cert.value, cert)
