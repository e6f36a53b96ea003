"""Stage 2: discrete polynomial degrees by best-first branch and bound.

With rates, Werner parameters and the radio/compute allocation fixed, the
objective depends on the degrees only through the weighted security level,
the server computation energy, and the largest per-client delay (``T`` is
tightened to that maximum). Ties between equal-valued assignments go to the
lexicographically smallest degree vector.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from . import costs, qkd


@dataclass(frozen=True)
class PartialAssignment:
    """Degrees chosen so far, as indices into the admissible set.

    ``chosen[k]`` is the index for client ``order[k]``; clients past
    ``len(chosen)`` in the branching order are open.
    """

    chosen: tuple
    bound: float = np.inf


class Stage2Tables:
    """Per-client, per-degree contributions to the restricted objective."""

    def __init__(self, scenario, state, lambda_set=None):
        if lambda_set is None:
            lambda_set = scenario.lambda_set
        lam_set = np.array(tuple(getattr(lambda_set, "values", lambda_set)), dtype=float)
        if lam_set.size == 0:
            raise ValueError("lambda set must be non-empty")
        self.lam_values = lam_set
        self.N = scenario.N
        self.M = lam_set.size
        wts = scenario.weights
        clients = scenario.clients
        server = scenario.server
        sigma = scenario.array("sigma")

        base = costs.cost_breakdown(clients, server, scenario.gains,
                                    np.full(self.N, lam_set[0]), state.p, state.b,
                                    state.f_c, state.f_s)
        work_per_cycle = scenario.array("cmp_tokens") / scenario.array("tokens_per_sample")
        cycles = np.atleast_1d(costs.server_cycles(lam_set))  # (M,)
        work = work_per_cycle[:, None] * cycles[None, :]  # (N, M)
        f_s = np.asarray(state.f_s, dtype=float)[:, None]
        self.delay = (base.t_enc + base.t_tr)[:, None] + work / f_s
        self.gain = (wts.alpha_msl * sigma[:, None] * np.atleast_1d(costs.msl_bits(lam_set))[None, :]
                     - wts.alpha_e * server.kappa_s * work * f_s**2)
        u_qkd = qkd.qkd_utility(scenario.topology, state.phi, state.w)
        self.constant = wts.alpha_qkd * u_qkd - wts.alpha_e * float(np.sum(base.e_enc + base.e_tr))
        self.alpha_t = wts.alpha_t
        self._rows = np.arange(self.N)

        # Bound ingredients for open clients.
        self.best_msl = np.max(wts.alpha_msl * sigma[:, None]
                               * np.atleast_1d(costs.msl_bits(lam_set))[None, :], axis=1)
        self.best_energy = np.max(-wts.alpha_e * server.kappa_s * work * f_s**2, axis=1)
        self.min_delay = np.min(self.delay, axis=1)

    def value(self, idx) -> float:
        idx = np.asarray(idx, dtype=int)
        gains = self.gain[self._rows, idx]
        delays = self.delay[self._rows, idx]
        return float(self.constant + np.sum(gains) - self.alpha_t * np.max(delays))

    def delays(self, idx) -> np.ndarray:
        return self.delay[self._rows, np.asarray(idx, dtype=int)]

    def lambdas(self, idx) -> np.ndarray:
        return self.lam_values[np.asarray(idx, dtype=int)]


def branching_order(scenario) -> list:
    """Clients by descending privacy weight, ties by index."""
    sigma = scenario.array("sigma")
    return sorted(range(scenario.N), key=lambda n: (-sigma[n], n))


def bound_partial(tables: Stage2Tables, order, partial: PartialAssignment) -> float:
    """Upper bound on the restricted objective over all completions."""
    k = len(partial.chosen)
    if k == tables.N:
        idx = np.empty(tables.N, dtype=int)
        idx[list(order)] = partial.chosen
        return tables.value(idx)
    assigned = list(order[:k])
    open_ = list(order[k:])
    total = tables.constant
    d_max = -np.inf
    for n, j in zip(assigned, partial.chosen):
        total += tables.gain[n, j]
        d_max = max(d_max, tables.delay[n, j])
    total += float(np.sum(tables.best_msl[open_]) + np.sum(tables.best_energy[open_]))
    d_max = max(d_max, float(np.max(tables.min_delay[open_])))
    return float(total - tables.alpha_t * d_max)


@dataclass(frozen=True)
class Stage2Result:
    lam: np.ndarray
    T: float
    value: float
    nodes_created: int
    nodes_expanded: int
    evaluations: int


def _lex_better(value, lam, best_value, best_lam):
    if value > best_value:
        return True
    return value == best_value and best_lam is not None and tuple(lam) < tuple(best_lam)


def solve_stage2(scenario, state, lambda_set=None) -> Stage2Result:
    """Best-first branch and bound; exact over the full degree grid."""
    tables = Stage2Tables(scenario, state, lambda_set)
    order = branching_order(scenario)
    N, M = tables.N, tables.M

    best_value, best_idx = -np.inf, None
    counter = itertools.count()
    root = PartialAssignment((), np.inf)
    queue = [(-root.bound, next(counter), root)]
    created, expanded, evaluations = 1, 0, 0

    def slack():
        return 1e-12 * max(1.0, abs(best_value)) if np.isfinite(best_value) else 0.0

    while queue:
        neg_bound, _, node = heapq.heappop(queue)
        if -neg_bound < best_value - slack():
            continue
        if len(node.chosen) == N:
            idx = np.empty(N, dtype=int)
            idx[order] = node.chosen
            val = tables.value(idx)
            evaluations += 1
            if best_idx is None or _lex_better(val, idx, best_value, best_idx):
                best_value, best_idx = val, idx
            continue
        expanded += 1
        for j in range(M):
            child = PartialAssignment(node.chosen + (j,))
            b = bound_partial(tables, order, child)
            created += 1
            if b >= best_value - slack():
                heapq.heappush(queue, (-b, next(counter), PartialAssignment(child.chosen, b)))

    lam = tables.lambdas(best_idx)
    T = float(np.max(tables.delays(best_idx)))
    return Stage2Result(lam, T, best_value, created, expanded, evaluations)


def exhaustive_stage2(scenario, state, lambda_set=None, cap=10**6) -> Stage2Result:
    """Full enumeration; the test oracle for :func:`solve_stage2`."""
    tables = Stage2Tables(scenario, state, lambda_set)
    N, M = tables.N, tables.M
    if M**N > cap:
        raise ValueError(f"{M}^{N} assignments exceed the enumeration cap {cap}")
    best_value, best_idx = -np.inf, None
    count = 0
    # product() walks index vectors lexicographically, and the set is
    # ascending, so the first maximizer met is the lexicographically smallest.
    for idx in itertools.product(range(M), repeat=N):
        val = tables.value(idx)
        count += 1
        if val > best_value:
            best_value, best_idx = val, np.array(idx)
    lam = tables.lambdas(best_idx)
    T = float(np.max(tables.delays(best_idx)))
    return Stage2Result(lam, T, best_value, count, 0, count)
