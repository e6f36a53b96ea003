import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quhe import costs
from quhe.objective import (AllocationState, ObjectiveWeights, breakdown, check_feasibility,
                            objective_terms, p1_objective, stage2_objective, tighten_T)
from quhe.orchestrator import initial_state

import oracles
from builders import toy_doc, toy_scenario


def reweighted(scenario, **weights):
    base = dict(zip(("alpha_qkd", "alpha_msl", "alpha_t", "alpha_e"), [0.0] * 4))
    base.update(weights)
    return scenario.replace(weights=ObjectiveWeights(**base))


class TestWeights:
    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            ObjectiveWeights(0, 0, 0, 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ObjectiveWeights(1, -1, 0, 0)


class TestP1Objective:
    def test_delay_only(self, surfnet):
        sc = reweighted(surfnet, alpha_t=1.0)
        state = initial_state(surfnet).replace(T=10.0)
        assert p1_objective(sc, state) == -10.0

    def test_uses_state_T_not_recomputed(self, surfnet):
        state = initial_state(surfnet)
        loose = state.replace(T=state.T + 100.0)
        gap = p1_objective(surfnet, state) - p1_objective(surfnet, loose)
        assert gap == pytest.approx(100.0 * surfnet.weights.alpha_t, rel=1e-9)

    def test_matches_retyped_oracle(self, surfnet):
        from quhe.scenario import scenario_to_dict
        doc = scenario_to_dict(surfnet)
        s = initial_state(surfnet)
        want = oracles.p1_value(doc, surfnet.gains, surfnet.server.noise_psd, s.phi, s.lam,
                                s.p, s.b, s.f_c, s.f_s)
        assert p1_objective(surfnet, s) == pytest.approx(want, rel=1e-12)

    def test_dimension_mismatch(self, surfnet):
        state = initial_state(surfnet)
        with pytest.raises(ValueError):
            p1_objective(surfnet, state.replace(p=state.p[:3]))

    def test_additive_separable(self, surfnet):
        state = initial_state(surfnet)
        names = ("alpha_qkd", "alpha_msl", "alpha_t", "alpha_e")
        full = p1_objective(surfnet, state)
        parts = []
        for k in names:
            w = getattr(surfnet.weights, k)
            parts.append(p1_objective(reweighted(surfnet, **{k: w}), state))
        assert sum(parts) == pytest.approx(full, rel=1e-12)
        for k, part in zip(names, parts):
            rest = {n: getattr(surfnet.weights, n) for n in names if n != k}
            without = p1_objective(reweighted(surfnet, **rest), state)
            assert full - without == pytest.approx(part, rel=1e-9, abs=1e-15)

    def test_maximized_over_T_at_max_delay(self, surfnet):
        state = tighten_T(surfnet, initial_state(surfnet))
        best = p1_objective(surfnet, state)
        for dT in (1e-3, 1.0, 100.0):
            assert p1_objective(surfnet, state.replace(T=state.T + dT)) < best
        below = state.replace(T=state.T * (1 - 1e-6))
        assert not check_feasibility(surfnet, below, tol=0).checks["delay"].passed

    def test_reference_band_unreachable(self, surfnet, surfnet_stage1):
        """Analytic ceiling: best key utility plus the largest security term.

        Delay and energy only subtract, so no state of this model scores
        above this ceiling; the published [10, 15] band lies above it.
        """
        w = surfnet.weights
        ceiling = (w.alpha_qkd * np.exp(-surfnet_stage1.value)
                   + w.alpha_msl * costs.security_utility(surfnet.clients,
                                                          [costs.LAMBDA_MAX] * surfnet.N))
        assert ceiling == pytest.approx(2.6465, abs=1e-3)
        assert ceiling < 10.0


class TestFeasibility:
    def test_solver_state_passes(self, surfnet, surfnet_run):
        report = check_feasibility(surfnet, surfnet_run.state, tol=1e-6)
        assert report.ok, report.failures()

    def test_double_power_fails(self, surfnet):
        state = initial_state(surfnet)
        pmax = surfnet.array("p_max")
        report = check_feasibility(surfnet, state.replace(p=2 * pmax))
        assert not report.checks["p_max"].passed
        assert report.checks["p_max"].violation == pytest.approx(pmax[0])
        assert not report.ok

    def test_rate_floor_inclusive(self, surfnet):
        state = initial_state(surfnet)
        at_floor = state.replace(phi=surfnet.array("phi_min"))
        assert check_feasibility(surfnet, at_floor, tol=0).checks["phi_min"].passed

    def test_overall_is_conjunction(self, surfnet):
        state = initial_state(surfnet)
        bad = state.replace(b=state.b * 4, lam=np.full(6, 12345.0))
        report = check_feasibility(surfnet, bad)
        assert report.ok == all(c.passed for c in report.checks.values())
        assert set(report.failures()) >= {"b_total", "lambda_set"}

    def test_never_raises_on_violation(self, surfnet):
        state = initial_state(surfnet)
        bad = state.replace(p=-state.p, w=np.full(18, 2.0))
        report = check_feasibility(surfnet, bad)
        assert not report.ok

    def test_tight_delay_has_zero_slack(self, surfnet):
        state = tighten_T(surfnet, initial_state(surfnet))
        delays = breakdown(surfnet, state).delays
        assert np.max(delays) == state.T
        assert check_feasibility(surfnet, state, tol=0).checks["delay"].passed

    def test_negative_tol(self, surfnet):
        with pytest.raises(ValueError):
            check_feasibility(surfnet, initial_state(surfnet), tol=-1)


class TestStage2Objective:
    def test_single_degree_equals_p1(self):
        sc = toy_scenario([[1], [2]], [20.0, 20.0], lambda_set=(65536,))
        state = initial_state(sc)
        lam = np.full(2, 65536.0)
        want = p1_objective(sc, tighten_T(sc, state.replace(lam=lam)))
        assert stage2_objective(sc, state, lam) == want

    def test_rejects_inadmissible(self, surfnet):
        with pytest.raises(ValueError):
            stage2_objective(surfnet, initial_state(surfnet), np.full(6, 40000.0))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from([0, 1, 2]), min_size=6, max_size=6), st.integers(0, 5))
    def test_nonincreasing_without_security_weight(self, idx, k):
        from quhe.scenario import surfnet_default
        sc = surfnet_default()
        sc = sc.replace(weights=ObjectiveWeights(1.0, 0.0, 1e-4, 1e-4))
        state = initial_state(sc)
        vals = np.array(sc.lambda_set.values, dtype=float)
        lam = vals[idx]
        if idx[k] == 2:
            return
        up = lam.copy()
        up[k] = vals[idx[k] + 1]
        assert stage2_objective(sc, state, up) <= stage2_objective(sc, state, lam)

    def test_two_client_exhaustive(self):
        doc = toy_doc([[1], [2]], [20.0, 30.0], gains=[3e-12, 8e-11], sigma=[0.7, 0.3],
                      lambda_set=(32768, 65536))
        sc = toy_scenario([[1], [2]], [20.0, 30.0], gains=[3e-12, 8e-11], sigma=[0.7, 0.3],
                          lambda_set=(32768, 65536))
        s = initial_state(sc)
        for lam in itertools.product((32768, 65536), repeat=2):
            want = oracles.p1_value(doc, sc.gains, sc.server.noise_psd, s.phi, lam,
                                    s.p, s.b, s.f_c, s.f_s)
            assert stage2_objective(sc, s, np.array(lam, float)) == pytest.approx(want, rel=1e-12)

    def test_equivalence_full_grid(self):
        sc = toy_scenario([[1], [1, 2], [2, 3], [3]], [30.0, 40.0, 25.0],
                          gains=[1e-12, 5e-12, 2e-11, 7e-13], sigma=[0.4, 0.3, 0.2, 0.1])
        s = initial_state(sc)
        vals = np.array(sc.lambda_set.values, dtype=float)
        for idx in itertools.product(range(3), repeat=4):
            lam = vals[list(idx)]
            want = p1_objective(sc, tighten_T(sc, s.replace(lam=lam)))
            assert stage2_objective(sc, s, lam) == want


class TestState:
    def test_arrays_are_frozen(self, surfnet):
        state = initial_state(surfnet)
        with pytest.raises(ValueError):
            state.p[0] = 1.0

    def test_as_dict_roundtrip_types(self, surfnet):
        d = initial_state(surfnet).as_dict()
        assert all(isinstance(v, int) for v in d["lam"])
        assert isinstance(d["T"], float)

    def test_terms_consistent(self, surfnet):
        s = initial_state(surfnet)
        t = objective_terms(surfnet, s)
        w = surfnet.weights
        assert t.value == pytest.approx(w.alpha_qkd * t.u_qkd + w.alpha_msl * t.u_msl
                                        - w.alpha_t * t.T - w.alpha_e * t.e_total, rel=1e-14)
        assert isinstance(AllocationState, type)
