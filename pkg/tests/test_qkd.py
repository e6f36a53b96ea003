import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quhe import qkd
from quhe.qkd import Link, Route, Topology

from oracles import skf_mp

# Frozen from the 40-digit mpmath oracle (oracles.skf_mp).
SKF_AT_0_9 = 0.42720608576808774
SKF_ROOT = 0.7799442711232809


def one_link(beta=10.0):
    return Topology([Link(1, beta)], [Route(1, (1,))])


def two_disjoint():
    return Topology([Link(1, 10.0), Link(2, 10.0)], [Route(1, (1,)), Route(2, (2,))])


class TestLinkCapacity:
    def test_perfect_fidelity_has_no_capacity(self):
        assert qkd.link_capacity(89.84, 1.0) == 0.0

    def test_surfnet_link_one(self):
        assert qkd.link_capacity(89.84, 0.9766) == pytest.approx(2.102256, rel=1e-12)

    def test_small_w_tends_to_beta(self):
        assert qkd.link_capacity(46.82, 1e-12) == pytest.approx(46.82, rel=1e-10)

    @pytest.mark.parametrize("w", [0.0, -0.1, 1.0001, np.nan])
    def test_domain(self, w):
        with pytest.raises(qkd.QKDDomainError):
            qkd.link_capacity(10.0, w)


class TestSecretKeyFraction:
    def test_one(self):
        assert qkd.secret_key_fraction(1.0) == 1.0

    def test_threshold_is_zero(self):
        assert qkd.secret_key_fraction(qkd.SKF_THRESHOLD) == pytest.approx(0.0, abs=1e-5)

    def test_at_0_9_matches_high_precision(self):
        assert float(skf_mp(0.9)) == pytest.approx(SKF_AT_0_9, rel=1e-15)
        assert qkd.secret_key_fraction(0.9) == pytest.approx(SKF_AT_0_9, rel=1e-13)

    @pytest.mark.parametrize("w", [-1e-9, 1.5])
    def test_domain(self, w):
        with pytest.raises(qkd.QKDDomainError):
            qkd.secret_key_fraction(w)

    def test_zero_below_threshold_and_increasing_above(self):
        low = np.linspace(0.0, qkd.SKF_THRESHOLD, 1000)
        assert np.all(qkd.secret_key_fraction(low) == 0.0)
        high = np.linspace(0.78, 1.0, 1000)
        assert np.all(np.diff(qkd.secret_key_fraction(high)) > 0)

    def test_continuous_at_clamp(self):
        for w in (SKF_ROOT - 1e-7, SKF_ROOT + 1e-7):
            assert qkd.secret_key_fraction(w) == pytest.approx(0.0, abs=1e-6)

    def test_bisection_self_test(self):
        root = qkd.skf_threshold_bisection(tol=1e-12)
        assert root == pytest.approx(SKF_ROOT, abs=1e-9)
        assert abs(root - qkd.SKF_THRESHOLD) <= 1e-6

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.0, 1.0))
    def test_matches_mpmath(self, w):
        assert qkd.secret_key_fraction(w) == pytest.approx(float(skf_mp(w)), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.79, 0.999))
    def test_derivative_matches_difference(self, w):
        h = 1e-7
        fd = (qkd.skf_unclamped(w + h) - qkd.skf_unclamped(w - h)) / (2 * h)
        assert qkd.skf_derivative(w) == pytest.approx(fd, rel=1e-5)


class TestEndToEnd:
    def test_plain_product(self):
        top = Topology([Link(1, 10.0), Link(2, 10.0)], [Route(1, (1, 2))])
        assert qkd.end_to_end_werner(top, [0.9, 0.8], 1) == pytest.approx(0.72)

    def test_single_perfect_link(self):
        assert qkd.end_to_end_werner(one_link(), [1.0], 1) == 1.0

    def test_surfnet_route_four(self, surfnet):
        from quhe.verify import REFERENCE_W
        assert qkd.end_to_end_werner(surfnet.topology, REFERENCE_W, 4) == pytest.approx(
            0.922656, rel=1e-12)

    def test_unknown_route(self):
        with pytest.raises(KeyError):
            qkd.end_to_end_werner(one_link(), [0.9], 7)

    def test_only_member_links_count(self):
        top = Topology([Link(1, 10.0), Link(2, 10.0)], [Route(1, (1,)), Route(2, (2,))])
        assert qkd.end_to_end_werner(top, [0.9, 0.5], 1) == pytest.approx(0.9)


class TestUtility:
    def test_clamped_route_zeroes_utility(self):
        assert qkd.qkd_utility(two_disjoint(), [3.0, 4.0], [0.5, 0.99]) == 0.0

    def test_single_perfect(self):
        assert qkd.qkd_utility(one_link(), [2.0], [1.0]) == 2.0

    def test_two_disjoint_routes(self):
        assert qkd.qkd_utility(two_disjoint(), [1.0, 1.0], [0.9, 0.9]) == pytest.approx(
            SKF_AT_0_9**2, rel=1e-12)
        assert SKF_AT_0_9**2 == pytest.approx(0.18251, abs=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            qkd.qkd_utility(two_disjoint(), [1.0], [0.9, 0.9])

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.1, 10.0), st.lists(st.floats(0.1, 5.0), min_size=2, max_size=2),
           st.lists(st.floats(0.8, 1.0), min_size=2, max_size=2))
    def test_homogeneous_degree_n(self, c, phi, w):
        top = two_disjoint()
        u1 = qkd.qkd_utility(top, phi, w)
        u2 = qkd.qkd_utility(top, c * np.array(phi), w)
        assert u2 == pytest.approx(c**2 * u1, rel=1e-12, abs=1e-300)


class TestOptimalWerner:
    def test_unused_link_is_one(self, surfnet):
        from quhe.verify import REFERENCE_PHI
        w = qkd.optimal_werner_from_rates(surfnet.topology, REFERENCE_PHI)
        assert w[surfnet.topology.link_index(6)] == 1.0

    def test_link_15(self, surfnet):
        from quhe.verify import REFERENCE_PHI
        w = qkd.optimal_werner_from_rates(surfnet.topology, REFERENCE_PHI)
        # 1 - (1.872 + 0.6864 + 0.5781) / 80.54
        assert w[surfnet.topology.link_index(15)] == pytest.approx(0.96105661783, abs=1e-10)
        assert round(w[surfnet.topology.link_index(15)], 4) == 0.9611

    def test_link_17(self, surfnet):
        from quhe.verify import REFERENCE_PHI
        w = qkd.optimal_werner_from_rates(surfnet.topology, REFERENCE_PHI)
        # 1 - (2.098 + 1.106) / 90.52
        assert w[surfnet.topology.link_index(17)] == pytest.approx(0.96460450729, abs=1e-10)
        assert round(w[surfnet.topology.link_index(17)], 4) == 0.9646

    def test_overload_names_link(self):
        top = Topology([Link(5, 1.0)], [Route(1, (5,)), Route(2, (5,))])
        with pytest.raises(qkd.LinkOverloadError) as err:
            qkd.optimal_werner_from_rates(top, [0.6, 0.5])
        assert err.value.link_id == 5

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 0.3), min_size=6, max_size=6))
    def test_capacity_tight_on_used_links(self, phi):
        from quhe.scenario import surfnet_default
        top = surfnet_default().topology
        w = qkd.optimal_werner_from_rates(top, phi)
        used = top.A.sum(axis=1) > 0
        cap = qkd.link_capacity(top.beta, w)
        np.testing.assert_allclose(cap[used], (top.A @ np.array(phi))[used], rtol=1e-12)


class TestMonotonicity:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.5, 1.0), min_size=2, max_size=2), st.integers(0, 1),
           st.floats(0.0, 0.5))
    def test_nondecreasing_in_each_w(self, w, k, bump):
        top = Topology([Link(1, 10.0), Link(2, 10.0)], [Route(1, (1, 2)), Route(2, (2,))])
        w = np.array(w)
        up = w.copy()
        up[k] = min(1.0, up[k] + bump)
        assert np.all(qkd.end_to_end_werner(top, up) >= qkd.end_to_end_werner(top, w))
        assert qkd.qkd_utility(top, [1.0, 1.0], up) >= qkd.qkd_utility(top, [1.0, 1.0], w)


class TestTopology:
    def test_membership_matrix(self, surfnet):
        top = surfnet.topology
        assert top.A.shape == (18, 6)
        assert set(np.unique(top.A)) <= {0.0, 1.0}
        for n, r in enumerate(top.routes):
            assert sorted(top.links[i].id for i in np.flatnonzero(top.A[:, n])) == sorted(r.links)

    def test_unknown_link(self):
        with pytest.raises(ValueError):
            Topology([Link(1, 1.0)], [Route(1, (2,))])

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            Topology([Link(1, 1.0), Link(1, 2.0)], [Route(1, (1,))])

    def test_nonpositive_beta(self):
        with pytest.raises(ValueError):
            Link(1, 0.0)

    def test_empty_route(self):
        with pytest.raises(ValueError):
            Route(1, ())
