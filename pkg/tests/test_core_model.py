import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locality_jsq.core_model import (OccupancyVector, SystemParams, capacity_check,
                                     epsilon_bad_dispatchers, gbinom, gwqd, l1_distance,
                                     largest_remainder, lqd, occupancy_matrix)
from locality_jsq.graph import CompatibilityGraph, complete_graph

from oracles import BENCH, gwqd_loops


def params_with(**kw):
    base = dict(BENCH)
    base.update(kw)
    return SystemParams(**base)


class TestSystemParams:
    def test_delta(self, bench):
        assert np.allclose(bench.delta, [0.405, 0.46], atol=1e-15)
        assert bench.K == 2 and bench.M == 3

    def test_sample_weights_rows_sum_to_one(self, bench):
        assert np.allclose(bench.sample_weights.sum(axis=1), 1.0, atol=1e-15)

    @pytest.mark.parametrize("kw", [
        dict(w=[0.3, 0.8]),
        dict(v=[0.5, 0.5, 0.1]),
        dict(u=[1.0, -5.0, 10.0]),
        dict(p=[[1.2, 0, 0], [0, 0, 1]]),
        dict(p=[[0, 0, 0], [0, 0, 1]]),
        dict(d=0),
        dict(xi=0.0),
        dict(u=[1.0, 2.0]),
    ])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            params_with(**kw)

    def test_flat_p_is_reshaped(self):
        p = params_with(p=[0.05, 0.6, 1, 0.1, 0.7, 1])
        assert p.p.shape == (2, 3)

    def test_digest_stable(self, bench):
        assert bench.digest() == params_with().digest()
        assert bench.digest() != params_with(lam=2.0).digest()


class TestCapacity:
    @pytest.mark.parametrize("lam,expected", [(3.0, True), (5.0, False), (4.0, False)])
    def test_examples(self, lam, expected):
        assert capacity_check(params_with(lam=lam)) is expected


class TestGbinom:
    def test_integers_match_comb(self):
        import math
        for x in range(8):
            for y in range(5):
                assert gbinom(x, y) == math.comb(x, y)

    def test_real_argument(self):
        assert gbinom(2.5, 2) == pytest.approx(2.5 * 1.5 / 2)
        assert gbinom(1.5, 2) == 0.0

    def test_snaps_near_integers(self):
        assert gbinom(3 - 1e-12, 3) == 1.0


class TestLargestRemainder:
    def test_sum_and_ties(self):
        assert largest_remainder(10, [0.5, 0.3, 0.2]).tolist() == [5, 3, 2]
        assert largest_remainder(1, [0.5, 0.5]).tolist() == [1, 0]
        assert largest_remainder(3, [1, 1, 1, 1]).tolist() == [1, 1, 1, 0]

    @given(st.integers(0, 500), st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8))
    def test_always_sums(self, n, w):
        parts = largest_remainder(n, w)
        assert parts.sum() == n and (parts >= 0).all()
        exact = n * np.asarray(w) / sum(w)
        assert np.all(np.abs(parts - exact) < 1 + 1e-9)


class TestOccupancy:
    def test_from_pmf(self):
        occ = OccupancyVector.from_pmf([[0.2, 0.5, 0.3]], L_max=4)
        assert np.allclose(occ.q[0], [1, 0.8, 0.3, 0, 0])

    def test_invariant_violations(self):
        with pytest.raises(ValueError):
            OccupancyVector([[1, 0.2, 0.5]])
        with pytest.raises(ValueError):
            OccupancyVector([[0.9, 0.2, 0.1]])
        with pytest.raises(ValueError):
            OccupancyVector([[1, -0.1, 0]])

    def test_from_queue_lengths(self):
        occ = OccupancyVector.from_queue_lengths([0, 1, 2, 2, 0], [0, 0, 0, 1, 1], 2, L_max=3)
        assert np.allclose(occ.q, [[1, 2 / 3, 1 / 3, 0], [1, 0.5, 0.5, 0]])

    def test_csv_round_trip(self, tmp_path):
        occ = OccupancyVector.from_pmf([[0.2, 0.5, 0.3], [0.5, 0, 0.5]], L_max=5)
        path = tmp_path / "occ.csv"
        occ.to_csv(path)
        back = OccupancyVector.from_csv(path)
        assert np.array_equal(back.q, occ.q)


class TestGwqd:
    def test_enumerated_example(self):
        params = SystemParams(d=2, lam=1, xi=1, w=[1.0], v=[0.5, 0.5], u=[1, 1], p=[[1, 1]])
        q = np.array([[1, 0.4, 0.1], [1, 0.2, 0.0]])
        x = gwqd(q, 0, params)
        assert np.allclose(x, [[0.3, 0.15, 0.05], [0.4, 0.1, 0.0]], atol=1e-15)

    def test_empty_system_point_mass(self, bench):
        x = gwqd(OccupancyVector.empty(3, 5), 1, bench)
        assert np.allclose(x[:, 0], bench.sample_weights[1])
        assert np.all(x[:, 1:] == 0)

    def test_homogeneous_reduction(self, homog):
        q = np.array([[1, 0.6, 0.25, 0.05]])
        assert np.allclose(gwqd(q, 0, homog)[0], [0.4, 0.35, 0.2, 0.05])

    def test_out_of_range_k(self, bench):
        with pytest.raises(ValueError):
            gwqd(OccupancyVector.empty(3, 3), 2, bench)

    @settings(max_examples=60)
    @given(st.lists(st.lists(st.floats(0, 1), min_size=4, max_size=4), min_size=3, max_size=3),
           st.integers(0, 1))
    def test_matches_loops_and_is_pmf(self, raw, k):
        q = -np.sort(-np.asarray(raw), axis=1)
        q[:, 0] = 1.0
        params = SystemParams(**BENCH)
        x = gwqd(q, k, params)
        ref = gwqd_loops(q.tolist(), k, BENCH["v"], BENCH["p"])
        for (m, l), val in ref.items():
            assert x[m, l] == pytest.approx(val, abs=1e-15)
        assert (x >= 0).all()
        assert abs(x.sum() - 1) < 1e-12


def small_graph():
    # dispatcher 0 sees servers 0..3 (type 0); dispatcher 1 sees 3, 4 (types 0, 1)
    return CompatibilityGraph.from_edges(
        5, [0, 0, 0, 0, 1], [0, 0],
        [(0, 0), (0, 1), (0, 2), (0, 3), (1, 3), (1, 4)], M=2, K=1)


class TestLqd:
    def test_direct_count(self):
        g = small_graph()
        x = lqd([0, 0, 1, 2, 0], g, 0)
        assert np.allclose(x[0], [0.5, 0.25, 0.25]) and np.all(x[1] == 0)

    def test_two_types(self):
        g = small_graph()
        x = lqd([5, 5, 5, 0, 0], g, 1)
        assert x[0, 0] == 0.5 and x[1, 0] == 0.5 and x.sum() == 1.0

    def test_complete_equals_empirical(self, homog):
        g = complete_graph(homog, 7)
        x = [0, 3, 1, 1, 2, 0, 0]
        local = lqd(x, g, 0)[0]
        occ = occupancy_matrix(x, g.server_type, 1, 3)[0]
        assert np.allclose(local, occ - np.append(occ[1:], 0.0))

    def test_empty_neighborhood(self):
        g = CompatibilityGraph.from_edges(2, [0, 0], [0, 0], [(0, 0)], M=1, K=1)
        with pytest.raises(ValueError):
            lqd([0, 0], g, 1)

    @settings(max_examples=40)
    @given(st.lists(st.integers(0, 6), min_size=5, max_size=5))
    def test_sums_to_one(self, x):
        g = small_graph()
        for i in range(2):
            assert abs(lqd(x, g, i).sum() - 1) < 1e-12


class TestEpsilonBad:
    def test_complete_single_type_is_always_good(self, homog):
        g = complete_graph(homog, 9)
        rng = np.random.default_rng(1)
        for _ in range(5):
            x = rng.integers(0, 4, size=9)
            assert epsilon_bad_dispatchers(x, g, homog, 1e-9) == set()

    def test_eps_two_is_empty(self, bench):
        from locality_jsq.graph import irg_sample
        g = irg_sample(bench, 40, 3)
        x = np.random.default_rng(2).integers(0, 3, size=40)
        assert epsilon_bad_dispatchers(x, g, bench, 2.0) == set()

    def test_hand_built_instance(self):
        # 3 servers of one type, lengths (0, 0, 1): weighted global mass at l >= 1 is 1/3.
        # Dispatcher 0 sees only the two empty servers; distance = 2 * 1/3.
        params = SystemParams(d=1, lam=1, xi=1, w=[1.0], v=[1.0], u=[1.0], p=[[1.0]])
        g = CompatibilityGraph.from_edges(3, [0, 0, 0], [0, 0],
                                          [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)], M=1, K=1)
        x = [0, 0, 1]
        local = lqd(x, g, 0, 3)
        glob = gwqd(occupancy_matrix(x, g.server_type, 1, 2), 0, params)
        assert l1_distance(local, glob) == pytest.approx(2 / 3)
        assert epsilon_bad_dispatchers(x, g, params, 0.5) == {0}
        assert epsilon_bad_dispatchers(x, g, params, 0.7) == set()

    def test_hand_built_point_three(self):
        # global weighted mass at l >= 1 totals 0.3: 10 servers, 3 busy;
        # dispatcher 0 only sees idle servers, so its distance is 0.6
        params = SystemParams(d=1, lam=1, xi=1, w=[1.0], v=[1.0], u=[1.0], p=[[1.0]])
        edges = [(0, j) for j in range(7)] + [(1, j) for j in range(10)]
        g = CompatibilityGraph.from_edges(10, [0] * 10, [0, 0], edges, M=1, K=1)
        x = [0] * 7 + [1, 2, 1]
        assert 0 in epsilon_bad_dispatchers(x, g, params, 0.5)
        assert 0 not in epsilon_bad_dispatchers(x, g, params, 0.6 + 1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=30, max_size=30),
           st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_monotone_in_eps(self, x, e1, e2):
        from locality_jsq.graph import irg_sample
        params = SystemParams(**BENCH)
        g = irg_sample(params, 30, 11)
        lo, hi = sorted((e1, e2))
        assert epsilon_bad_dispatchers(x, g, params, hi) <= epsilon_bad_dispatchers(x, g, params, lo)
