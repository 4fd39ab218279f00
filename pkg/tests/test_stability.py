import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locality_jsq.core_model import SystemParams
from locality_jsq.graph import CompatibilityGraph, complete_graph
from locality_jsq.stability import (StabilityReport, asymptotic_load_lower_bound,
                                    binom_allocation_max, design_p_matrix, rho_exact,
                                    subcritical_check)

from oracles import (BENCH, binom_alloc_exhaustive, lower_bound, rho_bruteforce,
                     subcritical_loads, water_fill)


def one_type(lam, u=1.0, d=2):
    return SystemParams(d=d, lam=lam, xi=1, w=[1.0], v=[1.0], u=[u], p=[[1.0]])


class TestRhoExact:
    def test_two_servers(self):
        g = CompatibilityGraph.from_edges(2, [0, 0], [0], [(0, 0), (0, 1)], M=1, K=1)
        rep = rho_exact(g, one_type(1.0))
        assert rep.rho == pytest.approx(0.5) and rep.witness_set == [0, 1]
        assert rep.mode == "exact"

    def test_low_degree_branch(self):
        g = CompatibilityGraph.from_edges(1, [0], [0], [(0, 0)], M=1, K=1)
        assert rho_exact(g, one_type(0.5)).rho == pytest.approx(0.5)

    def test_zero_arrivals(self, bench):
        g = complete_graph(bench, 6)
        assert rho_exact(g, SystemParams(**dict(BENCH, lam=0.0))).rho == 0.0

    def test_too_large(self, bench):
        with pytest.raises(ValueError, match="subcritical_check"):
            rho_exact(complete_graph(bench, 23), bench)

    def test_complete_homogeneous_closed_form(self):
        N, W, lam, d = 9, 5, 0.8, 2
        params = SystemParams(d=d, lam=lam, xi=W / N, w=[1.0], v=[1.0], u=[1.0], p=[[1.0]])
        g = complete_graph(params, N)
        best = max(lam * W * math.comb(s, d) / math.comb(N, d) / s for s in range(1, N + 1))
        assert rho_exact(g, params).rho == pytest.approx(best, rel=1e-12)

    def test_report_invariants(self):
        with pytest.raises(ValueError):
            StabilityReport(-1.0, "exact")
        with pytest.raises(ValueError):
            StabilityReport(1.0, "bogus")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 7), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
    def test_matches_bruteforce(self, N, W, d, seed):
        rng = np.random.default_rng(seed)
        st_ = rng.integers(0, 2, size=N)
        st_[0] = 0
        if N > 1:
            st_[1] = 1
        M = int(st_.max()) + 1
        edges = [(i, j) for i in range(W) for j in range(N) if rng.random() < 0.6]
        u = rng.uniform(0.5, 3, size=M)
        v = np.full(M, 1 / M)
        params = SystemParams(d=d, lam=1.3, xi=1, w=[1.0], v=v, u=u, p=np.ones((1, M)))
        g = CompatibilityGraph.from_edges(N, st_, [0] * W, edges, M=M, K=1)
        ref, _ = rho_bruteforce(N, st_.tolist(), g.adjacency_lists, u.tolist(), 1.3, d)
        assert rho_exact(g, params).rho == pytest.approx(ref, rel=1e-12, abs=1e-15)


class TestSubcritical:
    def test_benchmark(self, bench):
        loads, ok = subcritical_check(bench)
        ref = subcritical_loads(**{k: BENCH[k] for k in ("lam", "xi", "w", "v", "u", "p")})
        assert np.allclose(loads, ref, atol=1e-12)
        assert np.allclose(loads, [0.5958, 0.9082, 0.6699], atol=5e-5)
        assert ok

    def test_complete_fails(self, bench_complete):
        loads, ok = subcritical_check(bench_complete)
        assert loads[0] == pytest.approx(3.0) and not ok

    def test_zero_lambda(self, bench):
        loads, ok = subcritical_check(SystemParams(**dict(BENCH, lam=0.0)))
        assert np.all(loads == 0) and ok

    @given(st.floats(0.01, 5), st.floats(0.01, 5), st.integers(0, 2), st.floats(1.01, 3))
    def test_monotone(self, l1, l2, m, factor):
        a = subcritical_check(SystemParams(**dict(BENCH, lam=min(l1, l2)))).loads
        b = subcritical_check(SystemParams(**dict(BENCH, lam=max(l1, l2)))).loads
        assert np.all(a <= b + 1e-15)
        u = np.array(BENCH["u"])
        u2 = u.copy()
        u2[m] *= factor
        c = subcritical_check(SystemParams(**dict(BENCH, u=u2))).loads
        base = subcritical_check(SystemParams(**BENCH)).loads
        assert np.all(c <= base + 1e-15)


class TestLowerBound:
    def test_complete_certificate(self, bench_complete):
        assert asymptotic_load_lower_bound(bench_complete, [1, 0, 0]) == 1.5

    def test_designed(self, bench):
        val = asymptotic_load_lower_bound(bench, [1, 0, 0])
        kw = {k: BENCH[k] for k in ("lam", "xi", "w", "v", "u", "p", "d")}
        assert val == pytest.approx(lower_bound(alpha=[1, 0, 0], **kw), rel=1e-14)
        assert val == pytest.approx(0.0614, abs=5e-4)

    def test_full_alpha(self, bench):
        assert asymptotic_load_lower_bound(bench, [1, 1, 1]) == pytest.approx(3 / 4)

    def test_zero_alpha(self, bench):
        with pytest.raises(ValueError):
            asymptotic_load_lower_bound(bench, [0, 0, 0])


class TestDesign:
    def no_p(self, **kw):
        base = {k: v for k, v in BENCH.items() if k != "p"}
        base.update(kw)
        return SystemParams(**base)

    def test_benchmark(self):
        params = self.no_p()
        p, rho_star = design_p_matrix(params)
        assert np.allclose(p, [[1, 1, 0], [0, 0.4, 1]], atol=1e-12)
        assert rho_star <= 0.75 + 1e-9
        loads = subcritical_loads(3.0, 1.0, BENCH["w"], BENCH["v"], BENCH["u"], p.tolist())
        assert max(loads) <= 0.75 + 1e-9

    def test_matches_water_fill_oracle(self):
        params = self.no_p()
        p, _ = design_p_matrix(params)
        x = params.with_p(p).sample_weights
        assert np.allclose(x, water_fill(3.0, 1.0, BENCH["w"], BENCH["v"], BENCH["u"]))

    def test_single_type(self):
        params = SystemParams(d=2, lam=0.5, xi=1, w=[0.3, 0.7], v=[1.0], u=[2.0])
        p, rho = design_p_matrix(params)
        assert np.all(p == 1) and rho == pytest.approx(0.25)

    def test_capacity_boundary(self):
        with pytest.raises(ValueError):
            design_p_matrix(self.no_p(lam=4.0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31), st.floats(0.05, 0.99))
    def test_random_instances(self, K, M, seed, frac):
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(K))
        v = rng.dirichlet(np.ones(M))
        w, v = np.maximum(w, 1e-3), np.maximum(v, 1e-3)
        w, v = w / w.sum(), v / v.sum()
        u = rng.uniform(0.2, 10, size=M)
        lam = frac * float(v @ u)
        params = SystemParams(d=2, lam=lam, xi=1.0, w=w, v=v, u=u)
        p, rho_star = design_p_matrix(params)
        assert np.all((p >= 0) & (p <= 1)) and np.allclose(p.max(axis=1), 1)
        x = params.with_p(p).sample_weights
        assert np.allclose(x.sum(axis=1), 1, atol=1e-12)
        loads, ok = subcritical_check(params.with_p(p))
        assert loads.max() <= frac + 1e-9 and ok


class TestBinomAllocation:
    @pytest.mark.parametrize("args,expected", [((3, 5, 3, 2), 4), ((1, 3, 3, 2), 3), ((4, 0, 3, 2), 0)])
    def test_examples(self, args, expected):
        assert binom_allocation_max(*args) == expected

    def test_infeasible(self):
        with pytest.raises(ValueError):
            binom_allocation_max(2, 7, 3, 2)

    def test_exhaustive_grid(self):
        for Nslots in range(1, 6):
            for D in range(0, 6):
                for C in range(0, min(15, Nslots * D) + 1):
                    for d in range(1, 4):
                        assert binom_allocation_max(Nslots, C, D, d) == \
                            binom_alloc_exhaustive(Nslots, C, D, d), (Nslots, C, D, d)
