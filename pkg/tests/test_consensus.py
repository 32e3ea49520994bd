import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netfp.consensus import (
    TOPOLOGIES,
    CommGraph,
    DSMatrix,
    FPWeightSet,
    avg_track_step,
    avg_tracking_error_bound,
    build_doubly_stochastic,
    build_fp_weights,
    complete_graph,
    leader_track_step,
    leader_tracking_error_bound,
    load_weights,
    make_topology,
    metropolis_weights,
    reaches_deficit,
    ring_graph,
    save_weights,
    spectral_gap,
    star_graph,
    total_variation,
    verify_doubly_stochastic,
    verify_fp_weight_conditions,
    window_for_tolerance,
    windowed_variation_ok,
)
from netfp.errors import ConstructionFailedError, InvalidArgumentError


def power_norm(m, iters=20000, seed=0):
    """Operator 2-norm by power iteration on M^T M (independent of SVD)."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    x = np.random.default_rng(seed).random(m.shape[1]) + 0.1
    gram = m.T @ m
    prev = 0.0
    for _ in range(iters):
        y = gram @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
        est = math.sqrt(x @ gram @ x)
        if abs(est - prev) < 1e-15:
            break
        prev = est
    return est


def mp_leader_bound(n, lam, B, T):
    with mpmath.workdps(50):
        lam = mpmath.mpf(lam)
        return (n + 1) / (1 - lam) * (mpmath.mpf(1) / T + mpmath.mpf(B) * lam**T)


def mp_avg_bound(n, lam, t, eps):
    with mpmath.workdps(50):
        lam = mpmath.mpf(lam)
        return n * lam**t + lam * (1 - lam**t) / (1 - lam) * 2 * n * n * mpmath.mpf(eps)


class TestGraphs:
    def test_generators(self):
        assert sorted(complete_graph(3).edges) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        assert star_graph(4).neighbors(0) == (1, 2, 3)
        assert star_graph(4).neighbors(2) == (0,)
        assert ring_graph(5).neighbors(0) == (1, 4)
        for kind in TOPOLOGIES:
            assert make_topology(kind, 5).is_symmetric

    def test_not_strongly_connected(self):
        with pytest.raises(InvalidArgumentError):
            CommGraph(3, [(0, 1), (1, 0)])
        with pytest.raises(InvalidArgumentError):
            CommGraph(2, [(0, 1)])

    def test_self_loops_and_range(self):
        g = CommGraph(2, [(0, 0), (0, 1), (1, 0)])
        assert g.edges == {(0, 0), (0, 1), (1, 0)} and g.self_loops == {0}
        assert g.neighbors(0) == (1,)
        assert np.array_equal(build_fp_weights(g).matrices, build_fp_weights(complete_graph(2)).matrices)
        with pytest.raises(InvalidArgumentError):
            CommGraph(2, [(0, 0), (1, 1)])
        with pytest.raises(InvalidArgumentError):
            CommGraph(2, [(0, 2)])

    def test_single_node(self):
        g = CommGraph(1, [])
        assert g.neighbors(0) == ()

    def test_edge_list_roundtrip(self):
        g = ring_graph(6)
        h = CommGraph.from_edge_list(g.to_edge_list())
        assert sorted(h.edges) == sorted(g.edges) and h.n == 6

    def test_edge_list_comments(self):
        g = CommGraph.from_edge_list("# pair\nnodes 2\n0 1\n1 0\n")
        assert g.n == 2


class TestFPWeights:
    def test_two_nodes(self):
        ws = build_fp_weights(complete_graph(2))
        assert ws.matrices[0].tolist() == [[1.0, 0.0], [0.5, 0.5]]
        assert ws.reduced(0).tolist() == [[0.5]]
        assert verify_fp_weight_conditions(ws, complete_graph(2)).ok

    def test_complete_rows_uniform(self):
        n = 6
        ws = build_fp_weights(complete_graph(n))
        for j in range(n):
            for i in range(n):
                if i != j:
                    assert np.allclose(ws.matrices[j][i], 1.0 / n, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("kind", TOPOLOGIES)
    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_validator_passes(self, kind, n):
        g = make_topology(kind, n)
        report = verify_fp_weight_conditions(build_fp_weights(g), g)
        assert report.ok, report.failures()
        assert all(lam < 1 for lam in report.lambdas.values())

    def test_ring_every_source(self):
        g = ring_graph(5)
        report = verify_fp_weight_conditions(build_fp_weights(g), g)
        assert report.ok and all(c.passed for c in report.checks)

    def test_star_hub_reducible_but_contracting(self):
        g = star_graph(5)
        report = verify_fp_weight_conditions(build_fp_weights(g), g)
        irr = {c.name: c for c in report.checks if c.name.endswith("irreducible")}
        assert not irr["P0.irreducible"].passed and irr["P0.irreducible"].advisory
        assert report.ok and report.lambdas["P0"] < 1

    def test_identity_fails(self):
        n = 3
        ws = FPWeightSet(np.stack([np.eye(n)] * n))
        report = verify_fp_weight_conditions(ws, complete_graph(n))
        failed = {c.name for c in report.checks if not c.passed}
        assert {"P0.irreducible", "P0.substochastic", "P0.reaches_deficit", "P0.contraction"} <= failed
        assert not report.ok

    def test_row_sum_too_large(self):
        g = complete_graph(3)
        mats = build_fp_weights(g).matrices.copy()
        mats[1][2] = [0.5, 0.5, 0.5]
        report = verify_fp_weight_conditions(FPWeightSet(mats), g)
        assert [c.name for c in report.failures()][0] == "W1.row_stochastic"

    def test_sparsity(self):
        g = CommGraph(3, [(0, 1), (1, 0), (1, 2), (2, 1)])
        mats = build_fp_weights(complete_graph(3)).matrices
        report = verify_fp_weight_conditions(FPWeightSet(mats), g)
        assert any(c.name.endswith("sparsity") for c in report.failures())

    def test_uniform_star_norm_above_one(self):
        # uniform closed-neighbourhood rows break the operator-norm contraction on a star
        g = star_graph(5)
        with pytest.raises(ConstructionFailedError) as info:
            build_fp_weights(g, method="uniform")
        assert info.value.condition.endswith("contraction")

    def test_directed_graph_uses_uniform(self):
        g = CommGraph(3, [(0, 1), (1, 2), (2, 0), (1, 0)])
        ws = build_fp_weights(g)
        assert verify_fp_weight_conditions(ws, g).ok

    def test_single_node(self):
        g = CommGraph(1, [])
        report = verify_fp_weight_conditions(build_fp_weights(g), g)
        assert report.ok


class TestDoublyStochastic:
    def test_four_cycle(self):
        w = build_doubly_stochastic(ring_graph(4)).matrix
        want = np.array([[1, 1, 0, 1], [1, 1, 1, 0], [0, 1, 1, 1], [1, 0, 1, 1]]) / 3
        assert np.allclose(w, want, rtol=0, atol=1e-15)

    def test_complete(self):
        w = build_doubly_stochastic(complete_graph(5)).matrix
        assert np.allclose(w, 0.2, rtol=0, atol=1e-15)

    def test_star(self):
        w = build_doubly_stochastic(star_graph(5)).matrix
        assert w[0, 0] == pytest.approx(0.2, abs=1e-15)
        assert np.allclose(np.diag(w)[1:], 0.8, atol=1e-15)
        assert np.allclose(w[0, 1:], 0.2, atol=1e-15) and np.allclose(w[1:, 0], 0.2, atol=1e-15)

    @pytest.mark.parametrize("kind", TOPOLOGIES)
    def test_validator(self, kind):
        g = make_topology(kind, 6)
        report = verify_doubly_stochastic(build_doubly_stochastic(g), g)
        assert report.ok

    def test_symmetric_core_disconnected(self):
        g = CommGraph(3, [(0, 1), (1, 2), (2, 0)])
        with pytest.raises(ConstructionFailedError):
            build_doubly_stochastic(g)

    def test_only_row_stochastic_fails(self):
        g = complete_graph(3)
        w = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.4, 0.3, 0.3]])
        report = verify_doubly_stochastic(DSMatrix(w), g)
        assert "W.column_stochastic" in {c.name for c in report.failures()}

    def test_metropolis_symmetric(self):
        w = metropolis_weights(make_topology("line", 7))
        assert np.array_equal(w, w.T)


class TestSpectralGap:
    def test_one_by_one(self):
        assert spectral_gap(np.array([[0.5]])) == 0.5

    def test_four_cycle(self):
        w = build_doubly_stochastic(ring_graph(4)).matrix
        # circulant eigenvalues (1 + 2 cos(2 pi k / 4)) / 3
        eig = sorted(abs((1 + 2 * math.cos(2 * math.pi * k / 4)) / 3) for k in range(1, 4))
        assert spectral_gap(w) == pytest.approx(eig[-1], abs=1e-12)
        assert spectral_gap(w) == pytest.approx(1 / 3, abs=1e-12)

    def test_identity(self):
        assert spectral_gap(np.eye(3), kind="operator") == pytest.approx(1.0)

    @pytest.mark.parametrize("kind", TOPOLOGIES)
    def test_matches_power_iteration(self, kind):
        g = make_topology(kind, 6)
        ws = build_fp_weights(g)
        for j in range(6):
            p = ws.reduced(j)
            assert spectral_gap(p, kind="operator") == pytest.approx(power_norm(p), abs=1e-9)
        w = build_doubly_stochastic(g).matrix
        centered = w - 1.0 / 6
        assert spectral_gap(w) == pytest.approx(power_norm(centered), abs=1e-9)

    def test_reaches_deficit(self):
        assert reaches_deficit(np.array([[0.5, 0.5], [0.0, 0.5]]))
        # row 0 keeps all its mass and never reaches the deficit row
        assert not reaches_deficit(np.array([[1.0, 0.0], [0.5, 0.4]]))


class TestTracking:
    def test_leader_fixed_point(self):
        w = build_fp_weights(ring_graph(5)).matrices[2]
        x = np.full(5, 0.7)
        assert np.allclose(leader_track_step(w, x, 0.0, 2), x, rtol=0, atol=1e-15)

    def test_leader_two_nodes(self):
        w = build_fp_weights(complete_graph(2)).matrices[0]
        x, d = 0.3, 0.25
        out = leader_track_step(w, [x, 0.0], d, 0)
        assert out.tolist() == [x + d, (x + d) / 2]

    @pytest.mark.parametrize("kind", ["line", "ring", "star"])
    def test_leader_contraction(self, kind):
        g = make_topology(kind, 5)
        ws = build_fp_weights(g)
        rng = np.random.default_rng(7)
        for j in range(5):
            w = ws.matrices[j]
            lam = spectral_gap(ws.reduced(j), kind="operator")
            c = rng.random()
            x = rng.random(5)
            x[j] = c
            err0 = np.linalg.norm(x - c)
            for t in range(1, 60):
                prev = np.linalg.norm(x - c)
                x = leader_track_step(w, x, 0.0, j)
                assert x[j] == c
                err = np.linalg.norm(x - c)
                assert err <= lam * prev + 1e-15
                assert err <= lam**t * err0 + 1e-12

    def test_avg_two_nodes(self):
        w = np.full((2, 2), 0.5)
        assert avg_track_step(w, [1.0, 0.0], [0.0, 0.0]).tolist() == [0.5, 0.5]

    def test_avg_fixed_point(self):
        w = build_doubly_stochastic(ring_graph(5))
        x = np.full(5, 0.4)
        assert np.allclose(avg_track_step(w, x, np.zeros(5)), x, rtol=0, atol=1e-15)

    @pytest.mark.parametrize("steps", [50, 10_000])
    def test_avg_conservation(self, steps):
        w = build_doubly_stochastic(make_topology("star", 6))
        rng = np.random.default_rng(steps)
        x = rng.random(6)
        total = x.sum()
        for _ in range(steps):
            d = rng.standard_normal(6) * 0.1
            x = avg_track_step(w, x, d)
            total += d.sum()
        assert abs(x.sum() - total) <= 1e-9

    def test_weight_files(self, tmp_path):
        g = ring_graph(4)
        ws = build_fp_weights(g)
        save_weights(ws, tmp_path / "fp.json")
        assert np.array_equal(load_weights(tmp_path / "fp.json").matrices, ws.matrices)
        ds = build_doubly_stochastic(g)
        save_weights(ds, tmp_path / "ds.json")
        assert np.array_equal(load_weights(tmp_path / "ds.json").matrix, ds.matrix)


class TestBounds:
    def test_leader_examples(self):
        assert leader_tracking_error_bound(3, 0.5, 1.0, 10) == pytest.approx(0.8078125, abs=1e-15)
        assert leader_tracking_error_bound(1, 0.5, 0.0, 1) == 4.0

    def test_leader_monotone_limit(self):
        vals = [leader_tracking_error_bound(4, 0.9, 0.0, T) for T in (1, 10, 100, 10**6)]
        assert vals == sorted(vals, reverse=True) and vals[-1] < 1e-4

    def test_avg_examples(self):
        assert avg_tracking_error_bound(2, 0.5, 1, 0.1) == pytest.approx(1.4, abs=1e-15)
        assert avg_tracking_error_bound(3, 0.7, 5, 0.0) == pytest.approx(3 * 0.7**5, abs=1e-15)
        assert avg_tracking_error_bound(3, 0.7, 2000, 0.0) < 1e-300

    def test_lambda_range(self):
        for fn, args in ((leader_tracking_error_bound, (3, 1.0, 1.0, 5)), (avg_tracking_error_bound, (3, 1.2, 5, 0.1))):
            with pytest.raises(InvalidArgumentError):
                fn(*args)
        assert leader_tracking_error_bound(2, 0.0, 1.0, 4) == 0.75

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(1, 50), lam=st.floats(0.0, 0.999), B=st.floats(0.0, 10.0), T=st.integers(1, 10**5))
    def test_leader_high_precision(self, n, lam, B, T):
        want = mp_leader_bound(n, lam, B, T)
        got = leader_tracking_error_bound(n, lam, B, T)
        assert abs(got - float(want)) <= 1e-12 * max(1.0, abs(float(want)))

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(1, 50), lam=st.floats(0.0, 0.999), t=st.integers(1, 10**5), eps=st.floats(0.0, 1.0))
    def test_avg_high_precision(self, n, lam, t, eps):
        want = mp_avg_bound(n, lam, t, eps)
        got = avg_tracking_error_bound(n, lam, t, eps)
        assert abs(got - float(want)) <= 1e-12 * max(1.0, abs(float(want)))

    def test_window(self):
        T = window_for_tolerance(5, 0.9, 0.2, 1e-2)
        assert leader_tracking_error_bound(5, 0.9, 0.2, T) <= 1e-2
        assert leader_tracking_error_bound(5, 0.9, 0.2, T - 1) > 1e-2


class TestVariation:
    def test_constant(self):
        assert windowed_variation_ok([0.4] * 5) and total_variation([0.4] * 5) == 0.0

    def test_monotone(self):
        assert windowed_variation_ok([0, 0.3, 0.5, 0.9])
        assert total_variation([0, 0.3, 0.5, 0.9]) == pytest.approx(0.9)

    def test_not_monotone(self):
        assert not windowed_variation_ok([0, 0.5, 0.2])

    def test_range(self):
        with pytest.raises(InvalidArgumentError):
            windowed_variation_ok([0.2, 1.3])
