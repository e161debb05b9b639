"""Interior-point QP solver against hand KKT systems and brute force."""

from __future__ import annotations

import numpy as np
import pytest

from oracles import brute_force_qp

from cctuner.qp import solve

NO_EQ = (np.zeros((0, 2)), [])


def kkt_residuals(p, q, a, b, g, h, sol):
    """Recompute the four residuals from the returned vectors only."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    a = np.asarray(a, float).reshape(-1, q.size)
    b = np.asarray(b, float).reshape(a.shape[0])
    g = np.asarray(g, float).reshape(-1, q.size)
    h = np.asarray(h, float).reshape(g.shape[0])
    stat = p * sol.x + q
    if a.shape[0]:
        stat = stat + a.T @ sol.y
    if g.shape[0]:
        stat = stat + g.T @ sol.z
    prim = float(np.abs(a @ sol.x - b).max(initial=0.0))
    comp = 0.0
    if g.shape[0]:
        slack = h - g @ sol.x
        prim = max(prim, float(np.maximum(-slack, 0.0).max(initial=0.0)))
        comp = float(np.abs(sol.z * slack).max(initial=0.0))
    dual = float(np.maximum(-sol.z, 0.0).max(initial=0.0)) if sol.z.size else 0.0
    return stat if isinstance(stat, float) else float(np.abs(stat).max()), prim, dual, comp


def test_unconstrained_parabola_with_vacuous_equality():
    # min x^2 - 4x, only a 0 = 0 equality row.
    sol = solve([2.0], [-4.0], np.zeros((1, 1)), [0.0], np.zeros((0, 1)), [])
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(2.0, abs=1e-9)
    assert sol.objective == pytest.approx(-4.0, abs=1e-9)


def test_equality_only():
    # min x1^2 + 2 x2^2 s.t. x1 + x2 = 3; stationarity gives 2x1 = 4x2.
    sol = solve([2.0, 4.0], [0.0, 0.0], [[1.0, 1.0]], [3.0], *NO_EQ)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [2.0, 1.0], atol=1e-9)
    assert sol.objective == pytest.approx(6.0, abs=1e-9)


def test_active_inequality_and_multiplier():
    sol = solve([2.0, 4.0], [0.0, 0.0], [[1.0, 1.0]], [3.0], [[1.0, 0.0]], [1.0])
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 2.0], atol=1e-6)
    assert sol.objective == pytest.approx(9.0, abs=1e-6)
    # KKT by hand: multiplier on x1 <= 1 equals 6.
    assert sol.z[0] == pytest.approx(6.0, abs=1e-5)


def test_crossed_bounds_infeasible_with_certificate():
    sol = solve([2.0], [0.0], np.zeros((0, 1)), [], [[1.0], [-1.0]], [0.0, -1.0])
    assert sol.status == "infeasible"
    cert = sol.certificate
    z = cert["inequality_dual"]
    assert np.all(z >= -1e-12)
    # Farkas: Gᵀz = 0 and hᵀz < 0 prove emptiness.
    assert cert["stationarity"] <= 1e-8
    assert cert["farkas_gap"] < -1e-6


def test_zero_row_contradiction_short_circuits():
    sol = solve([2.0], [0.0], np.zeros((0, 1)), [], [[0.0]], [-1.0])
    assert sol.status == "infeasible"
    assert sol.certificate["farkas_gap"] < 0


def test_inactive_constraints_get_zero_dual_in_full_indexing():
    g = [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]
    h = [5.0, 1.0, 7.0]
    sol = solve([2.0, 4.0], [0.0, 0.0], [[1.0, 1.0]], [3.0], g, h)
    assert sol.status == "optimal"
    assert sol.z.shape == (3,)
    assert sol.z[0] == 0.0 and sol.z[2] == 0.0
    assert sol.z[1] == pytest.approx(6.0, abs=1e-5)


def feasible_instance(rng):
    """Random strictly convex QP anchored at a strictly feasible point."""
    n = int(rng.integers(2, 7))
    p = rng.uniform(0.5, 2.0, n)
    q = rng.normal(size=n)
    anchor = rng.normal(size=n)
    a = rng.normal(size=(1, n))
    b = a @ anchor
    c = int(rng.integers(1, 9))
    g = rng.normal(size=(c, n))
    h = g @ anchor + rng.uniform(0.1, 2.0, c)
    return p, q, a, b, g, h


def test_reported_residuals_match_recomputation():
    rng = np.random.default_rng(2)
    for _ in range(50):
        p, q, a, b, g, h = feasible_instance(rng)
        sol = solve(p, q, a, b, g, h)
        assert sol.status == "optimal"
        recomputed = kkt_residuals(p, q, a, b, g, h, sol)
        for got, ref in zip(sol.kkt_residuals, recomputed):
            assert abs(got - ref) <= 1e-10
        assert max(sol.kkt_residuals) <= 1e-8


def test_strong_duality_gap():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, q, a, b, g, h = feasible_instance(rng)
        sol = solve(p, q, a, b, g, h)
        assert sol.status == "optimal"
        # Dual objective -0.5 vᵀP⁻¹v - bᵀy - hᵀz with v = q + Aᵀy + Gᵀz.
        v = q + a.T @ sol.y + g.T @ sol.z
        dual_obj = float(-0.5 * v @ (v / p) - b @ sol.y - h @ sol.z)
        assert abs(sol.objective - dual_obj) <= 10 * 1e-8 * max(1.0, abs(sol.objective))


def random_instance(rng):
    n = int(rng.integers(2, 7))
    p = rng.uniform(0.5, 2.0, n)
    q = rng.normal(size=n)
    k = int(rng.integers(0, 2))
    a = rng.normal(size=(k, n))
    b = rng.normal(size=k)
    c = int(rng.integers(1, 9))
    g = rng.normal(size=(c, n))
    # Anchor feasibility at a random point most of the time; negative
    # offsets let genuinely infeasible instances occur.
    h = g @ rng.normal(size=n) + rng.uniform(-0.4, 1.6, c)
    return p, q, a, b, g, h


@pytest.mark.parametrize("seed", [0, 1])
def test_matches_brute_force_active_set(seed):
    rng = np.random.default_rng(seed)
    optimal = infeasible = 0
    for _ in range(150):
        p, q, a, b, g, h = random_instance(rng)
        sol = solve(p, q, a, b, g, h)
        ref_obj, _ = brute_force_qp(p, q, a, b, g, h)
        if ref_obj is None:
            assert sol.status == "infeasible"
            infeasible += 1
        else:
            assert sol.status == "optimal"
            assert sol.objective == pytest.approx(ref_obj, abs=1e-6)
            optimal += 1
    assert optimal > 0 and infeasible > 0


def test_determinism():
    rng = np.random.default_rng(5)
    p, q, a, b, g, h = random_instance(rng)
    s1 = solve(p, q, a, b, g, h)
    s2 = solve(p, q, a, b, g, h)
    assert np.array_equal(s1.x, s2.x)
    assert s1.objective == s2.objective
    assert s1.iterations == s2.iterations


def test_input_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        solve([-1.0], [0.0], np.zeros((0, 1)), [], np.zeros((0, 1)), [])
    with pytest.raises(ValueError, match="matching lengths"):
        solve([1.0, 2.0], [0.0], np.zeros((0, 1)), [], np.zeros((0, 1)), [])
