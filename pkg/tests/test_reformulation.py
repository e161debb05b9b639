"""Participation factors, constraint catalog, and the tightened program."""

from __future__ import annotations

import numpy as np
import pytest

from cctuner import apply_rts_modifications, load_rts_case, parse_case
from cctuner.ptdf import compute_ptdf
from cctuner.reformulation import (
    ConstraintCatalog,
    build_catalog,
    build_qp,
    constraint_deltas,
    participation_factors,
    qp_to_lp_text,
    solve_dispatch,
)
from cctuner.uncertainty import (
    GaussianSpec,
    gaussian_from_std_corr,
    spec_moments,
)

TWO_GEN = """
base 100
bus 1 0 uncertain
bus 2 200
line 1 2 0.1 500
gen 1 0 100 0.01 10 0
gen 2 0 300 0.02 20 0
"""

THREE_BUS_RING = """
base 100
bus 1 0 uncertain
bus 2 0 uncertain
bus 3 30
line 1 2 0.1 100
line 1 3 0.1 100
line 2 3 0.1 100
gen 1 0 50 0.01 10 0
gen 2 0 50 0.015 12 0
"""


@pytest.fixture(scope="module")
def rts():
    return apply_rts_modifications(load_rts_case())


@pytest.fixture(scope="module")
def rts_catalog(rts):
    ptdf = compute_ptdf(rts)
    alpha = participation_factors(rts)
    moments = spec_moments(gaussian_from_std_corr([9.4, 13.1], 0.2), rts)
    return build_catalog(rts, ptdf, alpha, moments)


def test_participation_proportional_split():
    case = parse_case(TWO_GEN)
    alpha = participation_factors(case)
    np.testing.assert_allclose(alpha.alpha, [0.25, 0.75])


def test_participation_single_generator():
    case = parse_case("base 100\nbus 1 0\nbus 2 10\nline 1 2 0.1 50\ngen 1 0 20 0 1 0\n")
    alpha = participation_factors(case)
    np.testing.assert_allclose(alpha.alpha, [1.0, 0.0])


def test_participation_sums_to_one_and_scale_invariant(rts):
    plain = load_rts_case()
    a1 = participation_factors(plain).alpha
    a2 = participation_factors(rts).alpha  # capacities doubled
    assert abs(a1.sum() - 1.0) <= 1e-12
    assert np.array_equal(a1, a2)
    assert np.all(a1[plain.p_max_mw() == 0.0] == 0.0)


def test_participation_requires_capacity():
    case = parse_case("base 100\nbus 1 0\nbus 2 0\nline 1 2 0.1 50\ngen 1 0 20 0 1 0\n")
    stripped = type(case)(
        case.base_mva,
        case.buses,
        case.lines,
        tuple(type(g)(g.bus, 0.0, 0.0, 0.0, 0.0, 0.0) for g in case.generators),
    )
    with pytest.raises(ValueError, match="capacity"):
        participation_factors(stripped)


def test_catalog_shape_and_order(rts, rts_catalog):
    cat = rts_catalog
    # 2 rows per bus plus 2 per line.
    assert len(cat) == 2 * 24 + 2 * 38 == 124
    # Non-degenerate: only the 10 buses with capacity keep live rows.
    assert cat.n_active == 2 * 10 + 2 * 38 == 96
    kinds = [r.kind for r in cat.rows]
    assert kinds[:24] == ["gen_upper"] * 24
    assert kinds[24:48] == ["gen_lower"] * 24
    assert kinds[48:86] == ["line_upper"] * 38
    assert kinds[86:] == ["line_lower"] * 38
    assert [r.subject for r in cat.rows[:24]] == list(range(1, 25))
    assert [r.subject for r in cat.rows[48:86]] == list(range(1, 39))


def test_catalog_gen_row_structure(rts, rts_catalog):
    alpha = participation_factors(rts).alpha
    p_max = rts.p_max_mw() / rts.base_mva
    p_min = rts.p_min_mw() / rts.base_mva
    cat = rts_catalog
    sigma_total = np.sqrt(9.4**2 + 13.1**2 + 2 * 0.2 * 9.4 * 13.1) / 100.0
    for i in range(24):
        up, lo = cat.rows[i], cat.rows[24 + i]
        assert up.nominal_limit == p_max[i]
        assert lo.nominal_limit == -p_min[i]
        np.testing.assert_array_equal(up.sensitivity, alpha[i] * np.ones(24))
        # Generator tightening is alpha_i times the total-mismatch std.
        assert up.sigma == pytest.approx(alpha[i] * sigma_total, rel=1e-12)
        assert lo.sigma == pytest.approx(up.sigma, rel=1e-12)
        assert up.degenerate == (rts.p_max_mw()[i] == 0.0)


def test_catalog_line_rows_match_quadratic_form(rts, rts_catalog):
    moments = spec_moments(gaussian_from_std_corr([9.4, 13.1], 0.2), rts)
    ptdf = compute_ptdf(rts)
    d = rts.loads_mw() / rts.base_mva
    caps = rts.line_capacities_mw() / rts.base_mva
    cat = rts_catalog
    for r in range(38):
        up = cat.rows[48 + r]
        lo = cat.rows[86 + r]
        assert not up.degenerate and not lo.degenerate
        flow_d = float(ptdf.entries[r] @ d)
        assert up.nominal_limit == pytest.approx(caps[r] + flow_d, rel=1e-12)
        assert lo.nominal_limit == pytest.approx(caps[r] - flow_d, rel=1e-12)
        oracle = float(np.sqrt(up.sensitivity @ moments.covariance @ up.sensitivity))
        assert up.sigma == pytest.approx(oracle, rel=1e-9)
        assert lo.sigma == pytest.approx(up.sigma, rel=1e-12)


def test_zero_covariance_kills_tightening(rts):
    ptdf = compute_ptdf(rts)
    alpha = participation_factors(rts)
    moments = spec_moments(GaussianSpec(mean_mw=np.zeros(2), covariance_mw2=np.zeros((2, 2))), rts)
    cat = build_catalog(rts, ptdf, alpha, moments)
    assert np.all(cat.sigmas == 0.0)


def test_constraint_deltas_rank_one_structure():
    case = parse_case(THREE_BUS_RING)
    ptdf = compute_ptdf(case)
    alpha = participation_factors(case)
    deltas = constraint_deltas(ptdf, alpha)
    # Post-recourse injections are always balanced: (I - alpha·1ᵀ)xi sums to 0.
    rng = np.random.default_rng(0)
    for _ in range(10):
        xi = rng.normal(size=3)
        adjusted = xi - alpha.alpha * xi.sum()
        assert abs(adjusted.sum()) <= 1e-12

    # Single balancer at bus k: row reduces to M_r - M_rk·1.
    from cctuner.reformulation import ParticipationFactors

    e_2 = ParticipationFactors(alpha=np.array([0.0, 1.0, 0.0]))
    d2 = constraint_deltas(ptdf, e_2)
    expect = ptdf.entries - np.outer(ptdf.entries[:, 1], np.ones(3))
    np.testing.assert_allclose(d2, expect, atol=1e-15)


def test_constraint_deltas_match_finite_differences():
    case = parse_case(THREE_BUS_RING)
    ptdf = compute_ptdf(case)
    alpha = participation_factors(case)
    deltas = constraint_deltas(ptdf, alpha)
    d = case.loads_mw() / case.base_mva
    p_g = np.array([0.2, 0.1, 0.0])

    def flows(xi):
        omega = xi.sum()
        return ptdf.entries @ (p_g - alpha.alpha * omega + xi - d)

    h = 1e-6
    for j in range(3):
        e_j = np.zeros(3)
        e_j[j] = h
        fd = (flows(e_j) - flows(np.zeros(3))) / h
        np.testing.assert_allclose(fd, deltas[:, j], atol=1e-8)


def test_build_qp_rhs_moves_linearly_in_s(rts, rts_catalog):
    q0 = build_qp(rts, rts_catalog, 0.0)
    q1 = build_qp(rts, rts_catalog, 1.5)
    q2 = build_qp(rts, rts_catalog, 3.0)
    np.testing.assert_array_equal(q0.h, rts_catalog.limits)
    np.testing.assert_allclose(q1.h, rts_catalog.limits - 1.5 * rts_catalog.sigmas, atol=1e-15)
    # Monotone tightening, strict wherever uncertainty bites.
    assert np.all(q2.h <= q1.h)
    assert np.all(q1.h[rts_catalog.sigmas > 0] < q0.h[rts_catalog.sigmas > 0])
    with pytest.raises(ValueError, match="nonnegative"):
        build_qp(rts, rts_catalog, -0.1)


def test_dispatch_solution_kkt_and_pinning(rts, rts_catalog):
    sol = solve_dispatch(rts, rts_catalog, 1.3012)
    assert sol.feasible
    prog = build_qp(rts, rts_catalog, 1.3012)
    q = sol.qp_solution
    # Full-system stationarity, using only returned vectors.
    stat = prog.q_diag * sol.p_g + prog.lin + q.y[0] * prog.eq_row + prog.g_matrix.T @ q.z
    assert np.abs(stat).max() <= 1e-8
    assert abs(sol.p_g.sum() - prog.eq_rhs) <= 1e-8
    slack = prog.h - prog.g_matrix @ sol.p_g
    assert slack.min() >= -1e-9
    assert np.all(q.z >= 0.0)
    assert np.abs(q.z * slack).max() <= 1e-7
    # Buses without capacity are exactly zero.
    assert np.all(sol.p_g[rts.p_max_mw() == 0.0] == 0.0)


def test_feasible_set_nesting_and_cost_monotone(rts, rts_catalog):
    grid = np.linspace(0.0, 3.0, 10)
    sols = [solve_dispatch(rts, rts_catalog, s) for s in grid]
    assert all(s.feasible for s in sols)
    costs = [s.objective for s in sols]
    for a, b in zip(costs, costs[1:]):
        assert b >= a - 1e-6
    # Any dispatch feasible at tighter s stays feasible at looser s.
    for s_loose, sol_tight in zip(grid[:-1], sols[1:]):
        prog = build_qp(rts, rts_catalog, float(s_loose))
        margins = prog.g_matrix @ sol_tight.p_g - prog.h
        assert margins.max() <= 1e-9
        assert abs(sol_tight.p_g.sum() - prog.eq_rhs) <= 1e-8


def test_crossed_bounds_infeasible(rts, rts_catalog):
    # Large s crosses every generator's tightened bounds.
    sol = solve_dispatch(rts, rts_catalog, 50.0)
    assert sol.status == "infeasible"
    assert sol.qp_solution.certificate is not None


def test_lp_export_tokens(rts, rts_catalog):
    prog = build_qp(rts, rts_catalog, 1.0)
    text = qp_to_lp_text(prog)
    assert text.startswith("Minimize")
    assert "Subject To" in text and "Bounds" in text and text.rstrip().endswith("End")
    assert " balance: " in text
    assert f" c{len(rts_catalog)}: " in text
    assert "p24 free" in text
    # 12-digit coefficients round-trip through float.
    for token in text.split():
        if token[0].isdigit() or token[0] == "-":
            float(token.rstrip("]"))
