"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written the slow, obvious way and kept
free of imports from the modules it checks (beyond plain data types),
so a bug cannot hide in shared code.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np


def angle_solve_flows(case, injection, slack=1):
    """DC power flow via bus angles: solve B·theta = p, flow = (th_i - th_j)/x."""
    m = case.n_buses
    b_bus = np.zeros((m, m))
    for ln in case.lines:
        b = 1.0 / ln.reactance_pu
        i, j = ln.from_bus - 1, ln.to_bus - 1
        b_bus[i, i] += b
        b_bus[j, j] += b
        b_bus[i, j] -= b
        b_bus[j, i] -= b
    keep = [i for i in range(m) if i != slack - 1]
    theta = np.zeros(m)
    theta[keep] = np.linalg.solve(b_bus[np.ix_(keep, keep)], injection[keep])
    return np.array(
        [(theta[ln.from_bus - 1] - theta[ln.to_bus - 1]) / ln.reactance_pu for ln in case.lines]
    )


def brute_force_qp(p_diag, q, a_eq, b_eq, g_ineq, h_ineq, feas_tol=1e-8):
    """Active-set enumeration for min 0.5 xᵀdiag(p)x + qᵀx, Ax=b, Gx<=h.

    Tries every subset of inequalities as equalities, solves the KKT
    system, and keeps the best feasible point with nonnegative
    multipliers. Returns (objective, x) or (None, None) when no subset
    yields a feasible KKT point (infeasible problem, for strictly
    convex objectives). Exponential in the constraint count; callers
    keep instances tiny.
    """
    p = np.asarray(p_diag, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    a = np.asarray(a_eq, dtype=float).reshape(-1, n) if np.size(a_eq) else np.zeros((0, n))
    b = np.asarray(b_eq, dtype=float).reshape(a.shape[0])
    g = np.asarray(g_ineq, dtype=float).reshape(-1, n) if np.size(g_ineq) else np.zeros((0, n))
    h = np.asarray(h_ineq, dtype=float).reshape(g.shape[0])
    k, c = a.shape[0], g.shape[0]

    best_obj, best_x = None, None
    for r in range(0, c + 1):
        for active in combinations(range(c), r):
            rows = np.vstack([a, g[list(active)]]) if (k + r) else np.zeros((0, n))
            rhs = np.concatenate([b, h[list(active)]])
            kkt = np.zeros((n + k + r, n + k + r))
            kkt[:n, :n] = np.diag(p)
            if k + r:
                kkt[:n, n:] = rows.T
                kkt[n:, :n] = rows
            rhs_vec = np.concatenate([-q, rhs])
            try:
                sol = np.linalg.solve(kkt, rhs_vec)
            except np.linalg.LinAlgError:
                continue
            # Near-singular systems can "solve" to garbage without raising.
            scale = max(1.0, float(np.abs(sol).max()))
            if float(np.abs(kkt @ sol - rhs_vec).max()) > 1e-7 * scale:
                continue
            x = sol[:n]
            mult = sol[n + k :]
            if k and np.any(np.abs(a @ x - b) > feas_tol):
                continue
            if c and np.any(g @ x - h > feas_tol):
                continue
            if np.any(mult < -feas_tol):
                continue
            obj = float(0.5 * x @ (p * x) + q @ x)
            if best_obj is None or obj < best_obj:
                best_obj, best_x = obj, x
    return best_obj, best_x


def naive_violation_counts(p_g, catalog, samples, include_degenerate=False):
    """Per-sample Python-loop violation count: g·p + a·xi > rhs, strictly.

    Accumulates a·xi over the nonzero sample columns in ascending index
    order, mirroring the production kernel's accumulation order so the
    comparison can be exact. The joint count covers non-degenerate rows
    unless include_degenerate is set.
    """
    rows = catalog.rows
    base = [float(np.dot(r.dispatch_row, p_g)) for r in rows]
    n, m = samples.shape
    cols = [j for j in range(m) if np.any(samples[:, j] != 0.0)]
    counts = np.zeros(len(rows), dtype=np.int64)
    joint = 0
    for k in range(n):
        any_hit = False
        for c, row in enumerate(rows):
            acc = base[c]
            for j in cols:
                acc += row.sensitivity[j] * samples[k, j]
            if acc > row.nominal_limit:
                counts[c] += 1
                if include_degenerate or not row.degenerate:
                    any_hit = True
        if any_hit:
            joint += 1
    return counts, joint
