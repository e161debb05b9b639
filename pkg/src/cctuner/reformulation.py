"""Tightened deterministic reformulation of the chance-constrained dispatch.

Under the affine balancing recourse, generator i absorbs the fixed
fraction alpha_i of the total disturbance. Every chance constraint then
takes the common form

    g·p_G + a·xi <= rhs

with a dispatch row g, a disturbance-sensitivity row a, and a constant
right-hand side. The deterministic surrogate keeps g·p_G <= rhs - s·sigma
where sigma = ||a Sigma^(1/2)||_2 and s is the safety parameter being
tuned. All quantities here are per unit; costs are kept in currency by
rescaling the MW-based coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp
from .grid import GridCase
from .ptdf import PtdfMatrix
from .uncertainty import MomentEstimate, sensitivity_norm

__all__ = [
    "ParticipationFactors",
    "ConstraintRow",
    "ConstraintCatalog",
    "TightenedQP",
    "DispatchSolution",
    "participation_factors",
    "constraint_deltas",
    "build_catalog",
    "build_qp",
    "solve_dispatch",
    "qp_to_lp_text",
]

GEN_UPPER = "gen_upper"
GEN_LOWER = "gen_lower"
LINE_UPPER = "line_upper"
LINE_LOWER = "line_lower"


@dataclass(frozen=True)
class ParticipationFactors:
    """Capacity-proportional balancing shares; alpha sums to one."""

    alpha: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.alpha, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "alpha", arr)


def participation_factors(case: GridCase) -> ParticipationFactors:
    """alpha_i = p_max,i / sum(p_max); exactly zero without capacity."""
    p_max = case.p_max_mw()
    total = float(p_max.sum())
    if total <= 0.0:
        raise ValueError("no generation capacity to distribute balancing duty over")
    return ParticipationFactors(alpha=p_max / total)


def constraint_deltas(m: PtdfMatrix, alpha: ParticipationFactors) -> np.ndarray:
    """Per-sample flow sensitivity M(I - alpha·1ᵀ), computed once.

    Row r gives the change of flow on line r per unit of nodal
    disturbance after the balancing recourse withdraws the total
    mismatch according to alpha.
    """
    entries = m.entries
    return entries - np.outer(entries @ alpha.alpha, np.ones(entries.shape[1]))


@dataclass(frozen=True)
class ConstraintRow:
    """One chance constraint in the unified form g·p_G + a·xi <= rhs.

    kind is one of gen_upper, gen_lower, line_upper, line_lower;
    subject is the bus id for generator rows and the 1-based line
    number for line rows. nominal_limit is the right-hand side of the
    <=-form at s = 0 (pu); sigma is the tightening coefficient
    ||a Sigma^(1/2)||. Degenerate rows belong to buses with no
    generation capability: their dispatch is pinned and their
    sensitivity row is zero, so they can never be violated.
    """

    kind: str
    subject: int
    dispatch_row: np.ndarray
    sensitivity: np.ndarray
    nominal_limit: float
    sigma: float
    degenerate: bool = False

    def __post_init__(self):
        for name in ("dispatch_row", "sensitivity"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True, eq=False)
class ConstraintCatalog:
    """Ordered chance constraints plus dense views for vectorized use.

    Row order: gen_upper for buses 1..m, gen_lower for buses 1..m,
    line_upper for lines 1..l, line_lower for lines 1..l, so
    len(catalog) = 2m + 2l. n_active counts the non-degenerate rows
    (2·m_gen + 2l for m_gen buses with capacity).
    """

    rows: tuple[ConstraintRow, ...]
    dispatch_matrix: np.ndarray
    sensitivity_matrix: np.ndarray
    limits: np.ndarray
    sigmas: np.ndarray
    degenerate: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_active(self) -> int:
        return int((~self.degenerate).sum())

    def __post_init__(self):
        for name in ("dispatch_matrix", "sensitivity_matrix", "limits", "sigmas", "degenerate"):
            getattr(self, name).setflags(write=False)


def build_catalog(
    case: GridCase,
    m: PtdfMatrix,
    alpha: ParticipationFactors,
    moments: MomentEstimate,
) -> ConstraintCatalog:
    """Assemble the full constraint catalog for one case and moment set."""
    n = case.n_buses
    if alpha.alpha.shape != (n,):
        raise ValueError("participation factors do not match the case dimension")
    if m.entries.shape != (case.n_lines, n):
        raise ValueError("PTDF shape does not match the case")

    base = case.base_mva
    d = case.loads_mw() / base
    p_min = case.p_min_mw() / base
    p_max = case.p_max_mw() / base
    caps = case.line_capacities_mw() / base
    ones = np.ones(n)
    deltas = constraint_deltas(m, alpha)

    rows: list[ConstraintRow] = []
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = 1.0
        a_row = alpha.alpha[i] * ones
        sigma = sensitivity_norm(a_row, moments)
        degenerate = case.p_max_mw()[i] == 0.0
        rows.append(
            ConstraintRow(GEN_UPPER, i + 1, e_i, a_row, float(p_max[i]), sigma, degenerate)
        )
    for i in range(n):
        e_i = np.zeros(n)
        e_i[i] = -1.0
        a_row = -alpha.alpha[i] * ones
        sigma = sensitivity_norm(a_row, moments)
        degenerate = case.p_max_mw()[i] == 0.0
        rows.append(
            ConstraintRow(GEN_LOWER, i + 1, e_i, a_row, float(-p_min[i]), sigma, degenerate)
        )
    flows_d = m.entries @ d
    for r in range(case.n_lines):
        sigma = sensitivity_norm(deltas[r], moments)
        rows.append(
            ConstraintRow(
                LINE_UPPER, r + 1, m.entries[r].copy(), deltas[r].copy(),
                float(caps[r] + flows_d[r]), sigma,
            )
        )
    for r in range(case.n_lines):
        sigma = sensitivity_norm(deltas[r], moments)
        rows.append(
            ConstraintRow(
                LINE_LOWER, r + 1, -m.entries[r], -deltas[r],
                float(caps[r] - flows_d[r]), sigma,
            )
        )

    return ConstraintCatalog(
        rows=tuple(rows),
        dispatch_matrix=np.array([r.dispatch_row for r in rows]),
        sensitivity_matrix=np.array([r.sensitivity for r in rows]),
        limits=np.array([r.nominal_limit for r in rows]),
        sigmas=np.array([r.sigma for r in rows]),
        degenerate=np.array([r.degenerate for r in rows], dtype=bool),
    )


@dataclass(frozen=True, eq=False)
class TightenedQP:
    """Deterministic surrogate program at one safety parameter s.

    minimize   0.5 pᵀ diag(q_diag) p + linᵀ p + constant   ($)
    subject to 1ᵀ p = total load,  G p <= limits - s·sigmas

    Decision variables are the m nodal generation setpoints in pu;
    fixed_zero marks buses whose setpoint is pinned to zero (no
    capacity), which callers eliminate before handing the program to
    the solver.
    """

    q_diag: np.ndarray
    lin: np.ndarray
    constant: float
    eq_row: np.ndarray
    eq_rhs: float
    g_matrix: np.ndarray
    h: np.ndarray
    s: float
    fixed_zero: np.ndarray

    def __post_init__(self):
        for name in ("q_diag", "lin", "eq_row", "g_matrix", "h", "fixed_zero"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vars(self) -> int:
        return self.q_diag.size


def build_qp(case: GridCase, catalog: ConstraintCatalog, s: float) -> TightenedQP:
    """Tightened program with right-hand sides limits - s·sigma.

    The generator rows themselves carry the variable bounds; no
    separate box block exists. s must be nonnegative.
    """
    if s < 0.0:
        raise ValueError(f"safety parameter must be nonnegative, got {s}")
    base = case.base_mva
    c2, c1, c0 = case.cost_coefficients()
    # Objective stays in currency: cost(p_MW) with p in pu needs
    # c2·base² and c1·base.
    q_diag = 2.0 * c2 * base * base
    lin = c1 * base
    d_total = float(case.loads_mw().sum() / base)
    return TightenedQP(
        q_diag=q_diag,
        lin=lin,
        constant=float(c0.sum()),
        eq_row=np.ones(case.n_buses),
        eq_rhs=d_total,
        g_matrix=catalog.dispatch_matrix,
        h=catalog.limits - s * catalog.sigmas,
        s=float(s),
        fixed_zero=(case.p_max_mw() == 0.0) & (case.p_min_mw() == 0.0),
    )


@dataclass(frozen=True, eq=False)
class DispatchSolution:
    """Feasible-or-not outcome of one tightened solve.

    p_g is the full-length nodal dispatch (pu, exact zeros at pinned
    buses); objective is the dispatch-dependent cost in $ (quadratic
    plus linear terms; the constant no-load offsets carried in
    TightenedQP.constant cannot influence the argmin and stay out of
    reported costs). Duals and KKT residuals live on the attached
    QpSolution in full catalog indexing.
    """

    status: str
    p_g: np.ndarray
    objective: float
    s: float
    qp_solution: qp.QpSolution

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


def solve_dispatch(
    case: GridCase,
    catalog: ConstraintCatalog,
    s: float,
    tol: float = qp.DEFAULT_TOL,
    max_iters: int = qp.DEFAULT_MAX_ITERS,
) -> DispatchSolution:
    """Build and solve the tightened program at s.

    Buses without capacity are eliminated before solving: their pair of
    generator rows pins them to a point, which leaves an interior-point
    method no interior. The returned primal and duals are re-inflated
    to full length, with multipliers for the eliminated rows chosen to
    close the stationarity conditions of the full system.
    """
    prog = build_qp(case, catalog, s)
    free = ~prog.fixed_zero
    if not np.any(free):
        raise ValueError("every bus is pinned; nothing to dispatch")
    g_free = prog.g_matrix[:, free]
    # Rows touching only pinned variables reduce to constants; solve()
    # drops the all-zero rows this produces.
    sol = qp.solve(
        prog.q_diag[free],
        prog.lin[free],
        prog.eq_row[free].reshape(1, -1),
        [prog.eq_rhs],
        g_free,
        prog.h,
        tol=tol,
        max_iters=max_iters,
    )

    n = case.n_buses
    p_g = np.zeros(n)
    y = np.zeros(1)
    z = np.zeros(len(catalog))
    if sol.status == "optimal":
        p_g[free] = sol.x
        y = sol.y
        z = sol.z.copy()
        # Stationarity at a pinned bus i must close over everything that
        # touches column i: the balance dual, line-row duals, and the
        # bus's own pair of bound rows. The latter two multipliers are
        # unconstrained by complementarity (their slack is zero), so
        # split the residual by sign to keep both nonnegative.
        pinned = np.flatnonzero(prog.fixed_zero)
        if pinned.size:
            stat = prog.q_diag * p_g + prog.lin + y[0] * prog.eq_row + prog.g_matrix.T @ z
            resid = stat[pinned]
            z[pinned] = np.maximum(-resid, 0.0)
            z[n + pinned] = np.maximum(resid, 0.0)
    objective = sol.objective if sol.status == "optimal" else np.inf
    full = qp.QpSolution(
        status=sol.status,
        x=p_g,
        objective=objective,
        y=y,
        z=z,
        kkt_residuals=sol.kkt_residuals,
        iterations=sol.iterations,
        certificate=sol.certificate,
    )
    return DispatchSolution(sol.status, p_g, objective, float(s), full)


def qp_to_lp_text(prog: TightenedQP) -> str:
    """Serialize a tightened program in LP text format for cross-checks.

    Quadratic objective terms use the bracketed [ ... ] / 2 block, so
    the coefficients inside are doubled q_diag entries.
    """
    names = [f"p{i + 1}" for i in range(prog.n_vars)]

    def coef(v: float) -> str:
        return f"{v:.12g}"

    lin_terms = " + ".join(
        f"{coef(c)} {nm}" for c, nm in zip(prog.lin, names) if c != 0.0
    )
    quad_terms = " + ".join(
        f"{coef(2.0 * c)} {nm}^2" for c, nm in zip(prog.q_diag, names) if c != 0.0
    )
    obj = lin_terms or "0 p1"
    if quad_terms:
        obj += f" + [ {quad_terms} ] / 2"
    if prog.constant:
        obj += f" + {coef(prog.constant)}"
    out = ["Minimize", f" obj: {obj}", "Subject To"]
    balance = " + ".join(names)
    out.append(f" balance: {balance} = {coef(prog.eq_rhs)}")
    for r, (row, rhs) in enumerate(zip(prog.g_matrix, prog.h), start=1):
        terms = " + ".join(
            f"{coef(c)} {nm}" for c, nm in zip(row, names) if c != 0.0
        )
        out.append(f" c{r}: {terms or '0 ' + names[0]} <= {coef(rhs)}")
    out.append("Bounds")
    out.extend(f" {nm} free" for nm in names)
    out.append("End")
    return "\n".join(out) + "\n"
