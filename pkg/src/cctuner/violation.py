"""Empirical violation probabilities of a dispatch over a sample set."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .reformulation import ConstraintCatalog
from .uncertainty import SampleSet


@dataclass(frozen=True, eq=False)
class ViolationReport:
    """Exact empirical violation frequencies for one dispatch.

    per_constraint holds one Fraction per catalog row, in catalog order,
    each an exact count over n_samples. eps_single is the largest per-row
    frequency and eps_joint the frequency of samples violating at least
    one row; both are restricted to non-degenerate rows unless the report
    was built with include_degenerate.
    """

    per_constraint: Tuple[Fraction, ...]
    eps_single: Fraction
    eps_joint: Fraction
    n_samples: int
    counts: np.ndarray
    joint_count: int
    include_degenerate: bool
    seed: Optional[int]

    def __post_init__(self):
        self.counts.setflags(write=False)


def evaluate(p_g, samples, catalog: ConstraintCatalog, include_degenerate: bool = False) -> ViolationReport:
    """Count strict violations g.p + a.xi > rhs for every catalog row.

    samples may be a SampleSet (per-unit, full bus width) or a plain
    (n, n_buses) array in per unit. Degenerate rows are always counted
    individually but only enter eps_single and the joint count when
    include_degenerate is set.
    """
    if isinstance(samples, SampleSet):
        xi = samples.samples
        seed: Optional[int] = samples.seed
    else:
        xi = np.array(samples, dtype=np.float64, order="C")
        xi.setflags(write=False)
        seed = None
    if xi.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    n, m = xi.shape
    if n < 1:
        raise ValueError("need at least one sample")
    if m != catalog.dispatch_matrix.shape[1]:
        raise ValueError(
            f"samples have {m} columns but the catalog covers {catalog.dispatch_matrix.shape[1]} buses"
        )
    p = np.asarray(p_g, dtype=np.float64)
    if p.shape != (m,):
        raise ValueError(f"dispatch must have shape ({m},), got {p.shape}")

    base = np.array([float(np.dot(row, p)) for row in catalog.dispatch_matrix])
    cols = np.nonzero(np.any(xi != 0.0, axis=0))[0].astype(np.int64)
    if include_degenerate:
        active = np.ones(len(catalog), dtype=bool)
    else:
        active = ~catalog.degenerate
    counts, joint = _kernels.count_violations(
        base, catalog.sensitivity_matrix, catalog.limits, xi, cols, active
    )

    per = tuple(Fraction(int(k), n) for k in counts)
    considered = [f for f, keep in zip(per, active) if keep]
    eps_single = max(considered, default=Fraction(0))
    return ViolationReport(
        per_constraint=per,
        eps_single=eps_single,
        eps_joint=Fraction(int(joint), n),
        n_samples=n,
        counts=counts,
        joint_count=int(joint),
        include_degenerate=bool(include_degenerate),
        seed=seed,
    )


def report_to_json(report: ViolationReport, catalog: ConstraintCatalog) -> str:
    """Serialize a report with its catalog row descriptors.

    Frequencies appear both as floats and as exact fraction strings.
    """
    rows = []
    for row, frac, count in zip(catalog.rows, report.per_constraint, report.counts):
        rows.append(
            {
                "kind": row.kind,
                "subject": row.subject,
                "degenerate": bool(row.degenerate),
                "count": int(count),
                "eps": float(frac),
                "eps_exact": str(frac),
            }
        )
    payload = {
        "n_samples": report.n_samples,
        "seed": report.seed,
        "include_degenerate": report.include_degenerate,
        "eps_single": float(report.eps_single),
        "eps_single_exact": str(report.eps_single),
        "eps_joint": float(report.eps_joint),
        "eps_joint_exact": str(report.eps_joint),
        "constraints": rows,
    }
    return json.dumps(payload, indent=2)
