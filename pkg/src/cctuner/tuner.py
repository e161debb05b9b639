"""Bisection tuning of the safety parameter s.

The tuner brackets s between a loose lower bound and a distribution-free
upper bound, solves the tightened dispatch at the midpoint, measures the
empirical violation probability on a fixed tuning sample set, and
contracts the bracket until the observed probability sits within gamma
of the target, the bracket collapses, or the iteration cap is reached.
Observed probabilities are exact fractions, so the gamma test is free of
float rounding.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .reformulation import ConstraintCatalog, solve_dispatch
from .violation import evaluate

logger = logging.getLogger(__name__)

MODES = ("single", "joint")

TERMINATED_EPS = "eps_tolerance"
TERMINATED_COLLAPSE = "interval_collapse"
TERMINATED_CAP = "iteration_cap"


class TuningError(RuntimeError):
    """Raised when no iterate can be returned as the tuned solution."""


def _to_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    # Route floats through their decimal literal so 0.1 means 1/10.
    return Fraction(Decimal(str(value)))


@dataclass(frozen=True)
class TuningConfig:
    """Target violation probability and stopping rules.

    eps_des and gamma are held as exact fractions; floats are converted
    through their decimal string form, so eps_des=0.1 is exactly 1/10.
    """

    eps_des: Fraction
    gamma: Fraction
    mode: str = "single"
    width_tol: float = 1e-6
    max_iterations: int = 60

    def __post_init__(self):
        object.__setattr__(self, "eps_des", _to_fraction(self.eps_des))
        object.__setattr__(self, "gamma", _to_fraction(self.gamma))
        if not 0 < self.eps_des < 1:
            raise ValueError("eps_des must lie strictly between 0 and 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.width_tol <= 0:
            raise ValueError("width_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass(frozen=True)
class TuningIterate:
    """One bisection step. eps and cost are None when the solve failed."""

    iteration: int
    s: float
    feasible: bool
    eps_single: Optional[Fraction]
    eps_joint: Optional[Fraction]
    cost: Optional[float]


@dataclass(frozen=True)
class TuningResult:
    config: TuningConfig
    s: float
    objective: Optional[float]
    p_g: Optional[np.ndarray]
    eps_single: Fraction
    eps_joint: Fraction
    chosen_iteration: int
    terminated_by: str
    trace: Tuple[TuningIterate, ...]

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def eps_obs(self) -> Fraction:
        return self.eps_single if self.config.mode == "single" else self.eps_joint


def initial_bounds(eps_des, mode: str = "single", n_constraints: Optional[int] = None):
    """Distribution-free bracket for s.

    The upper end is the one-sided Chebyshev point sqrt((1-p)/p), at
    which any finite-variance distribution violates a single tightened
    constraint with probability at most p. Joint mode splits eps_des
    across the n_constraints rows of the union bound.
    """
    p = float(eps_des)
    if not 0 < p < 1:
        raise ValueError("eps_des must lie strictly between 0 and 1")
    if mode == "joint":
        if not n_constraints or n_constraints < 1:
            raise ValueError("joint bounds need the number of constraints")
        p = p / n_constraints
    elif mode != "single":
        raise ValueError(f"mode must be one of {MODES}")
    return 0.0, math.sqrt((1.0 - p) / p)


def bisect_tune(
    config: TuningConfig,
    solve_at: Callable[[float], object],
    evaluate_at: Callable[[float, object], Tuple[Fraction, Fraction]],
    bounds: Tuple[float, float],
) -> TuningResult:
    """Bisect s on [bounds] against the empirical violation probability.

    solve_at(s) must return an object with feasible, objective and p_g
    attributes. evaluate_at(s, solution) must return the pair of exact
    observed frequencies (eps_single, eps_joint). A midpoint whose solve
    is infeasible contracts the upper end of the bracket, since the
    tightened feasible set only shrinks as s grows.
    """
    s_min, s_max = float(bounds[0]), float(bounds[1])
    if not s_min < s_max:
        raise ValueError("bounds must satisfy s_min < s_max")

    target = config.eps_des
    trace: list[TuningIterate] = []
    solutions: list[object] = []
    feasible_history: list[Tuple[float, Fraction]] = []
    terminated_by = TERMINATED_CAP

    for iteration in range(1, config.max_iterations + 1):
        if (s_max - s_min) / 2.0 < config.width_tol:
            terminated_by = TERMINATED_COLLAPSE
            break
        s_k = (s_max - s_min) / 2.0 + s_min
        solution = solve_at(s_k)
        if not solution.feasible:
            trace.append(TuningIterate(iteration, s_k, False, None, None, None))
            solutions.append(solution)
            logger.info("s=%.6g infeasible, contracting upper bound", s_k)
            s_max = s_k
            continue
        eps_single, eps_joint = evaluate_at(s_k, solution)
        eps_obs = eps_single if config.mode == "single" else eps_joint
        trace.append(
            TuningIterate(iteration, s_k, True, eps_single, eps_joint, solution.objective)
        )
        solutions.append(solution)
        for s_prev, eps_prev in feasible_history:
            if (s_prev < s_k and eps_prev < eps_obs) or (s_prev > s_k and eps_prev > eps_obs):
                logger.warning(
                    "observed violation probability is not monotone in s: "
                    "eps(%.6g)=%s vs eps(%.6g)=%s",
                    s_prev,
                    eps_prev,
                    s_k,
                    eps_obs,
                )
                break
        feasible_history.append((s_k, eps_obs))
        if abs(eps_obs - target) <= config.gamma:
            terminated_by = TERMINATED_EPS
            break
        if eps_obs < target:
            s_max = s_k
        else:
            s_min = s_k

    return _select_result(config, trace, solutions, terminated_by)


def _select_result(config, trace, solutions, terminated_by) -> TuningResult:
    """Return the final iterate when it is conservative, otherwise the
    cheapest (smallest-s) conservative iterate seen along the way."""

    def eps_of(it: TuningIterate) -> Fraction:
        return it.eps_single if config.mode == "single" else it.eps_joint

    chosen = None
    if trace and trace[-1].feasible and eps_of(trace[-1]) <= config.eps_des:
        chosen = len(trace) - 1
    else:
        conservative = [
            i for i, it in enumerate(trace) if it.feasible and eps_of(it) <= config.eps_des
        ]
        if conservative:
            chosen = min(conservative, key=lambda i: trace[i].s)
    if chosen is None:
        raise TuningError(
            "no feasible conservative anchor: no iterate met the target violation level"
        )
    it = trace[chosen]
    solution = solutions[chosen]
    return TuningResult(
        config=config,
        s=it.s,
        objective=it.cost,
        p_g=getattr(solution, "p_g", None),
        eps_single=it.eps_single,
        eps_joint=it.eps_joint,
        chosen_iteration=it.iteration,
        terminated_by=terminated_by,
        trace=tuple(trace),
    )


def tune(case, catalog: ConstraintCatalog, samples, config: TuningConfig, bounds=None) -> TuningResult:
    """Tune s for a case against a fixed tuning sample set.

    The same sample set is reused at every iterate, so the observed
    probabilities are a deterministic function of s and bisection sees a
    fixed (noisy but frozen) response curve.
    """
    n = samples.samples.shape[0] if hasattr(samples, "samples") else np.asarray(samples).shape[0]
    if config.gamma > 0 and config.gamma < Fraction(1, int(n)):
        warnings.warn(
            f"gamma={float(config.gamma):g} is below the sample resolution 1/{n}; "
            "the eps tolerance may be unattainable",
            UserWarning,
            stacklevel=2,
        )
    if bounds is None:
        bounds = initial_bounds(config.eps_des, config.mode, catalog.n_active)

    def solve_at(s: float):
        return solve_dispatch(case, catalog, s)

    def evaluate_at(s: float, solution):
        report = evaluate(solution.p_g, samples, catalog)
        return report.eps_single, report.eps_joint

    return bisect_tune(config, solve_at, evaluate_at, bounds)


def trace_to_csv(result: TuningResult) -> str:
    """Render the bisection trace as CSV with one row per iterate."""
    out = io.StringIO()
    out.write("iteration,s,feasible,eps_single,eps_joint,cost\n")
    for it in result.trace:
        eps_s = "" if it.eps_single is None else f"{float(it.eps_single):.12g}"
        eps_j = "" if it.eps_joint is None else f"{float(it.eps_joint):.12g}"
        cost = "" if it.cost is None else f"{it.cost:.12g}"
        flag = "true" if it.feasible else "false"
        out.write(f"{it.iteration},{it.s:.12g},{flag},{eps_s},{eps_j},{cost}\n")
    return out.getvalue()
