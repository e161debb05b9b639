"""Uncertainty specification, sampling, and moment estimation.

Distribution specs live in the coordinate space of the uncertain buses
(length u, MW units); sampling embeds draws into full length-m nodal
vectors in per unit, with exact zeros at buses that carry no
uncertainty source. Moments are kept in per unit together with a
lower-triangular factor of the covariance, which is what the constraint
tightening consumes.

Randomness comes from numpy's Philox counter-based bit generator so a
(spec, n, seed) triple reproduces bit-identical samples on any
platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaussianSpec",
    "UniformBoxSpec",
    "MixtureSpec",
    "SampleSet",
    "MomentEstimate",
    "gaussian_from_std_corr",
    "sample",
    "empirical_moments",
    "spec_moments",
    "sensitivity_norm",
    "derive_seed",
    "sampleset_to_csv",
    "sampleset_from_csv",
]

# Eigenvalue floor (relative to scale) below which an input covariance is
# rejected rather than repaired.
_SPEC_PSD_TOL = 1e-8
# Floor for sample covariances; roundoff negatives above this are clipped.
_MOMENT_PSD_TOL = 1e-10


def _frozen_array(values, shape_hint=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape_hint is not None and arr.shape != shape_hint:
        raise ValueError(f"expected shape {shape_hint}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GaussianSpec:
    """Multivariate Gaussian over the uncertain buses (MW, MW^2)."""

    mean_mw: np.ndarray
    covariance_mw2: np.ndarray

    def __post_init__(self):
        mean = _frozen_array(self.mean_mw)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        cov = _frozen_array(self.covariance_mw2, (mean.size, mean.size))
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        scale = max(1.0, float(np.abs(np.diag(cov)).max(initial=0.0)))
        if float(np.linalg.eigvalsh(cov).min()) < -_SPEC_PSD_TOL * scale:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean_mw", mean)
        object.__setattr__(self, "covariance_mw2", cov)

    @property
    def dim(self) -> int:
        return self.mean_mw.size


@dataclass(frozen=True)
class UniformBoxSpec:
    """Independent per-bus uniform draws on [lower, upper] MW."""

    lower_mw: np.ndarray
    upper_mw: np.ndarray

    def __post_init__(self):
        lower = _frozen_array(self.lower_mw)
        upper = _frozen_array(self.upper_mw, lower.shape)
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower_mw", lower)
        object.__setattr__(self, "upper_mw", upper)

    @property
    def dim(self) -> int:
        return self.lower_mw.size


@dataclass(frozen=True)
class MixtureSpec:
    """Finite mixture; weights must sum to one."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), spec) for w, spec in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        if any(w < 0.0 or w > 1.0 for w, _ in comps):
            raise ValueError("mixture weights must lie in [0, 1]")
        if abs(sum(w for w, _ in comps) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        dims = {spec.dim for _, spec in comps}
        if len(dims) != 1:
            raise ValueError("mixture components disagree on dimension")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0][1].dim


def gaussian_from_std_corr(std_mw, correlation: float) -> GaussianSpec:
    """Zero-mean Gaussian from per-bus standard deviations and one common
    pairwise correlation coefficient."""
    std = np.asarray(std_mw, dtype=float)
    cov = correlation * np.outer(std, std)
    np.fill_diagonal(cov, std**2)
    return GaussianSpec(mean_mw=np.zeros_like(std), covariance_mw2=cov)


@dataclass(frozen=True)
class SampleSet:
    """N x m matrix of nodal disturbance samples in per unit.

    Columns for buses without an uncertainty source are exactly zero;
    downstream evaluation relies on that to skip them.
    """

    samples: np.ndarray
    seed: int
    source: object = field(compare=False, default=None)

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class MomentEstimate:
    """Mean, covariance, and a lower-triangular covariance factor, in pu.

    chol_factor satisfies chol @ chol.T = covariance on the support
    subspace, with exactly zero rows and columns elsewhere.
    """

    mean: np.ndarray
    covariance: np.ndarray
    chol_factor: np.ndarray

    def __post_init__(self):
        for name in ("mean", "covariance", "chol_factor"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def derive_seed(base: int, *path: int) -> int:
    """Deterministic child seed for a named stream position.

    The same (base, path) always maps to the same 64-bit seed, and
    distinct paths decorrelate, so replications and sample roles
    (tuning vs out-of-sample) can never collide.
    """
    ss = np.random.SeedSequence([int(base), *(int(p) for p in path)])
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _triangular_psd_factor(w: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L@L.T = V diag(w) Vᵀ, for eigenvalues w ≥ 0.

    The stock Cholesky rejects rank-deficient matrices, so build the
    eigenvector square root V·sqrt(w) first and re-triangularize it with
    a QR factorization (right-multiplying a square root by an orthogonal
    matrix leaves L·Lᵀ unchanged).
    """
    f = v * np.sqrt(w)
    r = np.linalg.qr(f.T, mode="r")
    l = r.T.copy()
    signs = np.sign(np.diag(l))
    signs[signs == 0.0] = 1.0
    l *= signs
    return l


def _repair_and_factor(cov: np.ndarray, reject_tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrize, clip tiny negative eigenvalues, factor.

    Returns (repaired covariance, lower-triangular factor). Raises
    ValueError when the matrix is indefinite beyond roundoff.
    """
    sym = 0.5 * (cov + cov.T)
    if sym.size == 0:
        return sym, sym.copy()
    support = np.flatnonzero(np.any(sym != 0.0, axis=0))
    repaired = np.zeros_like(sym)
    factor = np.zeros_like(sym)
    if support.size:
        sub = sym[np.ix_(support, support)]
        w, v = np.linalg.eigh(sub)
        scale = max(float(w.max(initial=0.0)), 0.0)
        if float(w.min()) < -(reject_tol * scale + 1e-300):
            raise ValueError(f"covariance has negative eigenvalue {w.min():.3e}")
        w = np.clip(w, 0.0, None)
        sub = (v * w) @ v.T
        sub = 0.5 * (sub + sub.T)
        repaired[np.ix_(support, support)] = sub
        factor[np.ix_(support, support)] = _triangular_psd_factor(w, v)
    return repaired, factor


def _draw_mw(spec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from spec in the uncertain-bus coordinate space (MW)."""
    if isinstance(spec, GaussianSpec):
        _, factor = _repair_and_factor(spec.covariance_mw2, _SPEC_PSD_TOL)
        z = rng.standard_normal((n, spec.dim))
        return spec.mean_mw + z @ factor.T
    if isinstance(spec, UniformBoxSpec):
        u = rng.random((n, spec.dim))
        return spec.lower_mw + u * (spec.upper_mw - spec.lower_mw)
    if isinstance(spec, MixtureSpec):
        weights = np.array([w for w, _ in spec.components])
        # Multinomial component assignment via one uniform per sample.
        edges = np.cumsum(weights)
        edges[-1] = 1.0
        labels = np.searchsorted(edges, rng.random(n), side="right")
        out = np.empty((n, spec.dim))
        for k, (_, comp) in enumerate(spec.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = _draw_mw(comp, idx.size, rng)
        return out
    raise TypeError(f"unknown distribution spec {type(spec).__name__}")


def sample(spec, n: int, seed: int, case) -> SampleSet:
    """Draw n disturbance vectors for the case's uncertain buses.

    Deterministic for fixed (spec, n, seed). The spec's dimension must
    equal the number of flagged buses; draws are converted MW -> pu and
    scattered into full-length nodal vectors.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    uncertain = case.uncertain_buses
    if spec.dim != len(uncertain):
        raise ValueError(
            f"spec dimension {spec.dim} does not match {len(uncertain)} uncertain buses"
        )
    draws = _draw_mw(spec, n, _rng(seed))
    full = np.zeros((n, case.n_buses))
    cols = [b - 1 for b in uncertain]
    if cols:
        full[:, cols] = draws / case.base_mva
    return SampleSet(samples=full, seed=seed, source=spec)


def empirical_moments(s: SampleSet) -> MomentEstimate:
    """Sample mean and unbiased (N-1) covariance of a sample set, in pu."""
    x = s.samples
    if x.shape[0] < 2:
        raise ValueError("need at least two samples for an unbiased covariance")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    cov, factor = _repair_and_factor(cov, _MOMENT_PSD_TOL)
    return MomentEstimate(mean=mean, covariance=cov, chol_factor=factor)


def _spec_moments_mw(spec) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(spec, GaussianSpec):
        return spec.mean_mw.copy(), spec.covariance_mw2.copy()
    if isinstance(spec, UniformBoxSpec):
        mean = 0.5 * (spec.lower_mw + spec.upper_mw)
        var = (spec.upper_mw - spec.lower_mw) ** 2 / 12.0
        return mean, np.diag(var)
    if isinstance(spec, MixtureSpec):
        mean = np.zeros(spec.dim)
        second = np.zeros((spec.dim, spec.dim))
        for w, comp in spec.components:
            mu, cov = _spec_moments_mw(comp)
            mean += w * mu
            second += w * (cov + np.outer(mu, mu))
        return mean, second - np.outer(mean, mean)
    raise TypeError(f"unknown distribution spec {type(spec).__name__}")


def spec_moments(spec, case) -> MomentEstimate:
    """Exact distribution moments embedded into the nodal space, in pu."""
    uncertain = case.uncertain_buses
    if spec.dim != len(uncertain):
        raise ValueError(
            f"spec dimension {spec.dim} does not match {len(uncertain)} uncertain buses"
        )
    mean_mw, cov_mw = _spec_moments_mw(spec)
    m = case.n_buses
    cols = [b - 1 for b in uncertain]
    mean = np.zeros(m)
    cov = np.zeros((m, m))
    if cols:
        mean[cols] = mean_mw / case.base_mva
        cov[np.ix_(cols, cols)] = cov_mw / case.base_mva**2
    cov, factor = _repair_and_factor(cov, _SPEC_PSD_TOL)
    return MomentEstimate(mean=mean, covariance=cov, chol_factor=factor)


def sensitivity_norm(a: np.ndarray, moments: MomentEstimate) -> float:
    """sqrt(a Σ aᵀ), evaluated as the Euclidean norm of a @ chol_factor."""
    a = np.asarray(a, dtype=float)
    if a.shape != (moments.chol_factor.shape[0],):
        raise ValueError(
            f"row length {a.shape} does not match moment dimension {moments.chol_factor.shape[0]}"
        )
    return float(np.linalg.norm(a @ moments.chol_factor))


def sampleset_to_csv(s: SampleSet, case) -> str:
    """One sample per row, columns = buses, MW units, 12 significant digits."""
    mw = s.samples * case.base_mva
    return "\n".join(",".join(f"{v:.12g}" for v in row) for row in mw) + "\n"


def sampleset_from_csv(text: str, case) -> SampleSet:
    """Parse a sample CSV (MW) back to a pu SampleSet.

    Columns of buses without an uncertainty source must be exactly zero;
    the evaluator's fast path depends on skipping them.
    """
    rows = [line for line in text.strip().splitlines() if line.strip()]
    mw = np.array([[float(v) for v in row.split(",")] for row in rows])
    if mw.ndim != 2 or mw.shape[1] != case.n_buses:
        raise ValueError(f"expected {case.n_buses} columns, got {mw.shape}")
    certain = [b.id - 1 for b in case.buses if not b.has_uncertainty]
    if certain and np.any(mw[:, certain] != 0.0):
        raise ValueError("nonzero disturbance at a bus without an uncertainty source")
    return SampleSet(samples=mw / case.base_mva, seed=-1, source=None)
