"""Cutoff approximate identities phi_k = chi(rho / k) and the commutator
bounds that make them adequate for a given operator.

Everything here is finite-dimensional: a commutator of two matrices is always
bounded, so "adequate" means a uniform bound with the expected decay, never a
statement about the continuum operator. Domain conditions are recorded as
structurally satisfied; self-adjointness itself is certified on the continuum
by :mod:`kasplab.deficiency`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .funcspace import Grid
from .operators import AlgebraElement, SymOp, _as_sparse, commutator, op_norm


class ProfileError(ValueError):
    pass


def plateau(smoothing: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """1 on [0, 1], linear down to 0 on [1, 2], optionally box-mollified.

    Box averaging over a window of width ``smoothing`` keeps 0 <= chi <= 1 and
    |chi'| <= 1 and rounds the two corners.
    """
    if not 0 <= smoothing < 1:
        raise ProfileError("smoothing width must lie in [0, 1)")
    w = float(smoothing)

    def chi(s):
        s = np.abs(np.asarray(s, dtype=float))
        if w == 0:
            return np.clip(2.0 - s, 0.0, 1.0)
        # box average of the ramp in closed form: quadratic corners of width w
        # joined by the linear piece (w < 1 keeps the corners apart)
        lo, hi = 1.0 - w / 2, 2.0 + w / 2
        shape = s.shape
        out = np.atleast_1d(np.clip(2.0 - s, 0.0, 1.0))
        s = np.atleast_1d(s)
        upper = (s > lo) & (s < 1.0 + w / 2)
        lower = (s > 2.0 - w / 2) & (s < hi)
        out[upper] = 1.0 - (s[upper] - lo) ** 2 / (2 * w)
        out[lower] = (hi - s[lower]) ** 2 / (2 * w)
        return out.reshape(shape)

    chi.__name__ = f"plateau(smoothing={w:g})"
    chi.smoothing = w
    chi.support = 2.0 + w / 2
    chi.flat = 1.0 - w / 2
    return chi


def default_rho(x):
    """sqrt(x^2 + 1) - 1: smooth, proper, |rho'| <= 1, rho(0) = 0."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(x * x + 1.0) - 1.0


def abs_rho(x):
    return np.abs(np.asarray(x, dtype=float))


def validate_profile(chi, samples: int = 20001, span: float = 4.0) -> None:
    s = np.linspace(0.0, span, samples)
    v = np.asarray(chi(s), dtype=float)
    if not np.all(np.isfinite(v)):
        raise ProfileError("profile is not finite")
    if v.min() < 0 or v.max() > 1:
        raise ProfileError(f"profile leaves [0, 1]: range [{v.min():.3g}, {v.max():.3g}]")
    if abs(float(chi(np.array([0.0]))[0]) - 1.0) > 0:
        raise ProfileError("profile must equal 1 at 0")
    slope = np.max(np.abs(np.diff(v))) / (s[1] - s[0])
    if slope > 1 + 1e-6:
        raise ProfileError(f"profile slope {slope:.6g} exceeds 1")


@dataclass(frozen=True, eq=False)
class CutoffFamily:
    grid: Grid
    profile: Callable = field(repr=False)
    rho: Callable = field(repr=False)
    indices: tuple
    realized: tuple = field(repr=False)

    def __getitem__(self, k: int) -> AlgebraElement:
        return self.realized[self.indices.index(k)]

    def __len__(self):
        return len(self.indices)

    def on(self, grid: Grid) -> "CutoffFamily":
        return cutoff_family(self.profile, self.rho, self.indices, grid)


def cutoff_family(chi=None, rho=None, ks: Sequence[int] = (1, 2, 4, 8),
                  grid: Grid | None = None) -> CutoffFamily:
    """Sample phi_k = chi(rho / k) on ``grid``.

    Default ``chi`` is the plateau mollified over 4 grid spacings (in profile
    units), default ``rho`` is :func:`default_rho`.
    """
    if grid is None:
        raise ValueError("grid is required")
    if chi is None:
        chi = plateau(min(4 * grid.spacing, 0.5))
    rho = default_rho if rho is None else rho
    validate_profile(chi)
    ks = tuple(int(k) for k in ks)
    if any(k <= 0 for k in ks):
        raise ValueError("indices must be positive integers")
    x = grid.nodes
    r = np.asarray(rho(x), dtype=float)
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("rho must be finite and non-negative")
    support = getattr(chi, "support", None)
    realized = []
    for k in ks:
        vals = np.asarray(chi(r / k), dtype=float)
        radius = None
        if support is not None:
            inside = x[r / k < support]
            radius = float(np.max(np.abs(inside))) if inside.size else 0.0
        f = (lambda kk: (lambda y: chi(np.asarray(rho(y), dtype=float) / kk)))(k)
        realized.append(AlgebraElement(grid, vals, radius, f))
    return CutoffFamily(grid, chi, rho, ks, tuple(realized))


@dataclass(frozen=True)
class AdequacyReport:
    indices: tuple
    commutator_norms: tuple
    sup_bound: float
    decay_constant: float
    decay_verdict: bool
    domain_check: bool = True
    note: str = ("finite-level proxy: commutators of matrices are always bounded; "
                 "domain conditions hold structurally, self-adjointness is "
                 "certified on the continuum")

    def scaled(self) -> np.ndarray:
        """k * c_k for each index."""
        return np.array(self.indices) * np.array(self.commutator_norms)

    def to_dict(self) -> dict:
        return {"indices": list(self.indices),
                "commutator_norms": list(self.commutator_norms),
                "sup_bound": self.sup_bound,
                "decay_constant": self.decay_constant,
                "decay_verdict": self.decay_verdict,
                "domain_check": self.domain_check,
                "note": self.note}


def _check_grid(D, F: CutoffFamily):
    if isinstance(D, SymOp) and D.grid != F.grid:
        raise ValueError("grid mismatch between operator and cutoff family")


def certify_adequate(D, F: CutoffFamily) -> AdequacyReport:
    _check_grid(D, F)
    c = tuple(float(op_norm(commutator(D, phi))) for phi in F.realized)
    ks = np.array(F.indices, dtype=float)
    cs = np.array(c)
    sup = float(cs.max()) if cs.size else 0.0
    const = float(np.max(ks * cs)) if cs.size else 0.0
    if cs.size == 0 or np.all(cs == 0):
        verdict = bool(np.all(np.isfinite(cs)))
    else:
        # c_k <= C / k: the last norm must not exceed the first scaled by k_first / k_last
        order = np.argsort(ks)
        first, last = order[0], order[-1]
        verdict = bool(np.all(np.isfinite(cs)) and
                       cs[last] <= cs[first] * ks[first] / ks[last] * 1.25)
    return AdequacyReport(F.indices, c, sup, const, verdict)


@dataclass(frozen=True)
class LocalBoundReport:
    indices: tuple
    truncated_norms: tuple
    commutator_norms: tuple
    uniform_comm_bound: float

    def to_dict(self) -> dict:
        return {"indices": list(self.indices),
                "truncated_norms": list(self.truncated_norms),
                "commutator_norms": list(self.commutator_norms),
                "uniform_comm_bound": self.uniform_comm_bound}


def certify_locally_bounded(M, F: CutoffFamily) -> LocalBoundReport:
    """Norms of M phi_k and [M, phi_k] over the family."""
    _check_grid(M, F)
    A = _as_sparse(M)
    copies = A.shape[0] // F.grid.n_points
    trunc, comm = [], []
    for phi in F.realized:
        P = phi.matrix(copies)
        trunc.append(float(op_norm(A @ P)))
        comm.append(float(op_norm(commutator(A, P))))
    bound = max(comm) if comm else 0.0
    return LocalBoundReport(F.indices, tuple(trunc), tuple(comm), float(bound))
