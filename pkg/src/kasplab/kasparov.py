"""Finite-level evidence for unbounded Kasparov modules.

Nothing here decides a KK class. The certificates record the standard
sufficient evidence: bounded commutators, decay of singular values of
localized resolvents, local compactness of differences of bounded transforms,
and the first of Kucerovsky's conditions. Every report is labelled a proxy.

Singular-value decay at a single resolution says little about truncations, so
every compactness verdict also demands stability under one grid refinement.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import ellipj, ellipk

from .operators import (AlgebraElement, SymOp, _as_sparse, anticommutator,
                        bandwidth_permutation, commutator, op_norm, to_banded)

TOP = 64
DECAY_THRESHOLD = 1e-2
DRIFT_LIMIT = 0.2
DENSE_LIMIT = 2001
EXACT_TOL = 1e-12
PROXY_NOTE = "proxy: finite-level evidence, not a decision about the continuum class"


class PreconditionError(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers

def add(D: SymOp, M) -> SymOp:
    """D + M for a Hermitian M given as SymOp, AlgebraElement or matrix."""
    if isinstance(M, AlgebraElement):
        Mm = M.matrix(D.copies)
    else:
        Mm = _as_sparse(M)
    if Mm.shape != D.matrix.shape:
        raise ValueError(f"shape mismatch {Mm.shape} vs {D.matrix.shape}")
    rebuild = None
    if D.rebuild is not None and hasattr(M, "on"):
        rebuild = lambda g: add(D.on(g), M.on(g))
    return SymOp(D.grid, D.matrix + Mm, graded=D.graded, clifford=D.clifford,
                 grading=D.grading,
                 descriptor={"kind": "sum", "terms": [D.descriptor,
                                                      getattr(M, "descriptor", {"kind": "matrix"})]},
                 rebuild=rebuild)


def _support(a: AlgebraElement, copies: int) -> tuple[np.ndarray, np.ndarray]:
    vals = np.tile(a.values, copies)
    idx = np.nonzero(vals)[0]
    return idx, vals[idx]


def _check_generator(a: AlgebraElement, D: SymOp) -> None:
    if a.grid != D.grid:
        raise PreconditionError("generator lives on a different grid")
    if a.compact_support_radius is None:
        raise PreconditionError("generator is not compactly supported")
    L = a.grid.half_width
    if a.compact_support_radius >= L or np.any(a.values[:2] != 0) or np.any(a.values[-2:] != 0):
        raise PreconditionError(
            f"generator support (radius {a.compact_support_radius}) touches the grid boundary |x| = {L}")


def _banded_solver(A: sp.csr_matrix):
    """Solver for a Hermitian positive definite sparse matrix."""
    perm, bw = bandwidth_permutation(A)
    if bw <= 64:
        B = A[perm][:, perm]
        ab = to_banded(B, bw)
        real = not np.any(ab.imag)
        if real:
            ab = ab.real
        cb = sla.cholesky_banded(ab, lower=False)

        def solve(rhs):
            r = rhs[perm]
            out = np.empty(rhs.shape, dtype=complex)
            if real and np.iscomplexobj(r):
                out[perm] = (sla.cho_solve_banded((cb, False), r.real) +
                             1j * sla.cho_solve_banded((cb, False), r.imag))
            else:
                out[perm] = sla.cho_solve_banded((cb, False), r)
            return out
        return solve
    lu = spla.splu(sp.csc_matrix(A))
    return lambda rhs: lu.solve(np.asarray(rhs, dtype=complex))


# --------------------------------------------------------------------------
# bounded transform

def _dense_transform(A: np.ndarray, cols: np.ndarray) -> np.ndarray:
    w, V = sla.eigh(A)
    return (V * (w / np.sqrt(1 + w * w))) @ V[cols].conj().T


class _ShiftedSquareSolver:
    """Solves (D^2 + c) X = B for many shifts c > 0, reusing one banded layout."""

    def __init__(self, A: sp.csr_matrix):
        D2 = (A @ A).tocsr()
        self.perm, self.bw = bandwidth_permutation(D2)
        n = D2.shape[0]
        if self.bw <= 64:
            ab = to_banded(D2[self.perm][:, self.perm], self.bw)
            self.real = not np.any(ab.imag)
            self.ab = ab.real if self.real else ab
        else:
            self.ab = None
            self.D2 = D2
            self.eye = sp.identity(n, format="csr")

    def __call__(self, c: float, rhs: np.ndarray) -> np.ndarray:
        if self.ab is None:
            return spla.splu(sp.csc_matrix(self.D2 + c * self.eye)).solve(rhs)
        ab = self.ab.copy()
        ab[self.bw] += c
        cb = sla.cholesky_banded(ab, lower=False, check_finite=False)
        r = rhs[self.perm]
        if self.real:
            sol = (sla.cho_solve_banded((cb, False), r.real, check_finite=False) +
                   1j * sla.cho_solve_banded((cb, False), r.imag, check_finite=False))
        else:
            sol = sla.cho_solve_banded((cb, False), r, check_finite=False)
        out = np.empty_like(sol)
        out[self.perm] = sol
        return out


def inverse_sqrt_rule(lo: float, hi: float, tol: float = 1e-10, max_nodes: int = 200):
    """Shifts c_j and weights w_j with sum_j w_j / (lam + c_j) ~ lam^{-1/2} on [lo, hi].

    Midpoint rule for lam^{-1/2} = (2/pi) int_0^inf dt / (lam + t^2) after the
    substitution t = sqrt(lo) sc(u | 1 - lo/hi), u in (0, K). The node count is
    the smallest that meets ``tol`` (relative) on a log-spaced sample of [lo, hi].
    """
    q = 1.0 - lo / hi
    K = ellipk(q)
    lam = np.geomspace(lo, hi, 2001)
    for N in range(4, max_nodes + 1):
        u = (np.arange(N) + 0.5) * K / N
        sn, cn, dn, _ = ellipj(u, q)
        shifts = lo * (sn / cn) ** 2
        weights = (2 * K * np.sqrt(lo) / (np.pi * N)) * dn / cn**2
        approx = (weights[None, :] / (lam[:, None] + shifts[None, :])).sum(axis=1)
        if np.max(np.abs(approx * np.sqrt(lam) - 1)) <= tol:
            return shifts, weights
    raise RuntimeError(f"inverse square root rule needs more than {max_nodes} nodes")


def bounded_transform(D, columns=None, method: str = "auto", tol: float = 1e-10) -> np.ndarray:
    """F = D (1 + D^2)^{-1/2}, or only its columns ``columns``.

    Up to size 2001 by eigendecomposition. Above that by a rational
    approximation (1 + D^2)^{-1/2} ~ sum_j w_j (1 + D^2 + c_j)^{-1} with
    relative error ``tol`` over the spectral interval [1, 1 + ||D||^2];
    one banded Cholesky solve per shift.
    """
    A = _as_sparse(D)
    n = A.shape[0]
    cols = np.arange(n) if columns is None else np.asarray(columns)
    if A.nnz == 0:
        return np.zeros((n, cols.size), dtype=complex)
    if method == "dense" or (method == "auto" and n <= DENSE_LIMIT):
        return _dense_transform(A.toarray(), cols)
    solver = _ShiftedSquareSolver(A)
    top = 1.0 + (op_norm(A) * (1 + 1e-8)) ** 2
    shifts, weights = inverse_sqrt_rule(1.0, top, tol)
    rhs = A[:, cols].toarray().astype(complex)
    F = np.zeros((n, cols.size), dtype=complex)
    for c, w in zip(shifts, weights):
        F += w * solver(1.0 + c, rhs)
    return F


# --------------------------------------------------------------------------
# compactness profiles

@dataclass(frozen=True)
class CompactnessProfile:
    singular_values: tuple
    ratio: float
    decay_verdict: bool
    refinement_stability: bool
    refined_ratio: float | None = None
    note: str = PROXY_NOTE

    def __post_init__(self):
        s = np.array(self.singular_values)
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise ValueError("singular values must be non-negative and non-increasing")

    def to_dict(self) -> dict:
        return {"singular_values": list(self.singular_values), "ratio": self.ratio,
                "refined_ratio": self.refined_ratio, "decay_verdict": self.decay_verdict,
                "refinement_stability": self.refinement_stability, "note": self.note}


def _top(s: np.ndarray, top: int = TOP) -> np.ndarray:
    s = np.sort(np.maximum(np.asarray(s, dtype=float), 0.0))[::-1][:top]
    if s.size < top:
        s = np.r_[s, np.zeros(top - s.size)]
    return s


def _ratio(s: np.ndarray) -> float:
    return 0.0 if s[0] == 0 else float(s[-1] / s[0])


def _drift(r1: float, r2: float) -> float:
    if r1 == 0 and r2 == 0:
        return 0.0
    return abs(r2 - r1) / max(abs(r1), 1e-300)


def resolvent_singular_values(D: SymOp, a: AlgebraElement, top: int = TOP,
                              chunk: int = 512) -> np.ndarray:
    """Top singular values of a (D + i)^{-1}; those of a (D - i)^{-1} are identical.

    Computed from the Gram matrix a (1 + D^2)^{-1} a*, restricted to supp a.
    """
    S, aS = _support(a, D.copies)
    n = D.size
    if S.size == 0:
        return np.zeros(top)
    solve = _banded_solver((D.matrix @ D.matrix + sp.identity(n, format="csr")).tocsr())
    block = np.empty((S.size, S.size), dtype=complex)
    for start in range(0, S.size, chunk):
        sl = slice(start, min(start + chunk, S.size))
        E = np.zeros((n, sl.stop - sl.start), dtype=complex)
        E[S[sl], np.arange(sl.stop - sl.start)] = 1.0
        block[:, sl] = solve(E)[S]
    G = (aS[:, None] * block) * np.conj(aS)[None, :]
    G = 0.5 * (G + G.conj().T)
    w = sla.eigvalsh(G, subset_by_index=[max(0, S.size - top), S.size - 1])
    return _top(np.sqrt(np.maximum(w, 0.0)), top)


@dataclass(frozen=True)
class KasparovCertificate:
    commutator_norms: dict
    local_compactness: dict
    grading_ok: bool
    overall: bool
    note: str = PROXY_NOTE

    def to_dict(self) -> dict:
        return {"commutator_norms": dict(self.commutator_norms),
                "local_compactness": {k: v.to_dict() for k, v in self.local_compactness.items()},
                "grading_ok": self.grading_ok, "overall": self.overall, "note": self.note}


def _grading_ok(D: SymOp) -> bool:
    if not D.graded:
        return True
    g = D.gamma
    return not (g @ D.matrix + D.matrix @ g).count_nonzero()


def certify_module(D: SymOp, generators, names=None, refine: bool = True,
                   threshold: float = DECAY_THRESHOLD) -> KasparovCertificate:
    """Bounded commutators and localized-resolvent decay for each generator.

    The decay verdict applies the threshold to the eigenvalues of
    a (1 + D^2)^{-1} a*, i.e. to the squared singular values of a (D +/- i)^{-1};
    both operators are compact together. The reported profile holds the
    singular values themselves.
    """
    generators = list(generators)
    names = list(names) if names is not None else [f"a{j}" for j in range(len(generators))]
    for a in generators:
        _check_generator(a, D)
    fine = None
    if refine:
        g2 = D.grid.refined()
        fine = (D.on(g2), [a.on(g2) for a in generators])
    comm, local = {}, {}
    for j, (name, a) in enumerate(zip(names, generators)):
        comm[name] = float(op_norm(commutator(D, a)))
        s = resolvent_singular_values(D, a)
        r = _ratio(s ** 2)
        if fine is not None:
            s2 = resolvent_singular_values(fine[0], fine[1][j])
            r2 = _ratio(s2 ** 2)
            stable = _drift(r, r2) <= DRIFT_LIMIT
        else:
            r2, stable = None, False
        local[name] = CompactnessProfile(tuple(float(v) for v in s), r, bool(r <= threshold),
                                         bool(stable), r2)
    grading = _grading_ok(D)
    overall = (all(np.isfinite(v) for v in comm.values()) and grading and
               all(p.decay_verdict and p.refinement_stability for p in local.values()))
    return KasparovCertificate(comm, local, grading, bool(overall))


# --------------------------------------------------------------------------
# stability under locally bounded perturbations

def _difference_singular_values(D: SymOp, M, a: AlgebraElement, top: int = TOP,
                                method: str = "auto") -> np.ndarray:
    S, aS = _support(a, D.copies)
    DM = add(D, M)
    F1 = bounded_transform(DM, S, method=method)
    F0 = bounded_transform(D, S, method=method)
    # singular values of a (F1 - F0) equal those of its adjoint (F1 - F0)[:, S] a_S*
    X = (F1 - F0) * np.conj(aS)[None, :]
    return _top(sla.svdvals(X), top)


def _is_zero(M, D: SymOp) -> bool:
    if isinstance(M, AlgebraElement):
        return not np.any(M.values)
    return _as_sparse(M).count_nonzero() == 0


def perturbation_class_check(D: SymOp, M, a: AlgebraElement, refine: bool = True,
                             threshold: float = DECAY_THRESHOLD,
                             method: str = "auto") -> CompactnessProfile:
    """Singular-value profile of a (F_{D+M} - F_D) with decay and refinement verdicts."""
    _check_generator(a, D)
    if _is_zero(M, D):
        zeros = tuple(0.0 for _ in range(TOP))
        return CompactnessProfile(zeros, 0.0, True, True, 0.0 if refine else None)
    s = _difference_singular_values(D, M, a, method=method)
    r = _ratio(s)
    r2, stable = None, False
    if refine:
        g2 = D.grid.refined()
        s2 = _difference_singular_values(D.on(g2), M.on(g2), a.on(g2), method=method)
        r2 = _ratio(s2)
        stable = _drift(r, r2) <= DRIFT_LIMIT
    return CompactnessProfile(tuple(float(v) for v in s), r, bool(r <= threshold),
                              bool(stable), r2)


def kucerovsky_block(D: SymOp, M, a: AlgebraElement) -> sp.csr_matrix:
    """[[0, [D, a] + M a], [[D, a*] - a* M, 0]]."""
    Mm = M.matrix(D.copies) if isinstance(M, AlgebraElement) else _as_sparse(M)
    A = a.matrix(D.copies)
    As = A.conj().T
    upper = commutator(D, A) + Mm @ A
    lower = commutator(D, As) - As @ Mm
    return sp.bmat([[None, upper], [lower, None]], format="csr")


def kucerovsky_condition1(D: SymOp, M, a: AlgebraElement) -> float:
    return float(op_norm(kucerovsky_block(D, M, a)))


# --------------------------------------------------------------------------
# even -> odd reduction

@dataclass(frozen=True, eq=False)
class Reduction:
    tilD_prime: SymOp
    tilM: SymOp
    anticommutation_residual: float
    decomposition_residual: float

    def to_dict(self) -> dict:
        return {"anticommutation_residual": self.anticommutation_residual,
                "decomposition_residual": self.decomposition_residual,
                "tilM_nnz": int(self.tilM.matrix.count_nonzero())}


def reduce_even_to_odd(tilD: SymOp) -> Reduction:
    """Split tilD into the part anticommuting with e and the part commuting with it."""
    if tilD.clifford is None:
        raise PreconditionError("operator carries no Clifford action")
    e = tilD.clifford
    A = tilD.matrix
    eAe = (e @ A @ e).tocsr()
    Dp = 0.5 * (A - eAe)
    Mp = 0.5 * (A + eAe)
    prime = SymOp(tilD.grid, Dp, graded=tilD.graded, clifford=e, grading=tilD.grading,
                  descriptor={"kind": "block", "construction": "anticommuting_part"})
    tilM = SymOp(tilD.grid, Mp, graded=tilD.graded, clifford=e, grading=tilD.grading,
                 descriptor={"kind": "block", "construction": "commuting_part"})
    residual = float(op_norm(anticommutator(Dp, e)))
    gap = abs(Dp + Mp - A)
    decomp = float(gap.max()) if gap.nnz else 0.0
    if residual > EXACT_TOL or decomp > EXACT_TOL * max(1.0, float(abs(A).max() if A.nnz else 0)):
        raise ArithmeticError(f"reduction residuals too large: {residual:.3e}, {decomp:.3e}")
    return Reduction(prime, tilM, residual, decomp)
