"""Hermitian discretisations of first- and second-order model operators on a
grid, their Clifford doublings, and the norm/commutator utilities used by the
certifiers.

Conventions (fixed everywhere):

* doubled spaces are ordered ``[upper block; lower block]``;
* grading ``gamma = diag(1, -1)`` and Clifford generator ``e = [[0, 1], [1, 0]]``
  in that block order;
* an even operator is stored as ``[[0, D_minus], [D_plus, 0]]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .funcspace import Grid, GridFunction, sample

# entries are compared exactly; this is only for user-supplied pairs
ADJOINT_TOL = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class SymOp:
    grid: Grid
    matrix: sp.csr_matrix = field(repr=False)
    graded: bool = False
    clifford: sp.csr_matrix | None = field(default=None, repr=False)
    descriptor: dict = field(default_factory=dict)
    # rebuilds the same continuum operator on another grid (refinement checks)
    rebuild: Callable[[Grid], "SymOp"] | None = field(default=None, repr=False, compare=False)
    # explicit grading operator; defaults to diag(1, -1) over the two halves
    grading: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.shape[0] != m.shape[1] or m.shape[0] % self.grid.n_points:
            raise ValueError(f"matrix shape {m.shape} incompatible with {self.grid}")
        if (m - m.conj().T).count_nonzero():
            raise ValueError("matrix is not exactly Hermitian")
        object.__setattr__(self, "matrix", m)
        if self.graded and self.copies % 2:
            raise ValueError("a graded operator needs an even number of grid copies")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def copies(self) -> int:
        return self.size // self.grid.n_points

    @property
    def gamma(self) -> sp.csr_matrix:
        if not self.graded:
            raise ValueError("operator is ungraded")
        if self.grading is not None:
            return self.grading
        half = self.size // 2
        return sp.diags(np.r_[np.ones(half), -np.ones(half)]).tocsr()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def on(self, grid: Grid) -> "SymOp":
        if self.rebuild is None:
            raise ValueError(f"{self.descriptor.get('kind', 'operator')} cannot be rebuilt on a new grid")
        return self.rebuild(grid)


@dataclass(frozen=True, eq=False)
class AlgebraElement:
    """Pointwise multiplication by a sampled function."""
    grid: Grid
    values: np.ndarray = field(repr=False)
    compact_support_radius: float | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.grid.n_points,):
            raise ValueError("values do not match the grid")
        if np.iscomplexobj(vals) and np.all(vals.imag == 0):
            vals = vals.real
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, f, grid: Grid, compact_support_radius=None) -> "AlgebraElement":
        return cls(grid, sample(f, grid).values, compact_support_radius, f)

    def matrix(self, copies: int = 1) -> sp.csr_matrix:
        return sp.diags(np.tile(self.values, copies)).tocsr()

    def on(self, grid: Grid) -> "AlgebraElement":
        if self.func is None:
            raise ValueError("algebra element has no generating function")
        return AlgebraElement.from_function(self.func, grid, self.compact_support_radius)

    def adjoint(self) -> "AlgebraElement":
        f = self.func
        g = None if f is None else (lambda x: np.conj(f(x)))
        return AlgebraElement(self.grid, np.conj(self.values), self.compact_support_radius, g)


def bump(radius: float, center: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth compactly supported bump, cos^2 profile, support |x - center| < radius."""
    def f(x):
        y = (np.asarray(x, dtype=float) - center) / radius
        return np.where(np.abs(y) < 1, np.cos(0.5 * np.pi * y) ** 2, 0.0)
    f.__name__ = f"bump(r={radius}, c={center})"
    return f


def bump_element(grid: Grid, radius: float, center: float = 0.0) -> AlgebraElement:
    return AlgebraElement.from_function(bump(radius, center), grid,
                                        compact_support_radius=abs(center) + radius)


# --------------------------------------------------------------------------
# constructors

def _potential_values(grid: Grid, f) -> tuple[np.ndarray, Any]:
    if f is None:
        return np.zeros(grid.n_points), None
    if isinstance(f, GridFunction):
        if f.grid != grid:
            raise ValueError("potential lives on a different grid")
        vals = f.values
        src = None
    else:
        vals = sample(f, grid).values
        src = f
    if np.any(vals.imag != 0):
        raise ValueError("potential must be real-valued")
    return vals.real, src


def _describe(f) -> str | None:
    if f is None:
        return "0"
    return getattr(f, "expr", None) or getattr(f, "__name__", None) or repr(f)


def derivative(grid: Grid, scheme: str = "central") -> sp.csr_matrix:
    """Real difference matrix for d/dx with Dirichlet truncation.

    ``central`` is antisymmetric; ``forward`` and ``backward`` satisfy
    ``forward.T == -backward``.
    """
    n, h = grid.n_points, grid.spacing
    e = np.ones(n - 1)
    if scheme == "central":
        m = sp.diags([e / (2 * h), -e / (2 * h)], [1, -1])
    elif scheme == "forward":
        m = sp.diags([-np.ones(n) / h, e / h], [0, 1])
    elif scheme == "backward":
        m = sp.diags([np.ones(n) / h, -e / h], [0, -1])
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return m.tocsr()


def multiplication(grid: Grid, f) -> SymOp:
    vals, src = _potential_values(grid, f)
    return SymOp(grid, sp.diags(vals.astype(complex)).tocsr(),
                 descriptor={"kind": "multiplication", "potential": _describe(f)},
                 rebuild=None if src is None else (lambda g: multiplication(g, src)))


def first_order(grid: Grid, f=None) -> SymOp:
    """Central-difference i d/dx plus multiplication by a real potential."""
    vals, src = _potential_values(grid, f)
    mat = 1j * derivative(grid, "central") + sp.diags(vals)
    rebuild = (lambda g: first_order(g, src)) if (src is not None or f is None) else None
    return SymOp(grid, mat, descriptor={"kind": "first_order", "potential": _describe(f)},
                 rebuild=rebuild)


def schrodinger(grid: Grid, V=None) -> SymOp:
    """Three-point -d^2/dx^2 plus a real potential."""
    vals, src = _potential_values(grid, V)
    n, h = grid.n_points, grid.spacing
    e = np.ones(n - 1)
    lap = sp.diags([-e, 2 * np.ones(n), -e], [-1, 0, 1]) / h**2
    rebuild = (lambda g: schrodinger(g, src)) if (src is not None or V is None) else None
    return SymOp(grid, lap + sp.diags(vals),
                 descriptor={"kind": "schrodinger", "potential": _describe(V)},
                 rebuild=rebuild)


def clifford_generator(n: int) -> sp.csr_matrix:
    eye = sp.identity(n, format="csr")
    return sp.bmat([[None, eye], [eye, None]]).tocsr().astype(complex)


def double_odd(D: SymOp) -> SymOp:
    """[[0, -iD], [iD, 0]] with gamma = diag(1, -1) and e = [[0, 1], [1, 0]]."""
    if D.graded:
        raise ValueError("double_odd expects an ungraded operator")
    A = D.matrix
    mat = sp.bmat([[None, -1j * A], [1j * A, None]], format="csr")
    rebuild = None if D.rebuild is None else (lambda g: double_odd(D.on(g)))
    return SymOp(D.grid, mat, graded=True, clifford=clifford_generator(D.size),
                 descriptor={"kind": "block", "construction": "double_odd",
                             "inner": D.descriptor},
                 rebuild=rebuild)


def _as_sparse(M) -> sp.csr_matrix:
    if isinstance(M, SymOp):
        return M.matrix
    return sp.csr_matrix(M, dtype=complex)


def assemble_even(Dplus, Dminus, grid: Grid, descriptor: dict | None = None) -> SymOp:
    """[[0, Dminus], [Dplus, 0]]; requires Dminus to be the adjoint of Dplus."""
    P, Mi = _as_sparse(Dplus), _as_sparse(Dminus)
    if P.shape != Mi.shape:
        raise ValueError("block shapes differ")
    gap = abs(Mi - P.conj().T)
    mismatch = gap.max() if gap.nnz else 0.0
    if mismatch > ADJOINT_TOL:
        raise ValueError(f"Dminus is not the adjoint of Dplus (mismatch {mismatch:.3e})")
    # the tolerance admits rounding noise; store the exact adjoint
    mat = sp.bmat([[None, P.conj().T], [P, None]], format="csr")
    n = P.shape[0]
    return SymOp(grid, mat, graded=True, clifford=clifford_generator(n),
                 descriptor=descriptor or {"kind": "block", "construction": "assemble_even"})


def even_blocks(tilD: SymOp) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Return (D_plus, D_minus) of a graded operator [[0, D_minus], [D_plus, 0]]."""
    if not tilD.graded:
        raise ValueError("operator is ungraded")
    h = tilD.size // 2
    A = tilD.matrix
    if A[:h, :h].count_nonzero() or A[h:, h:].count_nonzero():
        raise ValueError("graded operator has even (diagonal-block) part")
    return A[h:, :h].tocsr(), A[:h, h:].tocsr()


def split_even(tilD: SymOp) -> tuple[SymOp, SymOp]:
    """D = -(i/2)(D_plus - D_minus),  M = (1/2)(D_plus + D_minus)."""
    Dp, Dm = even_blocks(tilD)
    D = -0.5j * (Dp - Dm)
    M = 0.5 * (Dp + Dm)
    # both are Hermitian up to rounding; symmetrise so SymOp accepts them exactly
    D = 0.5 * (D + D.conj().T)
    M = 0.5 * (M + M.conj().T)
    return (SymOp(tilD.grid, D, descriptor={"kind": "block", "construction": "split_even.D"}),
            SymOp(tilD.grid, M, descriptor={"kind": "block", "construction": "split_even.M"}))


def graded_tensor_double(D: SymOp, M) -> SymOp:
    """D (x)^ 1 + M (x)^ e on E (x) C^2, C^2 graded diag(1, -1).

    Koszul sign rule: (S (x)^ T)(v (x) w) = (-1)^{|T||v|} Sv (x) Tw. With M even
    and e odd this gives M (x)^ e = (M gamma0) (x) e, so the operator is

        [[D,          M gamma0],
         [M gamma0,   D       ]]

    graded by diag(gamma0, -gamma0). Worked 4x4 case, D = [[0, d], [d*, 0]],
    gamma0 = diag(1, -1), M = m*1:

        [[0,  d,  m,  0],
         [d*, 0,  0, -m],
         [m,  0,  0,  d],
         [0, -m,  d*, 0]]

    whose square is (|d|^2 + m^2) * 1, since {D (x) 1, M gamma0 (x) e} = [D, M] gamma0 (x) e = 0.
    """
    if not D.graded:
        raise ValueError("graded_tensor_double needs a graded operator")
    if isinstance(M, AlgebraElement):
        if M.grid != D.grid:
            raise ValueError("grid mismatch")
        Mm = M.matrix(D.copies)
    elif isinstance(M, SymOp):
        if M.grid != D.grid:
            raise ValueError("grid mismatch")
        Mm = M.matrix
        if M.size == D.size // 2:
            Mm = sp.block_diag([Mm, Mm]).tocsr()
    else:
        Mm = _as_sparse(M)
    if Mm.shape != D.matrix.shape:
        raise ValueError(f"shape mismatch {Mm.shape} vs {D.matrix.shape}")
    g0 = D.gamma
    if (g0 @ Mm - Mm @ g0).count_nonzero():
        raise ValueError("M must be even with respect to the grading")
    if (Mm - Mm.conj().T).count_nonzero():
        raise ValueError("M must be Hermitian")
    Mg = (Mm @ g0).tocsr()
    mat = sp.bmat([[D.matrix, Mg], [Mg, D.matrix]], format="csr")
    rebuild = None
    if D.rebuild is not None and isinstance(M, (SymOp, AlgebraElement)) and (
            isinstance(M, AlgebraElement) and M.func is not None or
            isinstance(M, SymOp) and M.rebuild is not None):
        rebuild = lambda g: graded_tensor_double(D.on(g), M.on(g))
    return SymOp(D.grid, mat, graded=True, grading=sp.block_diag([g0, -g0]).tocsr(),
                 descriptor={"kind": "block", "construction": "graded_tensor_double",
                             "inner": D.descriptor},
                 rebuild=rebuild)


def reflect(op: SymOp) -> SymOp:
    """Conjugate by the grid reflection x -> -x (applied blockwise)."""
    n = op.grid.n_points
    P = sp.block_diag([sp.csr_matrix(np.eye(n)[::-1])] * op.copies).tocsr()
    mat = (P @ op.matrix @ P).tocsr()
    rebuild = None if op.rebuild is None else (lambda g: reflect(op.on(g)))
    grading = None if op.grading is None else (P @ op.grading @ P).tocsr()
    return SymOp(op.grid, mat, graded=op.graded, clifford=op.clifford, grading=grading,
                 descriptor={"kind": op.descriptor.get("kind", "block"), "reflected": op.descriptor},
                 rebuild=rebuild)


def reflect_element(a: AlgebraElement) -> AlgebraElement:
    f = a.func
    g = None if f is None else (lambda x: f(-np.asarray(x)))
    return AlgebraElement(a.grid, a.values[::-1], a.compact_support_radius, g)


# --------------------------------------------------------------------------
# commutators and norms

def _algebra_matrix(a, size: int) -> sp.csr_matrix:
    if isinstance(a, AlgebraElement):
        n = a.grid.n_points
        if size % n:
            raise ValueError(f"size {size} is not a multiple of the grid size {n}")
        return a.matrix(size // n)
    m = _as_sparse(a)
    if m.shape != (size, size):
        raise ValueError(f"size mismatch: {m.shape} vs {(size, size)}")
    return m


def commutator(T, a) -> sp.csr_matrix:
    A = _as_sparse(T)
    B = _algebra_matrix(a, A.shape[0])
    return (A @ B - B @ A).tocsr()


def anticommutator(T, a) -> sp.csr_matrix:
    A = _as_sparse(T)
    B = _algebra_matrix(a, A.shape[0])
    return (A @ B + B @ A).tocsr()


def _compress(A: sp.csr_matrix) -> sp.csr_matrix:
    """Restrict to rows/columns that carry nonzeros (norm-preserving)."""
    A = A.tocsr()
    A.eliminate_zeros()
    rows = np.unique(A.nonzero()[0])
    cols = np.unique(A.nonzero()[1])
    if A.shape[0] == A.shape[1]:
        idx = np.union1d(rows, cols)
        return A[idx][:, idx]
    return A[rows][:, cols]


def bandwidth_permutation(A: sp.spmatrix) -> tuple[np.ndarray, int]:
    """Reverse Cuthill-McKee ordering of a square matrix and its bandwidth."""
    A = sp.csr_matrix(A)
    pattern = (abs(A) + abs(A).T).tocsr()
    perm = reverse_cuthill_mckee(pattern, symmetric_mode=True)
    P = pattern[perm][:, perm].tocoo()
    bw = int(np.max(np.abs(P.row - P.col))) if P.nnz else 0
    return perm, bw


def to_banded(H: sp.spmatrix, bw: int) -> np.ndarray:
    """Upper banded storage (LAPACK 'u' layout) of a Hermitian matrix."""
    H = sp.dia_matrix(H)
    n = H.shape[0]
    ab = np.zeros((bw + 1, n), dtype=complex)
    Hc = sp.csr_matrix(H)
    for k in range(bw + 1):
        ab[bw - k, k:] = Hc.diagonal(k)
    return ab


def _hermitian_part_kind(A: sp.csr_matrix) -> str | None:
    if not (A - A.conj().T).count_nonzero():
        return "hermitian"
    if not (A + A.conj().T).count_nonzero():
        return "skew"
    return None


def _power_norm(A: sp.csr_matrix, tol: float, maxiter: int) -> float:
    n = A.shape[1]
    v = np.random.default_rng(0).standard_normal(n) + 0j
    v /= np.linalg.norm(v)
    sigma = 0.0
    residual = np.inf
    for _ in range(maxiter):
        w = A.conj().T @ (A @ v)
        lam = np.vdot(v, w).real
        residual = np.linalg.norm(w - lam * v)
        new = np.sqrt(max(lam, 0.0))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        # the residual bounds the eigenvalue error; a small change in sigma alone
        # does not when the top of the spectrum is clustered
        if residual <= tol * max(lam, np.finfo(float).tiny) and abs(new - sigma) <= tol * new:
            return float(new)
        sigma = new
    raise ConvergenceError(f"power iteration did not converge in {maxiter} iterations",
                           residual)


def op_norm(T, tol: float = 1e-10, maxiter: int = 10_000, method: str = "auto",
            dense_limit: int = 256) -> float:
    """Largest singular value.

    ``auto``: after restricting to the active rows/columns, small blocks use a
    dense SVD, (skew-)Hermitian blocks with a narrow reordered band use a
    banded LAPACK eigensolver for the extreme eigenvalues, anything else uses
    power iteration on T*T.
    """
    if isinstance(T, np.ndarray) and T.ndim == 2:
        A = sp.csr_matrix(T.astype(complex))
    else:
        A = _as_sparse(T)
    A = _compress(A)
    if A.shape[0] == 0 or A.shape[1] == 0:
        return 0.0
    if method == "power":
        return _power_norm(A, tol, maxiter)
    if method == "dense" or (method == "auto" and min(A.shape) <= dense_limit):
        return float(np.linalg.norm(A.toarray(), 2))
    kind = _hermitian_part_kind(A) if A.shape[0] == A.shape[1] else None
    if kind is not None:
        perm, bw = bandwidth_permutation(A)
        if bw <= 64:
            H = A[perm][:, perm]
            if kind == "skew":
                H = (-1j * H).tocsr()
            ab = to_banded(H, bw)
            n = H.shape[0]
            lo = sla.eig_banded(ab, eigvals_only=True, select="i", select_range=(0, 0))
            hi = sla.eig_banded(ab, eigvals_only=True, select="i", select_range=(n - 1, n - 1))
            return float(max(abs(lo[0]), abs(hi[0])))
    if method == "banded":
        raise ValueError("matrix is not (skew-)Hermitian with a narrow band")
    return _power_norm(A, tol, maxiter)


def spectrum_window(H, lo: float, hi: float, vectors: bool = False):
    """Eigenvalues of a Hermitian matrix in (lo, hi], optionally with eigenvectors.

    Narrow-band matrices (after reverse Cuthill-McKee) go through LAPACK's
    banded bisection/inverse iteration; others through a dense solver.
    """
    A = _as_sparse(H)
    perm, bw = bandwidth_permutation(A)
    n = A.shape[0]
    if bw <= 64 and n > 64:
        B = A[perm][:, perm]
        ab = to_banded(B, bw)
        if np.all(ab.imag == 0):
            ab = ab.real
        out = sla.eig_banded(ab, eigvals_only=not vectors, select="v",
                             select_range=(lo, hi))
        if not vectors:
            return np.sort(out)
        w, V = out
        Vo = np.empty_like(V)
        Vo[perm] = V
        return w, Vo
    dense = A.toarray()
    if vectors:
        w, V = sla.eigh(dense)
        keep = (w > lo) & (w <= hi)
        return w[keep], V[:, keep]
    w = sla.eigvalsh(dense)
    return w[(w > lo) & (w <= hi)]


def eigenvalues(op, subset: Sequence[int] | None = None) -> np.ndarray:
    """All (or an index range of) eigenvalues of a Hermitian operator, ascending."""
    A = _as_sparse(op)
    if subset is None:
        return sla.eigvalsh(A.toarray())
    return sla.eigvalsh(A.toarray(), subset_by_index=list(subset))


def upwind_pair(grid: Grid, f=None) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(D_plus, D_minus) = (d_forward + f, -d_backward + f); D_minus = D_plus^T.

    Assembled with :func:`assemble_even` this is a doubler-free discretisation
    of [[0, -d + f], [d + f, 0]]: the lower block is upper bidiagonal.
    """
    vals, _ = _potential_values(grid, f)
    Dp = (derivative(grid, "forward") + sp.diags(vals)).tocsr()
    Dm = (-derivative(grid, "backward") + sp.diags(vals)).tocsr()
    return Dp, Dm


def smallest_singular_values(B, count: int) -> np.ndarray:
    """The ``count`` smallest singular values of a sparse square matrix, ascending."""
    B = _as_sparse(B)
    n = B.shape[0]
    count = min(count, n)
    C = (B.conj().T @ B).tocsr()
    perm, bw = bandwidth_permutation(C)
    Cp = C[perm][:, perm]
    if bw == 1 and not np.any(Cp.diagonal(1).imag):
        w = sla.eigvalsh_tridiagonal(Cp.diagonal().real, Cp.diagonal(1).real,
                                     select="i", select_range=(0, count - 1))
    elif bw <= 64 and n > 64:
        ab = to_banded(Cp, bw)
        if not np.any(ab.imag):
            ab = ab.real
        w = sla.eig_banded(ab, eigvals_only=True, select="i", select_range=(0, count - 1))
    else:
        w = sla.eigvalsh(C.toarray(), subset_by_index=[0, count - 1])
    return np.sqrt(np.maximum(np.sort(w), 0.0))


def even_spectrum(tilD: SymOp, count: int) -> np.ndarray:
    """Smallest ``count`` non-negative eigenvalues of [[0, D_minus], [D_plus, 0]]
    (the spectrum is symmetric: these are the singular values of D_plus)."""
    Dp, _ = even_blocks(tilD)
    return smallest_singular_values(Dp, count)
