"""Finite-dimensional Hilbert modules E = B^n over B = M_{d_1} + ... + M_{d_r}.

Every irreducible representation of B is one of the blocks, so statements
quantified over all localizations become finite checks. Closures, domains and
regularity are automatic here; the battery confirms formulas, not analysis.

Layout: a vector u in E is stored block by block, block i as an
(n d_i) x d_i matrix (the n entries of u stacked), flattened row-major and
concatenated. Module operators are matrices on that flat space; a B-linear
operator acts on block i as L_i (x) 1, where L_i is its localization.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TOL = 1e-12
NOTE = "finite-dimensional: regularity automatic"


class NotModuleMapError(ValueError):
    pass


class BatteryFailure(AssertionError):
    def __init__(self, identity: str, instance: dict, error: float):
        super().__init__(f"{identity} failed with error {error:.3e}")
        self.identity = identity
        self.instance = instance
        self.error = error


@dataclass(frozen=True)
class FiniteAlgebra:
    block_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"invalid block dimensions {self.block_dims}")
        object.__setattr__(self, "block_dims", dims)

    def random_element(self, rng, hermitian: bool = False) -> list[np.ndarray]:
        out = []
        for d in self.block_dims:
            b = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
            out.append(0.5 * (b + b.conj().T) if hermitian else b)
        return out


@dataclass(frozen=True)
class FiniteModule:
    algebra: FiniteAlgebra
    rank: int

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ValueError("rank must be at least 1")

    @property
    def block_dims(self) -> tuple:
        return self.algebra.block_dims

    @property
    def dim(self) -> int:
        return sum(self.rank * d * d for d in self.block_dims)

    def localization_dims(self) -> list[int]:
        return [self.rank * d for d in self.block_dims]

    def _offsets(self) -> list[int]:
        off = [0]
        for d in self.block_dims:
            off.append(off[-1] + self.rank * d * d)
        return off

    def split(self, u: np.ndarray) -> list[np.ndarray]:
        """Flat vector -> list of (n d_i, d_i) blocks."""
        off = self._offsets()
        return [u[off[i]:off[i + 1]].reshape(self.rank * d, d)
                for i, d in enumerate(self.block_dims)]

    def join(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(b, dtype=complex).reshape(-1) for b in blocks])

    def inner(self, u: np.ndarray, v: np.ndarray) -> list[np.ndarray]:
        """<u|v> = sum_k u_k* v_k, one d_i x d_i matrix per block."""
        return [a.conj().T @ b for a, b in zip(self.split(u), self.split(v))]

    def right_action(self, u: np.ndarray, b: Sequence[np.ndarray]) -> np.ndarray:
        return self.join([x @ bi for x, bi in zip(self.split(u), b)])

    def random_vector(self, rng) -> np.ndarray:
        return rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)

    def from_blocks(self, locals_: Sequence[np.ndarray]) -> np.ndarray:
        """Module operator acting as L_i (x) 1 on block i."""
        mats = []
        for L, d in zip(locals_, self.block_dims):
            L = np.asarray(L, dtype=complex)
            if L.shape != (self.rank * d, self.rank * d):
                raise ValueError(f"localization has shape {L.shape}, expected {(self.rank * d,) * 2}")
            mats.append(np.kron(L, np.eye(d)))
        out = np.zeros((self.dim, self.dim), dtype=complex)
        off = self._offsets()
        for i, m in enumerate(mats):
            out[off[i]:off[i + 1], off[i]:off[i + 1]] = m
        return out

    def random_operator(self, rng, hermitian: bool = False) -> np.ndarray:
        locs = []
        for m in self.localization_dims():
            L = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
            locs.append(0.5 * (L + L.conj().T) if hermitian else L)
        return self.from_blocks(locs)


def make_module(block_dims: Sequence[int], rank: int) -> FiniteModule:
    return FiniteModule(FiniteAlgebra(tuple(block_dims)), int(rank))


def is_module_map(E: FiniteModule, T: np.ndarray, tol: float = TOL) -> bool:
    """Right B-linearity, T(u b) = T(u) b, checked on a basis of E and matrix units of B."""
    T = np.asarray(T, dtype=complex)
    if T.shape != (E.dim, E.dim):
        return False
    scale = max(1.0, float(np.abs(T).max()))
    off = E._offsets()
    for i, d in enumerate(E.block_dims):
        for j in range(len(E.block_dims)):
            if i != j and np.abs(T[off[i]:off[i + 1], off[j]:off[j + 1]]).max(initial=0) > tol * scale:
                return False
        Tii = T[off[i]:off[i + 1], off[i]:off[i + 1]]
        for a in range(d):
            for b in range(d):
                unit = np.zeros((d, d))
                unit[a, b] = 1.0
                # right multiplication by a matrix unit in row-major layout
                R = np.kron(np.eye(E.rank * d), unit.T)
                if np.abs(Tii @ R - R @ Tii).max() > tol * scale:
                    return False
    return True


def _require_module_map(E: FiniteModule, T) -> np.ndarray:
    T = np.asarray(T, dtype=complex)
    if not is_module_map(E, T):
        raise NotModuleMapError("operator is not right B-linear")
    return T


def adjoint(E: FiniteModule, T) -> np.ndarray:
    """The module adjoint; for B-linear maps it is the conjugate transpose."""
    return _require_module_map(E, T).conj().T


def localize(E: FiniteModule, T, i: int) -> np.ndarray:
    """Matrix of T on E (x)_B C^{d_i} = C^{n d_i}."""
    T = _require_module_map(E, T)
    d = E.block_dims[i]
    off = E._offsets()[i]
    m = E.rank * d
    # column 0 of block i in row-major layout sits at positions r * d
    idx = off + np.arange(m) * d
    return T[np.ix_(idx, idx)]


@dataclass(frozen=True)
class LocalGlobalVerdict:
    verdict: bool
    localizations_hermitian: tuple
    perturbation_detected: bool | None

    def to_dict(self) -> dict:
        return {"verdict": self.verdict,
                "localizations_hermitian": list(self.localizations_hermitian),
                "perturbation_detected": self.perturbation_detected}


def _hermitian(L: np.ndarray, tol: float = TOL) -> bool:
    scale = max(1.0, float(np.abs(L).max(initial=0)))
    return bool(np.abs(L - L.conj().T).max(initial=0) <= tol * scale)


def check_local_global(E: FiniteModule, T, rng=None) -> LocalGlobalVerdict:
    """True iff every localization of T is Hermitian.

    When ``rng`` is given, T is also perturbed by a random non-symmetric module
    map and the check must then fail (``perturbation_detected``).
    """
    T = _require_module_map(E, T)
    flags = tuple(_hermitian(localize(E, T, i)) for i in range(len(E.block_dims)))
    detected = None
    if rng is not None:
        P = asymmetric_perturbation(E, rng)
        pflags = [_hermitian(localize(E, T + P, i)) for i in range(len(E.block_dims))]
        detected = not all(pflags)
    return LocalGlobalVerdict(all(flags), flags, detected)


def asymmetric_perturbation(E: FiniteModule, rng, size: float = 1e-3) -> np.ndarray:
    """A random strictly upper triangular (nilpotent) module map in one block."""
    i = int(rng.integers(len(E.block_dims)))
    locs = [np.zeros((m, m), dtype=complex) for m in E.localization_dims()]
    m = locs[i].shape[0]
    if m == 1:
        locs[i][0, 0] = 1j * size
    else:
        locs[i] = np.triu(rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)), 1) * size
        locs[i][0, m - 1] += size
    return E.from_blocks(locs)


# --------------------------------------------------------------------------
# the battery

def _random_module(rng) -> FiniteModule:
    r = int(rng.integers(1, 4))
    dims = [int(d) for d in rng.integers(1, 4, size=r)]
    return make_module(dims, int(rng.integers(1, 4)))


def _encode(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return [a.real.tolist(), a.imag.tolist()]


def _localization_homomorphism(rng):
    E = _random_module(rng)
    S, T = E.random_operator(rng), E.random_operator(rng)
    z = complex(rng.standard_normal(), rng.standard_normal())
    err = 0.0
    for i in range(len(E.block_dims)):
        Si, Ti = localize(E, S, i), localize(E, T, i)
        err = max(err,
                  np.abs(localize(E, S + z * T, i) - (Si + z * Ti)).max(),
                  np.abs(localize(E, S @ T, i) - Si @ Ti).max() / max(1.0, np.abs(Si).max() * np.abs(Ti).max()),
                  np.abs(localize(E, adjoint(E, T), i) - Ti.conj().T).max())
    return err, {"block_dims": list(E.block_dims), "rank": E.rank, "S": _encode(S), "T": _encode(T)}


def _commutator_formula(rng):
    E = _random_module(rng)
    M = E.random_operator(rng, hermitian=True)
    phi = E.random_operator(rng, hermitian=True)
    lhs = M @ phi - phi @ M
    Mphi = M @ phi
    rhs = Mphi - adjoint(E, Mphi)
    err = np.abs(lhs - rhs).max() / max(1.0, np.abs(Mphi).max())
    return err, {"block_dims": list(E.block_dims), "rank": E.rank, "M": _encode(M), "phi": _encode(phi)}


def _local_global(rng):
    E = _random_module(rng)
    T = E.random_operator(rng, hermitian=True)
    v = check_local_global(E, T, rng)
    # error 0 when both directions behave, 1 otherwise
    err = 0.0 if (v.verdict and v.perturbation_detected) else 1.0
    return err, {"block_dims": list(E.block_dims), "rank": E.rank, "T": _encode(T),
                 "verdict": v.verdict, "perturbation_detected": v.perturbation_detected}


def _inner_positivity(rng):
    E = _random_module(rng)
    u, v = E.random_vector(rng), E.random_vector(rng)
    err = 0.0
    for a, b, c in zip(E.inner(u, u), E.inner(u, v), E.inner(v, u)):
        err = max(err, max(0.0, -float(np.linalg.eigvalsh(0.5 * (a + a.conj().T)).min())),
                  float(np.abs(b.conj().T - c).max()))
    return err, {"block_dims": list(E.block_dims), "rank": E.rank, "u": _encode(u), "v": _encode(v)}


IDENTITIES: dict[str, Callable] = {
    "localization_homomorphism": _localization_homomorphism,
    "commutator_formula": _commutator_formula,
    "local_global_equivalence": _local_global,
    "inner_product_positivity": _inner_positivity,
}


def check_lemma_battery(seed: int, instances: int = 100, jobs: int | None = None,
                        tol: float = TOL) -> dict:
    """Run every identity on ``instances`` seeded random instances.

    Each instance draws from its own child of SeedSequence(seed), so results do
    not depend on ``jobs``. The first failure raises BatteryFailure carrying a
    JSON-serializable description of the instance.
    """
    root = np.random.SeedSequence(seed)
    names = list(IDENTITIES)
    children = root.spawn(len(names))
    report = {}
    for name, child in zip(names, children):
        seeds = child.spawn(instances)
        fn = IDENTITIES[name]

        def run(ss):
            return fn(np.random.default_rng(ss))

        if jobs and jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run, seeds))
        else:
            results = [run(ss) for ss in seeds]
        worst = 0.0
        for j, (err, inst) in enumerate(results):
            if not err <= tol:
                inst = dict(inst, identity=name, seed=seed, instance=j)
                raise BatteryFailure(name, inst, float(err))
            worst = max(worst, float(err))
        report[name] = {"instances": instances, "passed": instances, "max_error": worst,
                        "tolerance": tol}
    report["note"] = NOTE
    return report
