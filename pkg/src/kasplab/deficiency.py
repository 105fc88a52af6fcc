"""Deficiency indices of 1D differential operators on the continuum.

Truncated matrices are Hermitian and have indices (0, 0) no matter what, so
they cannot say anything about essential self-adjointness. Instead the
solutions of (tau -/+ i) u = 0 are integrated outward from an interior anchor
and each is tested for square-integrability near each endpoint.

Near an infinite endpoint the integration runs over windows of fixed width.
A solution counts as square-integrable when the window integrals of |u|^2
shrink geometrically (ratio <= 0.9 over the last windows) and as not
square-integrable when they grow (ratio >= 1.02); anything in between is
reported as inconclusive rather than guessed. Solutions are renormalised at
each window boundary, with the scale tracked in log form, so
super-exponential growth does not overflow.

First-order operators ``i d/dx + f`` are integrated for y = log u, where
y' = +/-1 + i f; the modulus |u| = exp(Re y) does not depend on f.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

FIRST_ORDER = "first_order_iddx_plus_f"
STURM_LIOUVILLE = "sturm_liouville_minus_dxx_plus_V"

L2_RATIO = 0.9
GROWTH_RATIO = 1.02


class InconclusiveError(RuntimeError):
    pass


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class ContinuumOp:
    kind: str
    potential: Callable = field(default=_zero, repr=False)
    interval: tuple = (-np.inf, np.inf)
    label: str = "0"

    def __post_init__(self):
        if self.kind not in (FIRST_ORDER, STURM_LIOUVILLE):
            raise ValueError(f"unknown operator kind {self.kind!r}")
        a, b = (float(t) for t in self.interval)
        if not a < b:
            raise ValueError(f"empty interval {self.interval}")
        object.__setattr__(self, "interval", (a, b))

    def with_added(self, p: Callable, label: str) -> "ContinuumOp":
        base = self.potential

        def q(x):
            return np.asarray(base(x), dtype=float) + np.asarray(p(x), dtype=float)
        lab = label if self.label in ("0", "") else f"{self.label} + ({label})"
        return ContinuumOp(self.kind, q, self.interval, lab)


def first_order_op(f=None, interval=(-np.inf, np.inf), label=None) -> ContinuumOp:
    return ContinuumOp(FIRST_ORDER, f or _zero, interval, label or _label(f))


def sturm_liouville_op(V=None, interval=(-np.inf, np.inf), label=None) -> ContinuumOp:
    return ContinuumOp(STURM_LIOUVILLE, V or _zero, interval, label or _label(V))


def _label(f) -> str:
    if f is None:
        return "0"
    return getattr(f, "expr", None) or getattr(f, "__name__", "f")


@dataclass(frozen=True)
class DeficiencyReport:
    n_plus: int
    n_minus: int
    endpoint_class: dict
    tail_integrals: dict = field(repr=False)
    label: str = ""

    @property
    def esa(self) -> bool:
        return self.n_plus == 0 and self.n_minus == 0

    @property
    def indices(self) -> tuple:
        return (self.n_plus, self.n_minus)

    def to_dict(self) -> dict:
        return {"n_plus": self.n_plus, "n_minus": self.n_minus, "esa": self.esa,
                "endpoint_class": dict(self.endpoint_class),
                "tail_ratios": {k: list(v) for k, v in self.tail_integrals.items()},
                "label": self.label}


def _anchor(a: float, b: float) -> float:
    if np.isinf(a) and np.isinf(b):
        return 0.0
    if np.isinf(b):
        return a + 1.0
    if np.isinf(a):
        return b - 1.0
    return 0.5 * (a + b)


def _scalar_potential(V: Callable) -> Callable[[float], float]:
    def v(x):
        out = float(np.asarray(V(np.array([x], dtype=float)), dtype=float).reshape(-1)[0])
        return out
    return v


def _endpoint_regular(V: Callable, end: float, inward: float) -> bool:
    eps = np.logspace(-12, -1, 45)
    xs = end + inward * eps
    vals = np.asarray(V(xs), dtype=float)
    return bool(np.all(np.isfinite(vals)) and np.max(np.abs(vals)) <= 1e8)


def _log_trapz(logf: np.ndarray, x: np.ndarray) -> float:
    # log of the trapezoid integral of exp(logf) over x
    m = np.max(logf)
    if not np.isfinite(m):
        return -np.inf
    w = np.abs(np.diff(x))
    s = 0.5 * np.sum(w * (np.exp(logf[1:] - m) + np.exp(logf[:-1] - m)))
    return float(m + np.log(s))


def _window_edges(anchor: float, direction: int, R_max: float, width: float) -> np.ndarray:
    count = int(np.floor(R_max / width + 1e-12))
    return anchor + direction * width * np.arange(count + 1)


def _first_order_tail(V, sign: int, anchor, direction, R_max, width, rtol, samples):
    """Log window integrals of |u|^2 for u' = (sign + i V) u."""
    edges = _window_edges(anchor, direction, R_max, width)
    v = _scalar_potential(V)

    def rhs(x, y):
        return [float(sign), v(x)]

    sol = solve_ivp(rhs, (edges[0], edges[-1]), [0.0, 0.0], method="RK45",
                    rtol=rtol, atol=1e-12, dense_output=True)
    if not sol.success:
        raise InconclusiveError(f"integration failed: {sol.message}")
    logs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs = np.linspace(lo, hi, samples)
        re_y = sol.sol(xs)[0]
        logs.append(_log_trapz(2.0 * re_y, xs))
    return np.array(logs)


def _sl_tail(V, lam: complex, anchor, direction, R_max, width, rtol, samples):
    """Log window integrals of |u|^2 for both basis solutions of -u'' + V u = lam u."""
    edges = _window_edges(anchor, direction, R_max, width)
    v = _scalar_potential(V)
    lr, li = lam.real, lam.imag

    def rhs(x, s):
        # s = [Re u, Im u, Re u', Im u'];  u'' = (V - lam) u
        q = v(x) - lr
        return [s[2], s[3], q * s[0] + li * s[1], q * s[1] - li * s[0]]

    out = []
    for init in ([1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]):
        state = np.array(init)
        log_scale = 0.0
        logs = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            state, log_scale, lw = _sl_window(rhs, state, log_scale, lo, hi, rtol, samples)
            logs.append(lw)
        out.append(np.array(logs))
    return out


def _sl_window(rhs, state, log_scale, lo, hi, rtol, samples, depth=0):
    n0 = np.linalg.norm(state)
    state = state / n0
    log_scale += np.log(n0)
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(rhs, (lo, hi), state, method="RK45", rtol=rtol, atol=1e-14,
                        dense_output=True)
        ok = sol.success and np.all(np.isfinite(sol.y))
        if ok:
            xs = np.linspace(lo, hi, samples)
            u = sol.sol(xs)
            mod2 = u[0] ** 2 + u[1] ** 2
            ok = np.all(np.isfinite(mod2))
    if not ok:
        # overflow inside the window: split it and renormalise at the midpoint
        if depth >= 6:
            raise InconclusiveError(f"integration blew up on [{lo:g}, {hi:g}]")
        mid = 0.5 * (lo + hi)
        s1, l1, w1 = _sl_window(rhs, state, log_scale, lo, mid, rtol, samples, depth + 1)
        s2, l2, w2 = _sl_window(rhs, s1, l1, mid, hi, rtol, samples, depth + 1)
        return s2, l2, float(np.logaddexp(w1, w2))
    with np.errstate(divide="ignore"):
        lw = _log_trapz(np.log(mod2), xs) + 2.0 * log_scale
    return sol.y[:, -1], log_scale, lw


def classify_tail(log_integrals: np.ndarray, last: int = 3) -> tuple[bool, np.ndarray]:
    """Decide square-integrability from window integrals (log scale).

    Returns (is_l2, ratios). Raises InconclusiveError when the last ratios are
    neither uniformly <= 0.9 nor uniformly >= 1.02.
    """
    ratios = np.exp(np.diff(log_integrals))
    tail = ratios[-last:]
    if tail.size == 0:
        raise InconclusiveError("need at least two windows")
    if np.all(tail <= L2_RATIO):
        return True, ratios
    if np.all(tail >= GROWTH_RATIO):
        return False, ratios
    raise InconclusiveError(f"tail ratios {np.array2string(tail, precision=4)} "
                            f"fall between {L2_RATIO} and {GROWTH_RATIO}")


def deficiency_indices(op: ContinuumOp, R_max: float = 30.0, ode_tolerance: float = 1e-10,
                       window: float = 5.0, samples: int = 201) -> DeficiencyReport:
    if R_max < 10:
        raise ValueError("R_max must be at least 10")
    a, b = op.interval
    c = _anchor(a, b)
    V = op.potential
    if not np.isfinite(_scalar_potential(V)(c)):
        raise ValueError(f"potential is not finite at the anchor x={c:g}")
    ends = {"left": (a, -1), "right": (b, 1)}
    classes, tails = {}, {}
    # l2[end][sign] = number of square-integrable solutions near that end
    l2 = {"left": {}, "right": {}}
    for name, (end, direction) in ends.items():
        if np.isfinite(end):
            if not _endpoint_regular(V, end, -direction):
                raise InconclusiveError(f"potential unbounded near the finite endpoint {end:g}")
            classes[name] = "regular"
            dim = 1 if op.kind == FIRST_ORDER else 2
            l2[name] = {+1: dim, -1: dim}
            continue
        sq = {}
        for sign in (+1, -1):
            if op.kind == FIRST_ORDER:
                logs = _first_order_tail(V, sign, c, direction, R_max, window,
                                         ode_tolerance, samples)
                ok, ratios = classify_tail(logs)
                tails[f"{name}:{'+' if sign > 0 else '-'}"] = tuple(float(r) for r in ratios)
                sq[sign] = int(ok)
            else:
                count = 0
                for j, logs in enumerate(_sl_tail(V, sign * 1j, c, direction, R_max, window,
                                                  ode_tolerance, samples)):
                    ok, ratios = classify_tail(logs)
                    tails[f"{name}:{'+' if sign > 0 else '-'}:{j}"] = tuple(float(r) for r in ratios)
                    count += int(ok)
                # a generic basis solution is dominant, so "both L2" means limit circle;
                # otherwise Weyl's alternative leaves exactly one L2 solution
                sq[sign] = 2 if count == 2 else 1
        l2[name] = sq
        if op.kind == FIRST_ORDER:
            classes[name] = "limit_circle" if min(sq.values()) == 1 else "limit_point"
        else:
            classes[name] = "limit_circle" if min(sq.values()) == 2 else "limit_point"
    n = {}
    for sign in (+1, -1):
        if op.kind == FIRST_ORDER:
            n[sign] = int(l2["left"][sign] == 1 and l2["right"][sign] == 1)
        else:
            n[sign] = max(0, l2["left"][sign] + l2["right"][sign] - 2)
    if op.kind == STURM_LIOUVILLE and n[1] != n[-1]:
        raise InconclusiveError(f"conjugation symmetry violated: ({n[1]}, {n[-1]})")
    return DeficiencyReport(n[1], n[-1], classes, tails, op.label)


def esa_verdict(op: ContinuumOp, **kw) -> bool:
    return deficiency_indices(op, **kw).esa


def _check_locally_bounded(p: Callable, interval, R_max: float, label: str) -> None:
    a, b = interval
    lo = a if np.isfinite(a) else -R_max
    hi = b if np.isfinite(b) else R_max
    # open interval: stay off the endpoints themselves
    xs = np.linspace(lo, hi, 4001)[1:-1]
    vals = np.asarray(p(xs), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"potential {label!r} is not locally bounded on {interval}")


def perturbation_sweep(base: ContinuumOp, potentials: Sequence, labels: Sequence[str] | None = None,
                       jobs: int | None = None, **kw) -> list[tuple[str, DeficiencyReport]]:
    """One deficiency report per added potential.

    Inconclusive entries are returned as the exception instance in place of a
    report so one bad row does not hide the others.
    """
    potentials = list(potentials)
    if labels is None:
        labels = [_label(p) for p in potentials]
    R = kw.get("R_max", 30.0)
    ops = []
    for p, lab in zip(potentials, labels):
        _check_locally_bounded(p, base.interval, R, lab)
        ops.append(base.with_added(p, lab))

    def run(op):
        try:
            return deficiency_indices(op, **kw)
        except InconclusiveError as exc:
            return exc

    if jobs and jobs > 1 and len(ops) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, ops))
    else:
        results = [run(op) for op in ops]
    return list(zip(labels, results))
