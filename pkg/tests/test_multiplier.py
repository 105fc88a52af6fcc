import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kasplab import approxid as ax
from kasplab import multiplier as mp
from kasplab import operators as ops
from kasplab.funcspace import make_grid


@pytest.fixture(scope="module")
def selection():
    g = make_grid(600.0, 601)
    ks = sorted({int(round(2 ** (j / 4))) for j in range(37)})
    raw = ax.cutoff_family(ax.plateau(), ax.abs_rho, ks, g)
    D = ops.first_order(g)
    totals = [ops.bump_element(g, 3.0, c) for c in (0.0, 1.0, -1.0)]
    return mp.select_subsequence(raw, totals, D, depth=4), D


def test_selection_meets_bounds(selection):
    sel, D = selection
    assert sel.selected_indices == (3, 16, 64, 256)
    for entry in sel.certificate:
        assert entry["commutator"] < 4.0 ** -entry["k"]
    assert mp.verify_certificate(sel, D)


def test_tampered_certificate_fails(selection):
    sel, D = selection
    cert = [dict(c) for c in sel.certificate]
    cert[0]["commutator"] *= 1.01
    bad = mp.Selection(sel.family, tuple(cert), sel.totals)
    assert not mp.verify_certificate(bad, D)


def test_selection_exhaustion():
    g = make_grid(100.0, 101)
    raw = ax.cutoff_family(ax.plateau(), ax.abs_rho, (1, 2, 4, 8, 16, 32, 64), g)
    with pytest.raises(mp.SelectionError, match="exhausted"):
        mp.select_subsequence(raw, [ops.bump_element(g, 3.0)], ops.first_order(g), depth=4)


def test_selection_rejects_noncompact_totals():
    g = make_grid(100.0, 101)
    raw = ax.cutoff_family(ax.plateau(), ax.abs_rho, (1, 2), g)
    a = ops.AlgebraElement.from_function(lambda x: np.exp(-x**2), g)
    with pytest.raises(ValueError, match="compactly"):
        mp.select_subsequence(raw, [a], ops.first_order(g), depth=1)


def test_multiplier_series_values(selection):
    sel, _ = selection
    s = mp.build_multiplier(sel, 3)
    assert s.depth == 3
    x = s.grid.nodes
    m = s.deepest.values
    # m_n vanishes on the plateau of phi_{K(1)} and saturates at 2^n outside phi_{K(n)}
    assert np.all(m[np.abs(x) <= 3] == 0)
    assert m.max() == 8.0
    assert np.all(m[(np.abs(x) >= 128) & (np.abs(x) <= 256)] == 8.0)
    # monotone where the truncation equals the series (inside the plateau of phi_{K(4)})
    inside = (x >= 0) & (x <= 256)
    assert np.all(np.diff(m[inside]) >= 0)
    with pytest.raises(ValueError):
        mp.build_multiplier(sel, 4)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2000.0))
def test_multiplier_function_matches_sum(x):
    prof, ks = ax.plateau(), (3, 16, 64, 256)
    m = mp.multiplier_function(prof, ax.abs_rho, ks, 3)
    want = sum(2.0 ** k * (prof(x / ks[k]) - prof(x / ks[k - 1])) for k in range(1, 4))
    assert m(np.array([x]))[0] == pytest.approx(float(want), abs=1e-12)


def test_resolvent_in_A_bounds(selection):
    sel, _ = selection
    rep = mp.resolvent_in_A(mp.build_multiplier(sel, 3))
    assert rep.verdict
    assert all(s <= b for s, b in zip(rep.tail_sups, rep.bounds))
    assert list(rep.tail_sups) == sorted(rep.tail_sups, reverse=True)


def test_resolvent_in_A_trivial_series(selection):
    sel, _ = selection
    assert not mp.resolvent_in_A(mp.build_multiplier(sel, 0)).verdict


def test_compact_resolvent_with_series(selection):
    sel, _ = selection
    s = mp.build_multiplier(sel, 3)
    D = ops.first_order(make_grid(100.0, 101))
    rep = mp.compact_resolvent_certify(D, s, lambdas=(1, 2, 4), scheme="upwind")
    assert rep.verdict and rep.refinement_stable
    assert rep.counting_function == rep.outer_counting_function
    assert rep.max_boundary_mass <= mp.MASS_LIMIT
    counts = list(rep.counting_function.values())
    assert counts == sorted(counts)


def test_compact_resolvent_domain_outside_series(selection):
    sel, _ = selection
    s = mp.build_multiplier(sel, 3)
    with pytest.raises(ValueError, match="outer domain"):
        mp.compact_resolvent_certify(ops.first_order(make_grid(250.0, 251)), s, scheme="upwind")


def test_compact_resolvent_central_quadratic():
    D = ops.first_order(make_grid(10.0, 801))
    rep = mp.compact_resolvent_certify(D, lambda x: x**2, lambdas=(1, 2, 4, 8, 10))
    assert rep.verdict


def test_compact_resolvent_fails_without_multiplier():
    D = ops.first_order(make_grid(10.0, 801))
    rep = mp.compact_resolvent_certify(D, lambda x: 0 * x, lambdas=(1, 2, 4))
    assert not rep.verdict
    assert not rep.refinement_stable


def test_index_one_truncation_has_boundary_zero_mode():
    # B = -d + x has index one on the line, but a square truncation has index
    # zero: besides the Gaussian zero mode of B* there is a zero mode of B
    # (profile e^{x^2/2}) living at the boundary, and the mass check flags it
    D = ops.first_order(make_grid(10.0, 801))
    up = mp.compact_resolvent_certify(D, lambda x: x, lambdas=(1, 2, 3), scheme="upwind")
    # the zero pair plus +/- sqrt(2n): sqrt 2, 2, sqrt 6, sqrt 8
    assert up.counting_function == {1.0: 2, 2.0: 6, 3.0: 10}
    assert up.refinement_stable
    assert up.max_boundary_mass > 0.5
    assert not up.verdict


def test_central_scheme_doubles_levels():
    D = ops.first_order(make_grid(10.0, 801))
    up = mp.compact_resolvent_certify(D, lambda x: x**2, lambdas=(1, 2, 4), scheme="upwind")
    ce = mp.compact_resolvent_certify(D, lambda x: x**2, lambdas=(1, 2, 4), scheme="central")
    assert up.verdict and ce.verdict
    assert all(ce.counting_function[L] >= 2 * up.counting_function[L] - 2 for L in (1.0, 2.0, 4.0))


def test_even_variant():
    g = make_grid(10.0, 401)
    T = ops.double_odd(ops.first_order(g, lambda x: x))
    rep = mp.even_variant_certify(T, lambda x: x, lambdas=(1, 2, 4))
    assert rep.verdict
    with pytest.raises(ValueError):
        mp.even_variant_certify(ops.first_order(g), lambda x: x)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_counterexample_closed_form(k):
    g = make_grid(10.0, 1001)
    F = ax.cutoff_family(ax.plateau(), ax.abs_rho, (k,), g)
    for m in (lambda x: np.exp(x**2), lambda x: np.cos(x)):
        with np.errstate(over="ignore"):
            rep = mp.counterexample_commutator(m, F)
        assert rep.max_identity_error <= 1e-10 * max(1.0, max(rep.closed_form))
        assert rep.norms[0] == pytest.approx(rep.closed_form[0], rel=1e-10)


def test_counterexample_divergence_vs_bounded():
    g = make_grid(10.0, 1001)
    F = ax.cutoff_family(ax.plateau(), ax.abs_rho, (1, 2, 3, 4), g)
    big = mp.counterexample_commutator(lambda x: np.exp(x**2), F)
    small = mp.counterexample_commutator(lambda x: np.cos(x), F)
    assert all(b > a for a, b in zip(big.norms, big.norms[1:]))
    assert all(b < a for a, b in zip(small.norms, small.norms[1:]))
    assert small.norms[-1] <= 2.0 / 4
