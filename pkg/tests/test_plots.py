import logging
import re
from pathlib import Path

import numpy as np

from kasplab.plots import emit_plot, render

GOLDEN = Path(__file__).parent / "golden"


def _ladder():
    return [float(v) for v in np.r_[-np.sqrt(2 * np.arange(3, 0, -1)), 0.0, np.sqrt(2 * np.arange(1, 4))]]


def test_golden_panels():
    svg = render(_ladder(), [[1.0, 0.5, 0.1, 0.01], [0.8, 0.2, 0.05]], [(1.0, 1), (2.0, 5), (4.0, 17)])
    assert svg == (GOLDEN / "panels.svg").read_text()


def test_empty_report_gives_axes_only(caplog):
    with caplog.at_level(logging.WARNING):
        svg = render()
    assert svg == (GOLDEN / "empty.svg").read_text()
    assert "polyline" not in svg and 'stroke="navy"' not in svg
    assert len(caplog.records) == 3


def test_ladder_positions_follow_eigenvalues():
    eigs = _ladder()
    svg = render(eigs, [[1.0]], [(1.0, 1)])
    ys = [float(y) for y in re.findall(r'y1="([0-9.]+)" x2="250.00" y2="[0-9.]+" stroke="navy"', svg)]
    lo, hi = min(eigs), max(eigs)
    want = [200 - (v - lo) / (hi - lo) * 160 for v in eigs]
    np.testing.assert_allclose(ys, want, atol=0.006)


def test_staircase_is_monotone():
    svg = render([0.0], [[1.0]], [(8.0, 30), (1.0, 2), (2.0, 6), (4.0, 12)])
    pts = re.search(r'stroke="darkgreen" points="([^"]+)"', svg).group(1)
    ys = [float(p.split(",")[1]) for p in pts.split()]
    # SVG y grows downward: a non-decreasing count means non-increasing y
    assert all(b <= a for a, b in zip(ys, ys[1:]))


def test_emit_plot_reads_report_sections():
    report = {"checks": {
        "spectrum": {"eigenvalues": [-1.0, 1.0]},
        "kasparov": {"certificate": {"local_compactness": {"a": {"singular_values": [1.0, 0.1]}}},
                     "perturbation": {"singular_values": [0.5, 0.05]}},
        "multiplier": {"compact_resolvent": {"counting_function": {"1": 2, "2": 6}}},
    }}
    svg = emit_plot(report)
    assert svg.count("<polyline") == 3
    assert emit_plot(report) == svg
