import numpy as np
import pytest

from lpmdirect.model import Layout, validate_layout
from lpmdirect.presets import paper_hexagon, regular_polygon

# filled by test_acceptance; printed at the end of every run that collected it
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def hexagon():
    return paper_hexagon()


@pytest.fixture
def regular_hexagon():
    return regular_polygon(6, 10.0)


def spread_layout(rng, d, n, radius=(10.0, 50.0)):
    """Random non-degenerate layout: stations scattered around a circle / sphere."""
    while True:
        v = rng.normal(size=(n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        B = v * rng.uniform(*radius) * rng.uniform(0.8, 1.2, (n, 1))
        s = np.linalg.svd(B - B.mean(axis=0), compute_uv=False)
        lay = Layout.from_coords(B, rng.uniform(-20, 20, d))
        if s[-1] / s[0] > 0.2 and not validate_layout(lay):
            return lay


def point_in_hull(rng, B):
    """Uniform sample from the convex hull of the rows of B (rejection)."""
    from scipy.spatial import Delaunay

    tri = Delaunay(B)
    lo, hi = B.min(axis=0), B.max(axis=0)
    while True:
        m = rng.uniform(lo, hi)
        if tri.find_simplex(m) >= 0:
            return m
