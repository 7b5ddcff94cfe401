"""Station layouts used by the benchmark."""
from __future__ import annotations

import numpy as np

from .model import Layout

# six stations on a 10 m circle, coordinates as tabulated (8.66 rather than 5*sqrt(3))
HEXAGON_TABLE = (
    (10.0, 0.0),
    (5.0, 8.66),
    (-5.0, 8.66),
    (-10.0, 0.0),
    (-5.0, -8.66),
    (5.0, -8.66),
)

PAPER_VARIANCE = 0.064  # m^2, filtering error


def regular_polygon(n: int, radius: float = 10.0, reference=(0.0, 0.0)) -> Layout:
    """``n`` stations evenly spaced on a circle, the first on the +x axis."""
    ang = 2 * np.pi * np.arange(n) / n
    pts = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    return Layout.from_coords(pts, reference)


def paper_hexagon() -> Layout:
    return Layout.from_coords(HEXAGON_TABLE, (0.0, 0.0))


def paper_pentagon() -> Layout:
    return regular_polygon(5, 10.0)


PRESET_LAYOUTS = {
    "paper-hexagon": paper_hexagon,
    "paper-pentagon": paper_pentagon,
}
