"""Domain types and geometry primitives shared by the solver stack.

All lengths are metres. Station indices are 0-based in the library API.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

# absolute tolerance (m) for coincident stations / flat station sets
DEGENERACY_TOL = 1e-9


class DimensionError(ValueError):
    pass


class LayoutError(ValueError):
    """Raised when an operation needs a valid layout and gets a broken one."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(v.message for v in self.violations))


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Point:
    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in np.ravel(self.coords))
        if len(coords) not in (2, 3):
            raise DimensionError(f"point must be 2-D or 3-D, got {len(coords)} coordinates")
        if not all(np.isfinite(coords)):
            raise ValueError(f"non-finite coordinate in {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def d(self) -> int:
        return len(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype or float)

    def __iter__(self):
        return iter(self.coords)

    def __len__(self):
        return len(self.coords)


def as_array(p) -> np.ndarray:
    """Coordinates of a Point or any array-like as a float vector."""
    return np.asarray(p, dtype=float).reshape(-1)


def distance(p, q) -> float:
    a, b = as_array(p), as_array(q)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.size} vs {b.size}")
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class Layout:
    """Base-station positions plus the reference transponder position."""

    stations: tuple[Point, ...]
    reference: Point

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(p if isinstance(p, Point) else Point(p) for p in self.stations))
        if not isinstance(self.reference, Point):
            object.__setattr__(self, "reference", Point(self.reference))

    @classmethod
    def from_coords(cls, stations: Iterable, reference=None) -> "Layout":
        stations = [Point(s) for s in stations]
        if reference is None:
            reference = Point((0.0,) * stations[0].d)
        return cls(tuple(stations), reference)

    @property
    def n(self) -> int:
        return len(self.stations)

    @property
    def d(self) -> int:
        return self.reference.d

    @cached_property
    def station_array(self) -> np.ndarray:
        """(n, d) array of station coordinates."""
        return _frozen([s.coords for s in self.stations])

    @cached_property
    def reference_ranges(self) -> np.ndarray:
        """||T - B_i|| for every station."""
        return _frozen(np.linalg.norm(self.station_array - as_array(self.reference), axis=1))

    def to_dict(self) -> dict:
        return {
            "stations": [list(s.coords) for s in self.stations],
            "reference": list(self.reference.coords),
        }


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    stations: tuple[int, ...] = ()


def validate_layout(layout: Layout) -> list[Violation]:
    """Return every violated layout invariant. An empty list means the layout is usable."""
    out: list[Violation] = []
    d = layout.d
    bad_dim = tuple(i for i, s in enumerate(layout.stations) if s.d != d)
    if bad_dim:
        out.append(Violation("dimension", f"stations {list(bad_dim)} do not match reference dimension {d}", bad_dim))
        return out
    n = layout.n
    if n < d + 2:
        out.append(Violation("count", f"n >= {d + 2} required for d={d}, got {n}", tuple(range(n))))
    if n == 0:
        return out

    B = layout.station_array
    close = []
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(B[i] - B[j]) <= DEGENERACY_TOL:
                close.append((i, j))
    if close:
        idx = tuple(sorted({k for pair in close for k in pair}))
        out.append(Violation("coincident", f"coincident stations {close}", idx))

    centered = B - B.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False) if n > 1 else np.zeros(1)
    if n < d + 1 or s.size < d or s[d - 1] <= DEGENERACY_TOL:
        shape = "collinear" if d == 2 else "coplanar"
        out.append(Violation("degenerate", f"degenerate geometry: stations are {shape}", tuple(range(n))))
    return out


def check_layout(layout: Layout) -> None:
    violations = validate_layout(layout)
    if violations:
        raise LayoutError(violations)


@dataclass(frozen=True)
class Truth:
    position: Point
    offset: float


@dataclass(frozen=True)
class EpochMeasurement:
    """One epoch: pseudo-ranges R_i and (once augmented) L_i = R_i + ||T - B_i||."""

    pseudo: np.ndarray
    augmented: np.ndarray | None = None
    truth: Truth | None = None

    def __post_init__(self):
        object.__setattr__(self, "pseudo", _frozen(self.pseudo))
        if self.augmented is not None:
            aug = _frozen(self.augmented)
            if aug.shape != self.pseudo.shape:
                raise ValueError("pseudo and augmented lengths differ")
            object.__setattr__(self, "augmented", aug)

    @property
    def n(self) -> int:
        return self.pseudo.size


@dataclass(frozen=True)
class DiffMatrix:
    """Antisymmetric matrix of pairwise differences delta[i, j] = L_i - L_j."""

    delta: np.ndarray
    kind: str = "raw"

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float)
        if delta.ndim != 2 or delta.shape[0] != delta.shape[1]:
            raise ValueError(f"delta must be square, got shape {delta.shape}")
        if self.kind not in ("raw", "filtered"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if np.any(np.diag(delta) != 0) or np.any(delta != -delta.T):
            raise ValueError("delta must be antisymmetric with zero diagonal")
        if not np.all(np.isfinite(delta)):
            raise ValueError("non-finite difference")
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)

    @property
    def n(self) -> int:
        return self.delta.shape[0]

    @classmethod
    def from_values(cls, values, kind: str = "raw") -> "DiffMatrix":
        v = np.asarray(values, dtype=float)
        return cls(v[:, None] - v[None, :], kind)

    @classmethod
    def from_upper(cls, n: int, upper, kind: str = "filtered") -> "DiffMatrix":
        """Build from the n(n-1)/2 values delta[i, j], i < j, in row-major order."""
        delta = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        delta[iu] = upper
        delta.T[iu] = -np.asarray(upper, dtype=float)
        return cls(delta, kind)

    def upper(self) -> np.ndarray:
        return self.delta[np.triu_indices(self.n, 1)]


@dataclass(frozen=True)
class SolveResult:
    position: np.ndarray
    nuisance: float
    condition: float
    residual: float
    variant: str  # "sym" or "nonsym"
    ref: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen(self.position))

    def to_dict(self) -> dict:
        out = {
            "variant": self.variant,
            "position": [float(c) for c in self.position],
            "nuisance": float(self.nuisance),
            "condition": float(self.condition),
            "residual": float(self.residual),
        }
        if self.ref is not None:
            out["ref"] = self.ref
        return out
