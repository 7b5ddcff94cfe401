"""Synthetic LPM measurements.

Forward model per epoch::

    R_i = O + ||M - B_i|| - ||T - B_i||      (pseudo-range)
    L_i = R_i + ||T - B_i|| = O + ||M - B_i||  (augmented range)
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    DiffMatrix,
    DimensionError,
    EpochMeasurement,
    Layout,
    Point,
    Truth,
    as_array,
    check_layout,
)

NOISE_TARGETS = ("per_range", "per_filtered_diff")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    target: str = "per_range"

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.target not in NOISE_TARGETS:
            raise ValueError(f"noise target must be one of {NOISE_TARGETS}")

    @classmethod
    def from_variance(cls, variance: float, target: str = "per_range") -> "NoiseSpec":
        if variance < 0:
            raise ValueError("variance must be >= 0")
        return cls(float(np.sqrt(variance)), target)


@dataclass(frozen=True)
class OffsetProcess:
    """How the shared clock offset (in metres) evolves from epoch to epoch."""

    kind: str = "iid_uniform"
    value: float = 0.0
    lo: float = -1.5e5
    hi: float = 1.5e5
    step_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "iid_uniform", "random_walk"):
            raise ValueError(f"unknown offset process {self.kind!r}")
        if self.lo > self.hi:
            raise ValueError("lo must be <= hi")
        if self.step_sigma < 0:
            raise ValueError("step_sigma must be >= 0")

    @classmethod
    def constant(cls, value: float) -> "OffsetProcess":
        return cls("constant", value=value)

    @classmethod
    def iid_uniform(cls, lo: float = -1.5e5, hi: float = 1.5e5) -> "OffsetProcess":
        return cls("iid_uniform", lo=lo, hi=hi)

    @classmethod
    def random_walk(cls, step_sigma: float, start: float = 0.0) -> "OffsetProcess":
        return cls("random_walk", value=start, step_sigma=step_sigma)

    def draw(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.full(count, float(self.value))
        if self.kind == "iid_uniform":
            return rng.uniform(self.lo, self.hi, count)
        steps = rng.normal(0.0, self.step_sigma, count)
        steps[0] = 0.0
        return self.value + np.cumsum(steps)


def _position(layout: Layout, m) -> np.ndarray:
    m = as_array(m)
    if m.size != layout.d:
        raise DimensionError(f"point has {m.size} coordinates, layout is {layout.d}-D")
    return m


def true_ranges(layout: Layout, m) -> np.ndarray:
    """||M - B_i|| for every station."""
    m = _position(layout, m)
    return np.linalg.norm(layout.station_array - m, axis=1)


def pseudo_ranges(
    layout: Layout,
    m,
    offset: float,
    noise: NoiseSpec = NoiseSpec(),
    rng: np.random.Generator | None = None,
) -> EpochMeasurement:
    check_layout(layout)
    m = _position(layout, m)
    # one rounding at offset magnitude, not two
    r = offset + (true_ranges(layout, m) - layout.reference_ranges)
    if noise.target == "per_range" and noise.sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy measurements")
        r = r + rng.normal(0.0, noise.sigma, layout.n)
    return EpochMeasurement(r, truth=Truth(Point(m), float(offset)))


def augment(e: EpochMeasurement, layout: Layout) -> EpochMeasurement:
    if e.n != layout.n:
        raise ValueError(f"epoch has {e.n} ranges, layout has {layout.n} stations")
    return EpochMeasurement(e.pseudo, e.pseudo + layout.reference_ranges, e.truth)


def diff_matrix(e: EpochMeasurement) -> DiffMatrix:
    if e.augmented is None:
        raise ValueError("epoch is not augmented")
    return DiffMatrix.from_values(e.augmented, "raw")


def truth_diff_matrix(layout: Layout, m) -> DiffMatrix:
    """Offset-free differences ||M - B_i|| - ||M - B_j|| for a known position."""
    return DiffMatrix.from_values(true_ranges(layout, m), "raw")


def gen_epoch_series(
    layout: Layout,
    trajectory: Sequence,
    offsets: OffsetProcess,
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> list[EpochMeasurement]:
    """Augmented epochs, one per trajectory point.

    Offsets and range noise come from independent child streams of ``rng``, so
    swapping the offset process leaves the noise draw untouched.
    """
    check_layout(layout)
    if len(trajectory) == 0:
        raise ValueError("trajectory is empty")
    offset_rng, noise_rng = rng.spawn(2)
    o = offsets.draw(len(trajectory), offset_rng)
    return [augment(pseudo_ranges(layout, m, o[k], noise, noise_rng), layout) for k, m in enumerate(trajectory)]


EPOCH_CSV_FIELDS = ["epoch_index", "station_index", "pseudo", "augmented"]
TRUTH_CSV_FIELDS = ["truth_x", "truth_y", "truth_z", "truth_offset"]


def epochs_to_csv(series: Sequence[EpochMeasurement]) -> str:
    """Long-format CSV, one row per (epoch, station). Station indices are 1-based."""
    has_truth = all(e.truth is not None for e in series)
    d = series[0].truth.position.d if has_truth else 0
    truth_cols = TRUTH_CSV_FIELDS[:d] + TRUTH_CSV_FIELDS[-1:] if has_truth else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPOCH_CSV_FIELDS + truth_cols)
    for k, e in enumerate(series):
        aug = e.augmented if e.augmented is not None else np.full(e.n, np.nan)
        for i in range(e.n):
            row = [k, i + 1, repr(float(e.pseudo[i])), repr(float(aug[i]))]
            if has_truth:
                row += [repr(c) for c in e.truth.position.coords] + [repr(e.truth.offset)]
            w.writerow(row)
    return buf.getvalue()


def epochs_from_csv(text: str) -> list[EpochMeasurement]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("epoch CSV has no rows")
    missing = [f for f in ("epoch_index", "station_index", "pseudo") if f not in rows[0]]
    if missing:
        raise ValueError(f"epoch CSV lacks columns {missing}")
    by_epoch: dict[int, list[dict]] = {}
    for row in rows:
        by_epoch.setdefault(int(row["epoch_index"]), []).append(row)
    out = []
    for k in sorted(by_epoch):
        group = sorted(by_epoch[k], key=lambda r: int(r["station_index"]))
        if [int(r["station_index"]) for r in group] != list(range(1, len(group) + 1)):
            raise ValueError(f"epoch {k}: station indices must run 1..n")
        pseudo = [float(r["pseudo"]) for r in group]
        aug = None
        if "augmented" in group[0] and group[0]["augmented"] not in ("", "nan"):
            aug = [float(r["augmented"]) for r in group]
        truth = None
        if "truth_offset" in group[0] and group[0]["truth_offset"] != "":
            coords = [float(group[0][c]) for c in TRUTH_CSV_FIELDS[:3] if c in group[0]]
            truth = Truth(Point(coords), float(group[0]["truth_offset"]))
        out.append(EpochMeasurement(pseudo, aug, truth))
    return out
