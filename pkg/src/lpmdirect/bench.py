"""Grid Monte Carlo comparison of the two solvers and condition maps.

Every grid cell gets its own random stream derived from ``(seed, cell_index)``,
and cells are processed in fixed-size chunks, so results do not depend on how
many worker threads run the chunks.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .filtering import pair_noise
from .model import Layout, check_layout
from .solver import (
    TIE_RTOL,
    condition_batch,
    lstsq_batch,
    nonsym_arrays,
    sym_arrays,
)

CHUNK_CELLS = 64
ZERO_TOL = 1e-9  # |err_nonsym - err_sym| at or below this is a tie (m)


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -30.0
    x_max: float = 30.0
    y_min: float = -30.0
    y_max: float = 30.0
    step: float = 1.0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError("grid bounds must satisfy min <= max")

    @staticmethod
    def _axis(lo: float, hi: float, step: float) -> np.ndarray:
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return lo + step * np.arange(count)

    def points(self) -> np.ndarray:
        """(cells, 2) array; x varies fastest."""
        xs = self._axis(self.x_min, self.x_max, self.step)
        ys = self._axis(self.y_min, self.y_max, self.step)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def _embed(points: np.ndarray, d: int) -> np.ndarray:
    if d == 2:
        return points
    return np.column_stack([points, np.zeros(len(points))])


def parse_mode(mode) -> int | str:
    """``"best"`` or a 0-based reference index."""
    if isinstance(mode, str):
        if mode == "best":
            return mode
        raise ValueError(f"unknown mode {mode!r}")
    return int(mode)


@dataclass
class GridReport:
    points: np.ndarray
    err_nonsym: np.ndarray
    err_sym: np.ndarray
    diff: np.ndarray
    failed_nonsym: np.ndarray
    failed_sym: np.ndarray
    outcome: np.ndarray  # +1 symmetric better, -1 worse, 0 tie
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def cells(self) -> int:
        return len(self.points)

    @property
    def pct_positive(self) -> float:
        return 100.0 * np.count_nonzero(self.outcome > 0) / self.cells

    @property
    def pct_negative(self) -> float:
        return 100.0 * np.count_nonzero(self.outcome < 0) / self.cells

    @property
    def pct_zero(self) -> float:
        return 100.0 * np.count_nonzero(self.outcome == 0) / self.cells

    @property
    def mean_err_nonsym(self) -> float:
        return float(np.nanmean(self.err_nonsym)) if np.any(np.isfinite(self.err_nonsym)) else float("nan")

    @property
    def mean_err_sym(self) -> float:
        return float(np.nanmean(self.err_sym)) if np.any(np.isfinite(self.err_sym)) else float("nan")


def classify(diff: np.ndarray, failed_nonsym: np.ndarray, failed_sym: np.ndarray) -> np.ndarray:
    """+1 where the symmetric solver wins, -1 where it loses, 0 for ties.

    A failed solve is a loss for that solver; both failing is a tie.
    """
    out = np.sign(diff)
    out[~np.isfinite(diff) | (np.abs(diff) <= ZERO_TOL)] = 0
    out[failed_nonsym & ~failed_sym] = 1
    out[failed_sym & ~failed_nonsym] = -1
    out[failed_nonsym & failed_sym] = 0
    return out.astype(int)


def cell_rng(seed: int, cell_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell_index,)))


def cell_diffs(
    layout: Layout,
    point,
    sigma: float,
    realizations: int,
    seed: int,
    cell_index: int,
    noise_target: str = "per_filtered_diff",
) -> np.ndarray:
    """(realizations, n, n) stack of filtered difference matrices for one cell.

    Both solvers consume exactly these matrices.
    """
    B = layout.station_array
    m = np.asarray(point, dtype=float)
    r = np.linalg.norm(B - m, axis=1)
    rng = cell_rng(seed, cell_index)
    if noise_target == "per_filtered_diff":
        truth = np.broadcast_to(r[:, None] - r[None, :], (realizations, layout.n, layout.n))
        if sigma == 0:
            return truth.copy()
        return truth + pair_noise(layout.n, sigma, rng, realizations)
    if noise_target == "per_range":
        L = r + (rng.normal(0.0, sigma, (realizations, layout.n)) if sigma > 0 else 0.0)
        L = np.broadcast_to(L, (realizations, layout.n))
        return L[:, :, None] - L[:, None, :]
    raise ValueError(f"unknown noise target {noise_target!r}")


def _best_reference_batch(B: np.ndarray, D: np.ndarray):
    # condition of every reference candidate, then lowest index within the tie band
    n = B.shape[0]
    sols, conds, oks = [], [], []
    for r in range(n):
        a, b = nonsym_arrays(B, D, r)
        x, c, ok = lstsq_batch(a, b)
        sols.append(x)
        conds.append(c)
        oks.append(ok)
    conds = np.stack(conds)  # (n, K)
    best = conds.min(axis=0)
    within = conds <= best * (1 + TIE_RTOL)
    pick = np.argmax(within, axis=0)
    k = np.arange(D.shape[0])
    x = np.stack(sols)[pick, k]
    ok = np.stack(oks)[pick, k] & np.isfinite(best)
    return x, ok


def _eval_chunk(layout, points, first_index, sigma, realizations, mode, seed, noise_target):
    B = layout.station_array
    d = layout.d
    D = np.concatenate([
        cell_diffs(layout, p, sigma, realizations, seed, first_index + c, noise_target)
        for c, p in enumerate(points)
    ])
    truth = np.repeat(points, realizations, axis=0)

    xs, _, ok_s = lstsq_batch(*sym_arrays(B, D))
    if mode == "best":
        xn, ok_n = _best_reference_batch(B, D)
    else:
        xn, _, ok_n = lstsq_batch(*nonsym_arrays(B, D, mode))

    shape = (len(points), realizations)
    e_s = np.linalg.norm(xs[:, :d] - truth, axis=1).reshape(shape)
    e_n = np.linalg.norm(xn[:, :d] - truth, axis=1).reshape(shape)
    return e_n, ok_n.reshape(shape), e_s, ok_s.reshape(shape)


def _chunks(total: int):
    return [(lo, min(lo + CHUNK_CELLS, total)) for lo in range(0, total, CHUNK_CELLS)]


def _cell_mean(err: np.ndarray, ok: np.ndarray) -> np.ndarray:
    good = ok.sum(axis=1)
    total = np.where(ok, err, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(good > 0, total / good, np.nan)


def grid_eval(
    layout: Layout,
    grid: GridSpec,
    noise_sigma: float,
    realizations: int = 25,
    mode: int | str = 0,
    seed: int = 0,
    workers: int = 1,
    noise_target: str = "per_filtered_diff",
) -> GridReport:
    """Compare both solvers over a grid of transponder positions.

    ``mode`` is a 0-based fixed reference station or ``"best"``. Per-cell errors
    are means over ``realizations`` noise draws; ``diff = err_nonsym - err_sym``.
    """
    check_layout(layout)
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    if not noise_sigma >= 0:
        raise ValueError("noise sigma must be >= 0")
    mode = parse_mode(mode)
    if mode != "best" and not 0 <= mode < layout.n:
        raise IndexError(f"reference index {mode} out of range for {layout.n} stations")

    pts = _embed(grid.points(), layout.d)
    spans = _chunks(len(pts))

    def run(span):
        lo, hi = span
        return _eval_chunk(layout, pts[lo:hi], lo, noise_sigma, realizations, mode, seed, noise_target)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]

    e_n, ok_n, e_s, ok_s = (np.concatenate(p) for p in zip(*parts))
    err_n, err_s = _cell_mean(e_n, ok_n), _cell_mean(e_s, ok_s)
    failed_n, failed_s = ~ok_n.all(axis=1), ~ok_s.all(axis=1)
    diff = err_n - err_s

    config = {
        "layout": layout.to_dict(),
        "grid": asdict(grid),
        "noise_sigma": float(noise_sigma),
        "noise_target": noise_target,
        "realizations": int(realizations),
        "mode": mode if mode == "best" else {"ref": int(mode)},
    }
    return GridReport(
        points=pts,
        err_nonsym=err_n,
        err_sym=err_s,
        diff=diff,
        failed_nonsym=failed_n,
        failed_sym=failed_s,
        outcome=classify(diff, failed_n, failed_s),
        config=config,
        seed=int(seed),
    )


def condition_at(layout: Layout, points, variant: str = "sym", ref: int = 0) -> np.ndarray:
    """Noise-free coefficient-matrix condition for transponders at ``points``."""
    check_layout(layout)
    B = layout.station_array
    P = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(P[:, None, :] - B[None], axis=2)
    D = r[:, :, None] - r[:, None, :]
    if variant == "sym":
        a, _ = sym_arrays(B, D)
    elif variant == "nonsym":
        if not 0 <= ref < layout.n:
            raise IndexError(f"reference index {ref} out of range for {layout.n} stations")
        a, _ = nonsym_arrays(B, D, ref)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return condition_batch(a)


def condition_map(layout: Layout, grid: GridSpec, variant: str = "sym", ref: int = 0):
    """``(points, conditions)`` over the grid; singular cells report ``inf``."""
    pts = _embed(grid.points(), layout.d)
    return pts, condition_at(layout, pts, variant, ref)


def summarize(report: GridReport) -> dict:
    pos, neg = report.pct_positive, report.pct_negative
    if neg > 0:
        rel = 100.0 * (pos - neg) / neg
    else:
        rel = 0.0 if pos == 0 else None  # undefined: no losses at all

    def stats(err):
        finite = err[np.isfinite(err)]
        if finite.size == 0:
            return {"mean": None, "median": None}
        return {"mean": float(finite.mean()), "median": float(np.median(finite))}

    return {
        "cells": report.cells,
        "pct_positive": pos,
        "pct_negative": neg,
        "pct_zero": report.pct_zero,
        "advantage_points": pos - neg,
        "advantage_relative_pct": rel,
        "err_nonsym": stats(report.err_nonsym),
        "err_sym": stats(report.err_sym),
        "failed_cells_nonsym": int(report.failed_nonsym.sum()),
        "failed_cells_sym": int(report.failed_sym.sum()),
        "config": report.config,
        "seed": report.seed,
        "version": __version__,
    }


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

GRID_HEADER = "x,y,err_nonsym,err_sym,diff,failed_nonsym,failed_sym"
CONDITION_HEADER = "x,y,cond"


def fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


def grid_csv(report: GridReport) -> str:
    lines = [GRID_HEADER]
    for k in range(report.cells):
        x, y = report.points[k, :2]
        lines.append(",".join([
            fmt(x), fmt(y),
            fmt(report.err_nonsym[k]), fmt(report.err_sym[k]), fmt(report.diff[k]),
            str(int(report.failed_nonsym[k])), str(int(report.failed_sym[k])),
        ]))
    return "\n".join(lines) + "\n"


def condition_csv(points: np.ndarray, conds: np.ndarray) -> str:
    lines = [CONDITION_HEADER]
    lines += [f"{fmt(p[0])},{fmt(p[1])},{fmt(c)}" for p, c in zip(points, conds)]
    return "\n".join(lines) + "\n"


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_condition_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    pts = np.array([[float(r[0]), float(r[1])] for r in rows])
    conds = np.array([float(r[2]) for r in rows])
    return pts, conds


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
