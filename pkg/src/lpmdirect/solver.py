"""Closed-form position solvers fed by (filtered) range differences.

Two linear systems are built from the same antisymmetric difference matrix:

* non-symmetric: every station is differenced against one reference station
  ``ref``; its rows are ``(B_i - B_r).M - (L_i - L_r) O = ((|B_i|^2 - |B_r|^2) - (L_i^2 - L_r^2)) / 2``.
* symmetric: one row per unordered pair, with the unknown pair sum
  ``(L_i + L_j) / 2`` rewritten as ``S / n`` plus a part known from differences.
  ``O`` and ``S`` only ever appear as ``W = O - S / n``, which is the single
  nuisance unknown.

Unknown vectors are ordered as position components first, nuisance last.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DiffMatrix, Layout, SolveResult, check_layout

RANK_TOL = 1e-12  # sigma_min / sigma_max below this -> unsolvable
TIE_RTOL = 1e-9  # reference candidates this close in condition count as tied

_AXES = ("x", "y", "z")


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearSystem:
    """``a @ x ~= b``.

    When ``nuisance_shift`` is non-zero the last unknown is ``nuisance - nuisance_shift``;
    :func:`solve_ls` adds the shift back.
    """

    a: np.ndarray
    b: np.ndarray
    unknown_labels: tuple[str, ...]
    nuisance_shift: float = 0.0
    variant: str = ""
    ref: int | None = None

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if a.ndim != 2 or a.shape[0] != b.size:
            raise ValueError(f"shape mismatch: a {a.shape}, b {b.shape}")
        if a.shape[0] < a.shape[1]:
            raise ValueError("system must have at least as many rows as unknowns")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite entries in system")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    def residual_at(self, position, nuisance: float) -> np.ndarray:
        x = np.append(np.asarray(position, dtype=float), nuisance - self.nuisance_shift)
        return self.a @ x - self.b


def _labels(d: int, nuisance: str) -> tuple[str, ...]:
    return tuple(f"{ax}_M" for ax in _AXES[:d]) + (nuisance,)


def _check_ref(ref: int, n: int) -> int:
    if not 0 <= ref < n:
        raise IndexError(f"reference index {ref} out of range for {n} stations")
    return int(ref)


# ---------------------------------------------------------------------------
# non-symmetric (reference station) system
# ---------------------------------------------------------------------------

def reconstruct_ranges_nonsym(raw_l_ref: float, filtered: DiffMatrix, ref: int) -> np.ndarray:
    """Rebuild L_i = L_ref + F(L_i - L_ref) so all channels share the reference noise."""
    ref = _check_ref(ref, filtered.n)
    return raw_l_ref + filtered.delta[:, ref]


def build_nonsym_system(layout: Layout, l_hat, ref: int, literal: bool = False) -> LinearSystem:
    """Rows for every station i != ref, ascending.

    By default the offset unknown is solved relative to ``l_hat[ref]`` so the
    right-hand side never carries the (huge) offset. ``literal=True`` keeps the
    unshifted textbook right-hand side.
    """
    check_layout(layout)
    l_hat = np.asarray(l_hat, dtype=float)
    B = layout.station_array
    ref = _check_ref(ref, layout.n)
    if l_hat.size != layout.n:
        raise ValueError(f"expected {layout.n} ranges, got {l_hat.size}")
    rows = np.array([i for i in range(layout.n) if i != ref])

    dB = B[rows] - B[ref]
    sq = np.einsum("ij,ij->i", dB, B[rows] + B[ref])  # |B_i|^2 - |B_r|^2
    dl = l_hat[rows] - l_hat[ref]
    a = np.column_stack([dB, -dl])
    if literal:
        b = 0.5 * (sq - dl * (l_hat[rows] + l_hat[ref]))
        shift = 0.0
    else:
        b = 0.5 * (sq - dl * dl)
        shift = float(l_hat[ref])
    return LinearSystem(a, b, _labels(layout.d, "O"), shift, "nonsym", ref)


def build_nonsym_from_diffs(layout: Layout, filtered: DiffMatrix, raw_l_ref: float, ref: int) -> LinearSystem:
    """Shifted non-symmetric system taken straight from the filtered differences.

    Same system as ``build_nonsym_system(layout, reconstruct_ranges_nonsym(...), ref)``
    but skips adding and re-subtracting the reference range, which would round
    the differences at the offset's magnitude.
    """
    check_layout(layout)
    if filtered.n != layout.n:
        raise ValueError(f"difference matrix is {filtered.n}x{filtered.n}, layout has {layout.n} stations")
    ref = _check_ref(ref, layout.n)
    a, b = nonsym_arrays(layout.station_array, filtered.delta, ref)
    return LinearSystem(a, b, _labels(layout.d, "O"), float(raw_l_ref), "nonsym", ref)


# ---------------------------------------------------------------------------
# symmetric system
# ---------------------------------------------------------------------------

def pair_sum_known_part(filtered: DiffMatrix, i: int, j: int) -> float:
    """Difference-only part of (L_i + L_j) / 2, i.e. the value minus S / n."""
    n = filtered.n
    _check_ref(i, n)
    _check_ref(j, n)
    if i == j:
        raise ValueError("pair indices must differ")
    others = [k for k in range(n) if k != i and k != j]
    D = filtered.delta
    return float((D[i, others].sum() + D[j, others].sum()) / (2 * n))


def _known_parts(delta: np.ndarray, I: np.ndarray, J: np.ndarray) -> np.ndarray:
    # sum_{k != i,j} D_ik + sum_{k != i,j} D_jk == rowsum_i + rowsum_j by antisymmetry
    n = delta.shape[-1]
    rowsum = delta.sum(axis=-1)
    return (rowsum[..., I] + rowsum[..., J]) / (2 * n)


def build_sym_system(layout: Layout, filtered: DiffMatrix) -> LinearSystem:
    """One row per pair i < j in lexicographic order; nuisance W = O - S/n."""
    check_layout(layout)
    if filtered.n != layout.n:
        raise ValueError(f"difference matrix is {filtered.n}x{filtered.n}, layout has {layout.n} stations")
    a, b = sym_arrays(layout.station_array, filtered.delta)
    return LinearSystem(a, b, _labels(layout.d, "W"), 0.0, "sym")


def sym_arrays(B: np.ndarray, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric system arrays for one (n, n) or a stack (..., n, n) of matrices."""
    n = B.shape[0]
    I, J = np.triu_indices(n, 1)
    dB = B[I] - B[J]
    sq = np.einsum("ij,ij->i", dB, B[I] + B[J])
    d = delta[..., I, J]
    known = _known_parts(delta, I, J)
    a = np.empty(d.shape + (B.shape[1] + 1,))
    a[..., :-1] = dB
    a[..., -1] = -d
    b = 0.5 * sq - d * known
    return a, b


def nonsym_arrays(B: np.ndarray, delta: np.ndarray, ref: int) -> tuple[np.ndarray, np.ndarray]:
    """Shifted non-symmetric system arrays for a stack of difference matrices.

    Depends on the differences only; the reference range itself drops out.
    """
    n = B.shape[0]
    rows = np.array([i for i in range(n) if i != ref])
    dB = B[rows] - B[ref]
    sq = np.einsum("ij,ij->i", dB, B[rows] + B[ref])
    dl = delta[..., rows, ref]
    a = np.empty(dl.shape + (B.shape[1] + 1,))
    a[..., :-1] = dB
    a[..., -1] = -dl
    b = 0.5 * (sq - dl * dl)
    return a, b


# ---------------------------------------------------------------------------
# solving and diagnostics
# ---------------------------------------------------------------------------

def _singular_values(a: np.ndarray) -> np.ndarray:
    return np.linalg.svd(a, compute_uv=False)


def condition_number(sys) -> float:
    """sigma_max / sigma_min of the coefficient matrix; inf when numerically singular.

    Accepts a :class:`LinearSystem` or a bare matrix.
    """
    a = sys.a if isinstance(sys, LinearSystem) else np.asarray(sys, dtype=float)
    s = _singular_values(a)
    if s[0] == 0:
        return float("inf")
    if s[-1] <= s[0] * max(a.shape) * np.finfo(float).eps:
        return float("inf")
    return float(s[0] / s[-1])


def condition_batch(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`condition_number` over a stack of matrices."""
    s = np.linalg.svd(a, compute_uv=False)
    smax, smin = s[..., 0], s[..., -1]
    singular = smin <= smax * max(a.shape[-2:]) * np.finfo(float).eps
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(singular, np.inf, smax / smin)


def solve_ls(sys: LinearSystem, method: str = "qr") -> SolveResult:
    """Least-squares minimiser of ||a x - b||.

    ``method="qr"`` uses an orthogonal factorisation; ``method="normal"`` forms
    (A^T A)^-1 A^T b literally.
    """
    a, b = sys.a, sys.b
    s = _singular_values(a)
    if s[0] == 0 or s[-1] / s[0] < RANK_TOL:
        raise RankDeficientError(
            f"coefficient matrix is rank-deficient (sigma ratio {s[-1] / s[0] if s[0] else 0:.3g}); "
            "position is unobservable at this geometry"
        )
    if method == "qr":
        q, r = np.linalg.qr(a)
        x = np.linalg.solve(r, q.T @ b)
    elif method == "normal":
        x = np.linalg.solve(a.T @ a, a.T @ b)
    else:
        raise ValueError(f"unknown method {method!r}")
    residual = float(np.linalg.norm(a @ x - b))
    return SolveResult(
        position=x[:-1],
        nuisance=float(x[-1] + sys.nuisance_shift),
        condition=float(s[0] / s[-1]),
        residual=residual,
        variant=sys.variant,
        ref=sys.ref,
    )


def lstsq_batch(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve a stack of small least-squares problems with one batched SVD.

    Returns ``(x, condition, ok)``; rows with ``ok == False`` are rank-deficient
    and hold NaN solutions and infinite condition.
    """
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    smax, smin = s[..., 0], s[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = smin / smax
        ok = ratio >= RANK_TOL
        cond = np.where(ok, smax / smin, np.inf)
        coef = np.einsum("...ij,...i->...j", u, b) / s
        x = np.einsum("...ji,...j->...i", vt, coef)
    x[~ok] = np.nan
    return x, cond, ok


# ---------------------------------------------------------------------------
# reference selection and end-to-end helpers
# ---------------------------------------------------------------------------

def reference_conditions(layout: Layout, filtered: DiffMatrix) -> np.ndarray:
    """Condition of the non-symmetric system for every candidate reference."""
    check_layout(layout)
    conds = []
    for r in range(layout.n):
        conds.append(condition_number(build_nonsym_from_diffs(layout, filtered, 0.0, r)))
    return np.array(conds)


def pick_reference(conds: np.ndarray) -> int:
    """Lowest index whose condition is within TIE_RTOL of the minimum."""
    conds = np.asarray(conds, dtype=float)
    best = conds.min()
    if not np.isfinite(best):
        raise RankDeficientError("every reference choice gives a rank-deficient system")
    return int(np.flatnonzero(conds <= best * (1 + TIE_RTOL))[0])


def select_best_reference(layout: Layout, filtered: DiffMatrix) -> int:
    return pick_reference(reference_conditions(layout, filtered))


def solve_sym(layout: Layout, filtered: DiffMatrix, method: str = "qr") -> SolveResult:
    return solve_ls(build_sym_system(layout, filtered), method)


def solve_nonsym(
    layout: Layout,
    filtered: DiffMatrix,
    raw_l_ref: float,
    ref: int | str = 0,
    method: str = "qr",
) -> SolveResult:
    """Non-symmetric solve; ``ref="best"`` picks the best-conditioned reference.

    ``raw_l_ref`` is the unfiltered augmented range of the reference station
    (pass the vector of raw ranges to let ``ref="best"`` index into it).
    """
    if isinstance(ref, str):
        if ref != "best":
            raise ValueError(f"unknown reference mode {ref!r}")
        ref = select_best_reference(layout, filtered)
    raw = np.asarray(raw_l_ref, dtype=float)
    l_ref = float(raw[ref]) if raw.ndim else float(raw)
    return solve_ls(build_nonsym_from_diffs(layout, filtered, l_ref, ref), method)
