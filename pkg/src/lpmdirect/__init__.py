"""Filtered direct (closed-form) solvers for asynchronous LPM / TDOA localisation."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DiffMatrix,
    DimensionError,
    EpochMeasurement,
    Layout,
    LayoutError,
    Point,
    SolveResult,
    Truth,
    Violation,
    distance,
    validate_layout,
)
from .solver import (  # noqa: E402
    LinearSystem,
    RankDeficientError,
    build_nonsym_from_diffs,
    build_nonsym_system,
    build_sym_system,
    condition_number,
    pair_sum_known_part,
    reconstruct_ranges_nonsym,
    select_best_reference,
    solve_ls,
    solve_nonsym,
    solve_sym,
)

__all__ = [
    "DiffMatrix",
    "DimensionError",
    "EpochMeasurement",
    "Layout",
    "LayoutError",
    "LinearSystem",
    "Point",
    "RankDeficientError",
    "SolveResult",
    "Truth",
    "Violation",
    "build_nonsym_from_diffs",
    "build_nonsym_system",
    "build_sym_system",
    "condition_number",
    "distance",
    "pair_sum_known_part",
    "reconstruct_ranges_nonsym",
    "select_best_reference",
    "solve_ls",
    "solve_nonsym",
    "solve_sym",
    "validate_layout",
]
