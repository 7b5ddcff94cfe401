import json

import numpy as np
import pytest

from lpmdirect.bench import (
    GRID_HEADER,
    GridReport,
    GridSpec,
    cell_diffs,
    classify,
    condition_at,
    condition_csv,
    condition_map,
    grid_csv,
    grid_eval,
    read_condition_csv,
    summarize,
    summary_json,
)
from lpmdirect.model import DiffMatrix, Layout, LayoutError
from lpmdirect.solver import RankDeficientError, solve_nonsym, solve_sym

SMALL = GridSpec(-12, 12, -12, 12, 4.0)
SIGMA = float(np.sqrt(0.064))


def rotate(points, deg):
    t = np.deg2rad(deg)
    R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    return points @ R.T


def test_grid_points_layout():
    pts = GridSpec().points()
    assert pts.shape == (61 * 61, 2)
    assert tuple(pts[0]) == (-30, -30) and tuple(pts[1]) == (-29, -30) and tuple(pts[-1]) == (30, 30)
    assert GridSpec(0, 0, 0, 0, 1).points().shape == (1, 2)


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(step=0)
    with pytest.raises(ValueError):
        GridSpec(x_min=1, x_max=0)


def test_zero_noise_is_all_ties(hexagon):
    rep = grid_eval(hexagon, SMALL, 0.0, realizations=2, seed=3)
    assert rep.pct_zero == 100.0
    assert np.nanmax(rep.err_sym) <= 1e-9 and np.nanmax(rep.err_nonsym) <= 1e-9
    assert rep.pct_positive + rep.pct_negative + rep.pct_zero == pytest.approx(100, abs=1e-9)


def test_zero_noise_centre_failure_is_flagged(regular_hexagon):
    rep = grid_eval(regular_hexagon, SMALL, 0.0, realizations=1, seed=0)
    centre = np.flatnonzero(np.all(rep.points == 0, axis=1))[0]
    assert rep.failed_sym[centre] and rep.failed_nonsym[centre]
    assert rep.outcome[centre] == 0
    assert rep.failed_sym.sum() == 1


def test_both_solvers_get_identical_inputs(hexagon):
    """Recompute a few cells with the scalar solvers from the same matrices."""
    seed, R = 5, 4
    rep = grid_eval(hexagon, SMALL, SIGMA, realizations=R, mode=0, seed=seed)
    for c in (0, 7, 20, len(rep.points) - 1):
        stack = cell_diffs(hexagon, rep.points[c], SIGMA, R, seed, c)
        es, en = [], []
        for D in stack:
            D = DiffMatrix(D, "filtered")
            es.append(np.linalg.norm(solve_sym(hexagon, D).position - rep.points[c]))
            en.append(np.linalg.norm(solve_nonsym(hexagon, D, 0.0, 0).position - rep.points[c]))
        assert rep.err_sym[c] == pytest.approx(np.mean(es), abs=1e-9)
        assert rep.err_nonsym[c] == pytest.approx(np.mean(en), abs=1e-9)
        assert rep.diff[c] == pytest.approx(np.mean(en) - np.mean(es), abs=1e-9)


def test_best_mode_recompute(hexagon):
    seed, R = 8, 3
    rep = grid_eval(hexagon, SMALL, SIGMA, realizations=R, mode="best", seed=seed)
    c = 11
    stack = cell_diffs(hexagon, rep.points[c], SIGMA, R, seed, c)
    en = [
        np.linalg.norm(solve_nonsym(hexagon, DiffMatrix(D, "filtered"), 0.0, "best").position - rep.points[c])
        for D in stack
    ]
    assert rep.err_nonsym[c] == pytest.approx(np.mean(en), abs=1e-9)


def test_deterministic_across_workers(hexagon):
    a = grid_eval(hexagon, GridSpec(-20, 20, -20, 20, 2.0), SIGMA, 3, 0, seed=1, workers=1)
    b = grid_eval(hexagon, GridSpec(-20, 20, -20, 20, 2.0), SIGMA, 3, 0, seed=1, workers=4)
    assert grid_csv(a) == grid_csv(b)
    assert summary_json(summarize(a)) == summary_json(summarize(b))
    c = grid_eval(hexagon, GridSpec(-20, 20, -20, 20, 2.0), SIGMA, 3, 0, seed=2)
    assert grid_csv(a) != grid_csv(c)


def test_more_noise_does_not_shrink_median_error(hexagon):
    grid = GridSpec(-15, 15, -15, 15, 3.0)
    lo = [np.nanmedian(grid_eval(hexagon, grid, SIGMA, 3, 0, seed=s).err_sym) for s in range(10)]
    hi = [np.nanmedian(grid_eval(hexagon, grid, 2 * SIGMA, 3, 0, seed=s).err_sym) for s in range(10)]
    assert np.mean(hi) >= np.mean(lo)
    assert sum(h >= l for h, l in zip(hi, lo)) >= 9


def test_grid_eval_errors(hexagon):
    with pytest.raises(ValueError):
        grid_eval(hexagon, SMALL, SIGMA, realizations=0)
    with pytest.raises(IndexError):
        grid_eval(hexagon, SMALL, SIGMA, mode=6)
    with pytest.raises(LayoutError):
        grid_eval(Layout.from_coords([(0, 0), (1, 0), (2, 0), (3, 0)]), SMALL, SIGMA)


def test_per_range_noise_target(hexagon):
    rep = grid_eval(hexagon, SMALL, SIGMA, 2, 0, seed=0, noise_target="per_range")
    assert np.all(np.isfinite(rep.err_sym))
    with pytest.raises(ValueError):
        grid_eval(hexagon, SMALL, SIGMA, 2, 0, seed=0, noise_target="bogus")


# -- classification and summary -------------------------------------------------------


def fake_report(outcomes):
    outcomes = np.asarray(outcomes)
    k = len(outcomes)
    diff = outcomes.astype(float)
    return GridReport(
        points=np.zeros((k, 2)),
        err_nonsym=1.0 + np.maximum(diff, 0),
        err_sym=1.0 + np.maximum(-diff, 0),
        diff=diff,
        failed_nonsym=np.zeros(k, bool),
        failed_sym=np.zeros(k, bool),
        outcome=classify(diff, np.zeros(k, bool), np.zeros(k, bool)),
    )


def test_summary_advantage_metrics():
    rep = fake_report([1] * 5611 + [-1] * 4388 + [0])
    s = summarize(rep)
    assert s["pct_positive"] == pytest.approx(56.11)
    assert s["pct_negative"] == pytest.approx(43.88)
    assert s["advantage_points"] == pytest.approx(12.23)
    assert s["advantage_relative_pct"] == pytest.approx(100 * 12.23 / 43.88)
    assert s["advantage_relative_pct"] == pytest.approx(27.87, abs=0.01)


def test_summary_all_zero():
    s = summarize(fake_report([0] * 10))
    assert s["advantage_points"] == 0 and s["advantage_relative_pct"] == 0
    assert s["pct_zero"] == 100


def test_summary_sign_flip_swaps():
    base = [1, 1, 1, -1, 0, -1, 1]
    a, b = summarize(fake_report(base)), summarize(fake_report([-x for x in base]))
    assert a["pct_positive"] == b["pct_negative"] and a["pct_negative"] == b["pct_positive"]


def test_classify_failures():
    diff = np.array([0.5, -0.5, np.nan, np.nan, 1e-12])
    fn = np.array([False, True, True, False, False])
    fs = np.array([False, False, True, True, False])
    assert list(classify(diff, fn, fs)) == [1, 1, 0, -1, 0]


# -- condition maps -----------------------------------------------------------------------


def test_sym_condition_map_rotation_invariant(regular_hexagon):
    pts, conds = condition_map(regular_hexagon, GridSpec(-30, 30, -30, 30, 3.0), "sym")
    rot = condition_at(regular_hexagon, rotate(pts, 60), "sym")
    finite = np.isfinite(conds)
    assert np.array_equal(finite, np.isfinite(rot))
    assert np.max(np.abs(rot[finite] - conds[finite]) / conds[finite]) <= 1e-6


def test_nonsym_condition_map_not_rotation_invariant(regular_hexagon):
    pts, conds = condition_map(regular_hexagon, GridSpec(-30, 30, -30, 30, 3.0), "nonsym", 0)
    rot = condition_at(regular_hexagon, rotate(pts, 60), "nonsym", 0)
    ok = np.isfinite(conds) & np.isfinite(rot)
    assert np.max(np.abs(rot[ok] - conds[ok]) / conds[ok]) > 1e-3


def test_condition_map_values(hexagon):
    for variant in ("sym", "nonsym"):
        _, conds = condition_map(hexagon, SMALL, variant, 0)
        assert np.all(conds >= 1)


def test_condition_map_singular_centre(regular_hexagon):
    conds = condition_at(regular_hexagon, [[0.0, 0.0]], "sym")
    assert np.isinf(conds[0])
    with pytest.raises(RankDeficientError):
        solve_sym(regular_hexagon, DiffMatrix(np.zeros((6, 6))))


def test_condition_map_bad_args(hexagon):
    with pytest.raises(IndexError):
        condition_map(hexagon, SMALL, "nonsym", 6)
    with pytest.raises(ValueError):
        condition_map(hexagon, SMALL, "other")


# -- serialisation --------------------------------------------------------------------------


def test_grid_csv_format(hexagon):
    rep = grid_eval(hexagon, GridSpec(0, 1, 0, 0, 1.0), SIGMA, 2, 0, seed=0)
    lines = grid_csv(rep).splitlines()
    assert lines[0] == GRID_HEADER
    assert len(lines) == 3
    fields = lines[1].split(",")
    assert fields[:2] == ["0", "0"]
    assert fields[-2:] in (["0", "0"], ["1", "0"], ["0", "1"], ["1", "1"])
    assert float(fields[2]) == pytest.approx(rep.err_nonsym[0], rel=1e-8)


def test_condition_csv_inf(regular_hexagon):
    pts, conds = condition_map(regular_hexagon, GridSpec(-1, 1, 0, 0, 1.0), "sym")
    text = condition_csv(pts, conds)
    assert text.splitlines()[0] == "x,y,cond"
    assert text.splitlines()[2] == "0,0,inf"
    p2, c2 = read_condition_csv(text)
    assert np.array_equal(p2, pts) and np.isinf(c2[1])


def test_summary_json_is_strict(hexagon):
    rep = grid_eval(hexagon, SMALL, SIGMA, 2, "best", seed=0)
    text = summary_json(summarize(rep))
    data = json.loads(text)
    assert data["config"]["mode"] == "best"
    assert data["seed"] == 0 and "version" in data
