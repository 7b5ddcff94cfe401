"""Command-line driver: ``lpmdirect {simulate,solve,grid,condmap}``.

Station numbers on the command line and in config files are 1-based.

Exit codes: 0 success, 2 invalid config / layout, 3 rank-deficient system,
4 I/O failure. Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bench import (
    GridSpec,
    atomic_write,
    condition_csv,
    condition_map,
    grid_csv,
    grid_eval,
    summarize,
    summary_json,
)
from .filtering import FilterKind, filter_series
from .model import EpochMeasurement, Layout, LayoutError, validate_layout
from .presets import HEXAGON_TABLE, PAPER_VARIANCE, paper_pentagon
from .simulate import (
    NOISE_TARGETS,
    NoiseSpec,
    OffsetProcess,
    augment,
    diff_matrix,
    epochs_from_csv,
    epochs_to_csv,
    gen_epoch_series,
    truth_diff_matrix,
)
from .solver import RankDeficientError, solve_nonsym, solve_sym

log = logging.getLogger("lpmdirect")

EXIT_INVALID = 2
EXIT_RANK = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    stations: list = field(default_factory=lambda: [list(p) for p in HEXAGON_TABLE])
    reference: list = field(default_factory=lambda: [0.0, 0.0])
    dimension: int | None = None
    grid: dict = field(default_factory=lambda: asdict(GridSpec()))
    sigma: float | None = None
    variance: float | None = PAPER_VARIANCE
    noise_target: str = "per_filtered_diff"
    realizations: int = 25
    mode: int | str = 1  # 1-based reference station, or "best"
    variant: str = "sym"
    filter: dict = field(default_factory=lambda: {"kind": "passthrough"})
    offsets: dict = field(default_factory=lambda: {"kind": "iid_uniform", "lo": -1.5e5, "hi": 1.5e5})
    trajectory: list = field(default_factory=lambda: [[3.0, 4.0]])
    seed: int = 0
    out: str = "out"

    # -- conversion -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw or {})
        if "layout" in raw:  # nested form
            lay = raw.pop("layout") or {}
            for key in ("stations", "reference", "dimension"):
                if key in lay:
                    raw[key] = lay[key]
        if "noise" in raw:
            noise = raw.pop("noise") or {}
            for key in ("sigma", "variance"):
                raw[key] = noise.get(key)
            if "target" in noise:
                raw["noise_target"] = noise["target"]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, text: str) -> "RunConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(raw or {})

    # -- derived objects -------------------------------------------------

    def validate(self) -> None:
        if (self.sigma is None) == (self.variance is None):
            raise ConfigError("give exactly one of sigma / variance")
        if self.noise_sigma < 0 or not math.isfinite(self.noise_sigma):
            raise ConfigError("noise must be finite and >= 0")
        if self.noise_target not in NOISE_TARGETS:
            raise ConfigError(f"noise target must be one of {NOISE_TARGETS}")
        if int(self.realizations) < 1:
            raise ConfigError("realizations must be >= 1")
        if self.variant not in ("sym", "nonsym"):
            raise ConfigError("variant must be 'sym' or 'nonsym'")
        if self.mode != "best":
            if not isinstance(self.mode, int) or not 1 <= self.mode <= len(self.stations):
                raise ConfigError(f"reference station must be 'best' or 1..{len(self.stations)}, got {self.mode!r}")
        dims = {len(s) for s in self.stations} | {len(self.reference)}
        if len(dims) != 1 or (self.dimension is not None and dims != {self.dimension}):
            raise ConfigError("station / reference coordinates disagree on dimension")
        try:
            self.grid_spec()
            self.filter_kind()
            self.offset_process()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def noise_sigma(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return math.sqrt(float(self.variance))

    def layout(self) -> Layout:
        try:
            return Layout.from_coords(self.stations, self.reference)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad layout: {exc}") from exc

    def grid_spec(self) -> GridSpec:
        return GridSpec(**self.grid)

    def filter_kind(self) -> FilterKind:
        return FilterKind(**self.filter)

    def offset_process(self) -> OffsetProcess:
        return OffsetProcess(**self.offsets)

    def ref_mode(self) -> int | str:
        """Reference mode with the station converted to a 0-based index."""
        return "best" if self.mode == "best" else self.mode - 1


def preset(name: str) -> RunConfig:
    if name == "paper-hexagon":
        return RunConfig()
    if name == "paper-pentagon":
        lay = paper_pentagon()
        return RunConfig(stations=[list(s.coords) for s in lay.stations])
    raise ConfigError(f"unknown preset {name!r}; choose paper-hexagon or paper-pentagon")


# ---------------------------------------------------------------------------


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


def _fail_json(err: CliError) -> str:
    return json.dumps({"error": err.kind, "message": str(err), **err.extra}, sort_keys=True)


def _checked_layout(cfg: RunConfig) -> Layout:
    layout = cfg.layout()
    violations = validate_layout(layout)
    if violations:
        raise CliError(
            EXIT_INVALID,
            "invalid_layout",
            "; ".join(v.message for v in violations),
            violations=[{"code": v.code, "message": v.message, "stations": [i + 1 for i in v.stations]} for v in violations],
        )
    return layout


def _write_outputs(files: dict[Path, str]) -> None:
    """Write every file or none of them."""
    written = []
    try:
        for path in files:
            path.parent.mkdir(parents=True, exist_ok=True)
        staged = {}
        for path, text in files.items():
            tmp = path.with_name(f".{path.name}.partial")
            atomic_write(tmp, text)
            staged[path] = tmp
        for path, tmp in staged.items():
            os.replace(tmp, path)
            written.append(path)
    except OSError as exc:
        for path in files:
            for p in (path.with_name(f".{path.name}.partial"),):
                if p.exists():
                    p.unlink()
        for p in written:
            if p.exists():
                p.unlink()
        raise CliError(EXIT_IO, "io_error", str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig, args) -> int:
    layout = _checked_layout(cfg)
    trajectory = cfg.trajectory
    if args.position:
        trajectory = [args.position] * args.epochs
    rng = np.random.default_rng(cfg.seed)
    noise_sigma = cfg.noise_sigma if cfg.noise_target == "per_range" else 0.0
    try:
        series = gen_epoch_series(layout, trajectory, cfg.offset_process(), NoiseSpec(noise_sigma, "per_range"), rng)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, "invalid_config", str(exc)) from exc
    path = Path(cfg.out) / "epochs.csv"
    _write_outputs({path: epochs_to_csv(series)})
    print(json.dumps({"epochs": len(series), "path": str(path)}))
    return 0


def _read_epochs(args, layout: Layout):
    if args.pseudo is not None:
        if len(args.pseudo) != layout.n:
            raise CliError(EXIT_INVALID, "invalid_input", f"expected {layout.n} pseudo-ranges, got {len(args.pseudo)}")
        return [EpochMeasurement(args.pseudo)]
    if args.epochs_csv is None:
        raise CliError(EXIT_INVALID, "invalid_input", "give --epochs-csv PATH or --pseudo v1,v2,...")
    try:
        text = Path(args.epochs_csv).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, "io_error", str(exc)) from exc
    try:
        epochs = epochs_from_csv(text)
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_INVALID, "invalid_input", f"bad epoch CSV: {exc}") from exc
    if any(e.n != layout.n for e in epochs):
        raise CliError(EXIT_INVALID, "invalid_input", f"epochs must carry {layout.n} ranges")
    return epochs


def cmd_solve(cfg: RunConfig, args) -> int:
    layout = _checked_layout(cfg)
    epochs = [augment(e, layout) for e in _read_epochs(args, layout)]
    kind = cfg.filter_kind()
    if kind.kind == "synthetic" and all(e.truth is not None for e in epochs):
        # synthetic filtering error is defined around the true differences
        raw = [truth_diff_matrix(layout, e.truth.position) for e in epochs]
    else:
        raw = [diff_matrix(e) for e in epochs]
    filtered = filter_series(raw, kind, np.random.default_rng(cfg.seed))
    ref = cfg.ref_mode()
    for e, f in zip(epochs, filtered):
        try:
            if cfg.variant == "sym":
                res = solve_sym(layout, f)
            else:
                res = solve_nonsym(layout, f, e.augmented, ref)
        except RankDeficientError as exc:
            raise CliError(EXIT_RANK, "rank_deficient", str(exc)) from exc
        out = res.to_dict()
        if out.get("ref") is not None:
            out["ref"] += 1
        if e.truth is not None:
            out["error"] = float(np.linalg.norm(res.position - np.asarray(e.truth.position)))
        print(json.dumps(out, sort_keys=True))
    return 0


def cmd_grid(cfg: RunConfig, args) -> int:
    layout = _checked_layout(cfg)
    report = grid_eval(
        layout,
        cfg.grid_spec(),
        cfg.noise_sigma,
        int(cfg.realizations),
        cfg.ref_mode(),
        int(cfg.seed),
        workers=args.threads,
        noise_target=cfg.noise_target,
    )
    summary = summarize(report)
    # report station numbers the way the user gave them
    if isinstance(summary["config"]["mode"], dict):
        summary["config"]["mode"] = {"ref": cfg.mode}
    text = summary_json(summary)
    out = Path(cfg.out)
    _write_outputs({out / "grid.csv": grid_csv(report), out / "summary.json": text})
    sys.stdout.write(text)
    return 0


def cmd_condmap(cfg: RunConfig, args) -> int:
    layout = _checked_layout(cfg)
    variant = args.variant or cfg.variant
    if variant == "nonsym":
        ref = cfg.ref_mode()
        if ref == "best":
            raise CliError(EXIT_INVALID, "invalid_config", "condmap needs a fixed reference station")
        name = f"condmap_nonsym_ref{ref + 1}.csv"
    else:
        ref = 0
        name = "condmap_sym.csv"
    pts, conds = condition_map(layout, cfg.grid_spec(), variant, ref)
    path = Path(cfg.out) / name
    _write_outputs({path: condition_csv(pts, conds)})
    finite = conds[np.isfinite(conds)]
    print(json.dumps({
        "path": str(path),
        "cells": int(len(conds)),
        "singular_cells": int(len(conds) - len(finite)),
        "cond_min": float(finite.min()) if finite.size else None,
        "cond_max": float(finite.max()) if finite.size else None,
    }, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ref(text: str):
    if text == "best":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"reference must be a station number or 'best', got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--preset", help="paper-hexagon | paper-pentagon")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--sigma", type=float, help="noise standard deviation (m)")
    common.add_argument("--variance", type=float, help="noise variance (m^2)")
    common.add_argument("--noise-target", choices=NOISE_TARGETS)
    common.add_argument("--realizations", type=int)
    common.add_argument("--ref", type=_ref, help="reference station number (1-based) or 'best'")
    common.add_argument("--step", type=float, help="grid step (m)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lpmdirect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic epoch CSV")
    s.add_argument("--position", type=_floats, help="stationary transponder position x,y[,z]")
    s.add_argument("--epochs", type=int, default=1)

    s = sub.add_parser("solve", parents=[common], help="solve epochs and print JSON lines")
    s.add_argument("--epochs-csv", help="epoch CSV as written by 'simulate'")
    s.add_argument("--pseudo", type=_floats, help="inline pseudo-ranges for one epoch")
    s.add_argument("--variant", choices=("sym", "nonsym"))

    sub.add_parser("grid", parents=[common], help="grid Monte Carlo comparison")

    s = sub.add_parser("condmap", parents=[common], help="condition-number map")
    s.add_argument("--variant", choices=("sym", "nonsym"))
    return p


def load_config(args) -> RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise CliError(EXIT_IO, "io_error", str(exc)) from exc
        cfg = RunConfig.load(text)
    else:
        cfg = preset(args.preset or "paper-hexagon")
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")

    if args.sigma is not None and args.variance is not None:
        raise ConfigError("give exactly one of --sigma / --variance")
    if args.sigma is not None:
        cfg.sigma, cfg.variance = args.sigma, None
    if args.variance is not None:
        cfg.sigma, cfg.variance = None, args.variance
    for name in ("seed", "out", "realizations", "noise_target"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if args.ref is not None:
        cfg.mode = args.ref
    if args.step is not None:
        cfg.grid = {**cfg.grid, "step": args.step}
    if getattr(args, "variant", None):
        cfg.variant = args.variant
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg.validate()
    return cfg


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "grid": cmd_grid,
    "condmap": cmd_condmap,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        log.debug("config: %s", cfg.to_dict())
        return COMMANDS[args.command](cfg, args)
    except CliError as err:
        print(_fail_json(err), file=sys.stderr)
        return err.code
    except (ConfigError, LayoutError) as exc:
        print(_fail_json(CliError(EXIT_INVALID, "invalid_config", str(exc))), file=sys.stderr)
        return EXIT_INVALID
    except RankDeficientError as exc:
        print(_fail_json(CliError(EXIT_RANK, "rank_deficient", str(exc))), file=sys.stderr)
        return EXIT_RANK
    except OSError as exc:
        print(_fail_json(CliError(EXIT_IO, "io_error", str(exc))), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
