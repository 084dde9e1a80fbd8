"""Command-line entry point: ``alpe-lob {gen-synth,importance,run,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import evaluation as ev
from .baselines import ConfigError
from .config import RunConfig, load_config
from .features import FeatureOverflow, apply_minmax, feature_matrix, feature_names, fit_minmax
from .importance import compute_importance
from .lob_ingest import LobDataError, LobEvent, generate_synthetic_stream, mids, read_lob_csv, write_lob_csv

log = logging.getLogger("alpe_lob")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class DataError(Exception):
    pass


def synth_stock_ids(cfg: RunConfig) -> list[str]:
    if cfg.n_stocks == 1:
        return [cfg.stock or "synth"]
    return [f"synth{i}" for i in range(cfg.n_stocks)]


def synth_streams(cfg: RunConfig) -> dict[str, list[LobEvent]]:
    out = {}
    for i, stock in enumerate(synth_stock_ids(cfg)):
        sc = dataclasses.replace(cfg.synth, seed=cfg.synth.seed + i)
        out[stock] = generate_synthetic_stream(sc)
    return out


def load_streams(cfg: RunConfig) -> dict[str, list[LobEvent]]:
    """Input files when configured (stock id = file stem), else synthetic streams."""
    if not cfg.inputs:
        return synth_streams(cfg)
    streams = {}
    for p in cfg.inputs:
        stock = cfg.stock or Path(p).stem
        if stock in streams:
            raise ConfigError(f"two inputs map to stock id {stock!r}")
        try:
            streams[stock] = read_lob_csv(p, cfg.policy)
        except LobDataError as exc:
            raise DataError(f"{p}: {exc}") from None
    return streams


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


def cmd_gen_synth(cfg: RunConfig) -> list[Path]:
    out = _out_dir(cfg)
    paths = []
    for stock, events in synth_streams(cfg).items():
        path = out / f"{stock}.csv"
        try:
            write_lob_csv(path, events)
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from None
        paths.append(path)
        log.info("wrote %d events to %s", len(events), path)
    return paths


def cmd_importance(cfg: RunConfig) -> list[Path]:
    """One ``feature,score`` file per (stock, base feature set, method)."""
    methods = [m for m in cfg.importance if m != "none"] or ["mdi", "gd"]
    if cfg.calibration < 3:
        raise ConfigError(f"experiment.calibration={cfg.calibration} is too short for importance (need >= 3)")
    out = _out_dir(cfg)
    paths = []
    for stock, events in load_streams(cfg).items():
        if len(events) < cfg.calibration:
            raise DataError(f"{stock}: {len(events)} events, shorter than the calibration prefix {cfg.calibration}")
        prefix = events[:cfg.calibration]
        y = mids(prefix)[1:]
        for base in cfg.bases:
            X = feature_matrix(prefix, base, cfg.kernel)
            Xs = apply_minmax(fit_minmax(X), X)[:-1]
            for method in methods:
                params = cfg.mdi if method == "mdi" else cfg.gd
                vec = compute_importance(method, Xs, y, ev.importance_seed(cfg.master_seed, stock), **params)
                path = out / f"importance_{stock}_{base}_{method}.csv"
                _write(path, vec.to_csv(feature_names(base)))
                paths.append(path)
    return paths


def cmd_run(cfg: RunConfig) -> dict[str, Path]:
    streams = load_streams(cfg)
    out = _out_dir(cfg)
    results = ev.run_grid(streams, cfg.models, cfg.feature_sets, cfg.n_runs, cfg.master_seed,
                          cfg.protocol(), cfg.jobs)
    summaries = ev.summarize_grid(results)
    paths = {"results": out / "results.csv", "summary": out / "summary.csv", "volumes": out / "volumes.csv"}
    _write(paths["results"], ev.format_results(results))
    _write(paths["summary"], ev.format_summaries(summaries))
    _write(paths["volumes"], ev.format_volumes({s: ev.mean_volume(e) for s, e in streams.items()}))
    return paths


def cmd_report(cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.out_dir)
    summary_path = out / "summary.csv"
    if not summary_path.is_file():
        raise ConfigError(f"no summary file at {summary_path}; run 'run' first or set output.dir")
    try:
        summaries = ev.parse_summaries(summary_path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataError(f"{summary_path}: {exc}") from None
    volumes: dict[str, float] = {}
    vol_path = out / "volumes.csv"
    if vol_path.is_file():
        try:
            volumes = ev.parse_volumes(vol_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise DataError(f"{vol_path}: {exc}") from None

    paths = {}
    report = ev.significance_from_summaries(summaries)
    if report is None:
        print("significance tests skipped: need at least 2 models over at least 2 complete blocks",
              file=sys.stderr)
    else:
        paths["significance"] = out / "significance.csv"
        paths["friedman"] = out / "friedman.csv"
        _write(paths["significance"], ev.format_significance(report))
        _write(paths["friedman"], ev.format_friedman(report))
    paths["error_reduction"] = out / "error_reduction.csv"
    _write(paths["error_reduction"], ev.format_error_reduction(ev.error_reduction_rows(summaries)))
    paths["volume_profile"] = out / "volume_profile.csv"
    _write(paths["volume_profile"], ev.format_volume_profile(ev.volume_profile(summaries, volumes)))
    return paths


COMMANDS = {"gen-synth": cmd_gen_synth, "importance": cmd_importance, "run": cmd_run, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alpe-lob", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides experiment.master_seed)")
        p.add_argument("--jobs", type=int, help="worker processes (overrides experiment.jobs)")
    return parser


def _classify(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, LobDataError, FeatureOverflow, ValueError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.out is not None:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        cfg.validate(check_paths=args.command != "report")
        produced = COMMANDS[args.command](cfg)
    except ev.CellFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _classify(exc.cause)
    except Exception as exc:
        code = _classify(exc)
        label = {EXIT_CONFIG: "config error", EXIT_DATA: "data error"}.get(code, "internal error")
        print(f"{label}: {exc}", file=sys.stderr)
        return code
    items = produced.values() if isinstance(produced, dict) else produced
    for path in items:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
