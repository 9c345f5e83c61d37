"""Command-line front end.

Subcommands: run one episode, run a batch, export maps/images, validate a
scenario file. Exit codes: 0 success, 2 episode failure (timeout or
collision abort), 3 setup/configuration error. All randomness flows from
the single --seed. VISTA_LOG_LEVEL in {error, warn, info, debug} controls
stderr logging; stdout carries only the result JSON for `run`.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("vista")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK = 0
EXIT_EPISODE_FAILED = 2
EXIT_SETUP = 3


def _setup_logging() -> None:
    level = os.environ.get("VISTA_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.WARNING),
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vista",
                                description="semantic exploration sandbox")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single episode")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--strategy",
                     choices=["vista", "semantic", "geometric"], default=None)
    run.add_argument("--query", default=None)
    run.add_argument("--out", default=None,
                     help="directory for the episode JSON log")

    batch = sub.add_parser("batch", help="run a scene x strategy x seed batch")
    batch.add_argument("--config", required=True)
    batch.add_argument("--out", required=True)

    exp = sub.add_parser("export", help="convert snapshots to PLY/PGM")
    exp.add_argument("--in", dest="input", required=True)
    exp.add_argument("--kind", choices=["ply", "pgm"], required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--channel", choices=["depth", "scaled"],
                     default="scaled",
                     help="pgm flavor: 16-bit depth or 8-bit scaled")

    val = sub.add_parser("validate", help="validate a scenario file")
    val.add_argument("--config", required=True)
    return p


def _cmd_run(args) -> int:
    from .config import ConfigError, load_config
    from .episode import SetupError, run_episode
    from .io import canonical_json, write_json
    from .simenv import SceneError

    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed, strategy=args.strategy,
                                 query=args.query)
        result = run_episode(cfg.scene, cfg.strategy, cfg, cfg.seed)
    except (ConfigError, SetupError, SceneError, FileNotFoundError) as exc:
        print("setup error: %s" % exc, file=sys.stderr)
        return EXIT_SETUP
    doc = result.to_dict()
    print(canonical_json(doc))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / ("episode-%s-%s-%d.json"
                          % (result.scene, result.strategy, result.seed)),
                   doc)
    return EXIT_OK if result.success else EXIT_EPISODE_FAILED


def _write_results_csv(path, rows) -> None:
    fields = ["scene", "strategy", "episodes", "successes", "sr_pct",
              "ttr_median", "spl_pct", "error"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key, fmt in (("sr_pct", "%.2f"), ("ttr_median", "%.3f"),
                             ("spl_pct", "%.2f")):
                out[key] = "" if row.get(key) is None else fmt % row[key]
            out["error"] = row.get("error") or ""
            writer.writerow(out)


def _cmd_batch(args) -> int:
    from .config import ConfigError, load_config
    from .episode import run_batch
    from .io import write_json
    from .simenv import SceneError

    try:
        cfg = load_config(args.config)
    except (ConfigError, FileNotFoundError) as exc:
        print("setup error: %s" % exc, file=sys.stderr)
        return EXIT_SETUP
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = cfg.scenes if cfg.scenes else [cfg.scene]
    strategies = cfg.strategies if cfg.strategies else [cfg.strategy]
    try:
        rows, results = run_batch(scenes, strategies, cfg.seeds, cfg)
    except (SceneError, ValueError) as exc:
        print("setup error: %s" % exc, file=sys.stderr)
        return EXIT_SETUP
    _write_results_csv(out / "results.csv", rows)
    for (scene, strategy, seed), res in sorted(results.items()):
        write_json(out / ("episode-%s-%s-%d.json" % (scene, strategy, seed)),
                   res.to_dict())
    log.info("batch complete: %d episodes", len(results))
    return EXIT_OK


def _cmd_export(args) -> int:
    from .io import grid_to_ply, load_grid_npz, write_depth_pgm, \
        write_scaled_pgm

    src = Path(args.input)
    if not src.exists():
        print("input not found: %s" % src, file=sys.stderr)
        return EXIT_SETUP
    try:
        if args.kind == "ply":
            grid = load_grid_npz(src)
            grid_to_ply(grid, args.out)
        else:
            img = np.load(src)
            if args.channel == "depth":
                write_depth_pgm(args.out, img)
            else:
                write_scaled_pgm(args.out, img)
    except (ValueError, KeyError, OSError) as exc:
        print("export failed: %s" % exc, file=sys.stderr)
        return EXIT_SETUP
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .config import ConfigError, load_config

    try:
        load_config(args.config)
    except (ConfigError, FileNotFoundError) as exc:
        print("invalid: %s" % exc, file=sys.stderr)
        return EXIT_SETUP
    print("ok")
    return EXIT_OK


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "batch":
        return _cmd_batch(args)
    if args.command == "export":
        return _cmd_export(args)
    return _cmd_validate(args)


if __name__ == "__main__":
    sys.exit(main())
