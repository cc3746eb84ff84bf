"""Command-line entry point: run / grid / report / plot / list.

Exit codes: 0 full success, 1 configuration error, 2 grid finished with
per-cell failures recorded in failures.json.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import HarnessConfig, parse_config, serialize_config, with_overrides
from .errors import ClbenchError, ConfigError
from .protocols import (
    DATASETS,
    GRID_PROTOCOLS,
    run_single,
    write_run_dir,
)
from .report import emit_plot_data, emit_report
from .strategies import STRATEGY_KINDS

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clbench", description=__doc__)
    p.add_argument("--version", action="version", version=f"clbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one training run")
    grid = sub.add_parser("grid", help="execute the config's protocol grid")
    for sp in (run, grid):
        sp.add_argument("--config", required=True, help="flat key = value config file")
        sp.add_argument("--out", required=True, help="output run directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=None, help="parallel grid cells")
        sp.add_argument("--force", action="store_true",
                        help="overwrite an existing completed run directory")

    rep = sub.add_parser("report", help="emit report files from a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--format", choices=("csv", "json"), default="csv")

    plot = sub.add_parser("plot", help="emit SVG charts and TSV data from a grid run")
    plot.add_argument("run_dir")
    plot.add_argument("--axis", default=None, help="grid axis to plot against")

    lst = sub.add_parser("list", help="list datasets, strategies and protocols")
    lst.add_argument("what", nargs="?", default="all",
                     choices=("all", "datasets", "strategies", "protocols", "keys"))
    return p


def _guard_out_dir(out: str, force: bool) -> None:
    if os.path.exists(os.path.join(out, "manifest.json")) and not force:
        raise ConfigError(
            f"{out} already holds a completed run; pass --force to overwrite"
        )
    os.makedirs(out, exist_ok=True)


def _write_config_echo(out: str, cfg: HarnessConfig) -> None:
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(serialize_config(cfg))


def _cmd_run(args) -> int:
    cfg = with_overrides(parse_config(args.config), args.seed, args.workers)
    _guard_out_dir(args.out, args.force)
    result = run_single(cfg.run)
    write_run_dir(args.out, "single", single=result)
    _write_config_echo(args.out, cfg)
    print(f"run complete: ACC {result.report.acc:.4f}"
          + (f" BWT {result.report.bwt:.4f}" if result.report.bwt is not None else "")
          + f" -> {args.out}")
    return EXIT_OK


def _cmd_grid(args) -> int:
    cfg = with_overrides(parse_config(args.config), args.seed, args.workers)
    if cfg.protocol == "single":
        raise ConfigError("config protocol is 'single'; use the run subcommand")
    _guard_out_dir(args.out, args.force)
    fn = GRID_PROTOCOLS[cfg.protocol]
    kwargs = {"workers": cfg.workers}
    if cfg.grid_strategies is not None:
        kwargs["strategies"] = cfg.grid_strategies
    if cfg.protocol == "adaptability" and cfg.grid_lengths is not None:
        kwargs["lengths"] = cfg.grid_lengths
    if cfg.protocol == "efficiency-buffer" and cfg.grid_buffer_sizes is not None:
        kwargs["sizes"] = cfg.grid_buffer_sizes
    if cfg.protocol == "efficiency-epochs" and cfg.grid_epoch_counts is not None:
        kwargs["epochs"] = cfg.grid_epoch_counts
    grid = fn(cfg.run, **kwargs)
    write_run_dir(args.out, cfg.protocol, grid=grid)
    _write_config_echo(args.out, cfg)
    print(f"grid {cfg.protocol}: {len(grid.cells)} cells ok, "
          f"{len(grid.failures)} failures -> {args.out}")
    return EXIT_PARTIAL if grid.has_failures else EXIT_OK


def _cmd_report(args) -> int:
    path = emit_report(args.run_dir, args.format)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_plot(args) -> int:
    for path in emit_plot_data(args.run_dir, args.axis):
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_list(args) -> int:
    from .config import KEY_TABLE, PROTOCOLS

    if args.what in ("all", "datasets"):
        print("datasets:", ", ".join(DATASETS))
    if args.what in ("all", "strategies"):
        print("strategies:", ", ".join(STRATEGY_KINDS))
    if args.what in ("all", "protocols"):
        print("protocols:", ", ".join(PROTOCOLS))
    if args.what == "keys":
        for key in KEY_TABLE:
            print(key)
    return EXIT_OK


def execute(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "grid": _cmd_grid,
        "report": _cmd_report,
        "plot": _cmd_plot,
        "list": _cmd_list,
    }[args.command]
    try:
        return handler(args)
    except ClbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(execute())


if __name__ == "__main__":
    main()
