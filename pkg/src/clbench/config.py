"""Flat `key = value` config files: strict parsing, defaults, round-trip.

Unknown keys are errors (with a did-you-mean suggestion), every error names
the key and line, and serialize(parse(text)) is a fixed point.
"""

from __future__ import annotations

import difflib
import io
import os
from dataclasses import dataclass, replace

from .errors import ConfigError
from .protocols import DATASETS, GENERATORS, GRID_PROTOCOLS, RunConfig, StreamSpec
from .scenarios import CATEGORY, OBJECT, SCENARIOS
from .strategies import STRATEGY_KINDS, StrategyConfig

PROTOCOLS = ("single",) + tuple(sorted(GRID_PROTOCOLS))


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {s!r}") from exc


def _parse_float(s: str) -> float:
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _parse_choice(options):
    def parse(s: str):
        if s not in options:
            raise ConfigError(f"expected one of {', '.join(options)}; got {s!r}")
        return s

    return parse


def _parse_int_list(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(p.strip()) for p in s.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from exc


def _parse_str_list(s: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in s.split(",") if p.strip())


# key -> (parser, default); OPTIONAL means "absent unless set".
OPTIONAL = object()
KEY_TABLE: dict[str, tuple] = {
    "protocol": (_parse_choice(PROTOCOLS), "single"),
    "seed": (_parse_int, 0),
    "replicates": (_parse_int, 3),
    "workers": (_parse_int, 1),
    "stream.dataset": (_parse_choice(DATASETS), "synth10"),
    "stream.generator": (_parse_choice(GENERATORS), "split"),
    "stream.tasks": (_parse_int, 5),
    "stream.scenario": (_parse_choice(SCENARIOS), "class"),
    "stream.granularity": (_parse_choice((CATEGORY, OBJECT)), OBJECT),
    "stream.class_order_seed": (_parse_int, 0),
    "stream.seed": (_parse_int, 0),
    "stream.max_angle": (_parse_float, 90.0),
    "stream.train_per_class": (_parse_int, OPTIONAL),
    "stream.test_per_class": (_parse_int, OPTIONAL),
    "stream.dim": (_parse_int, OPTIONAL),
    "stream.noise_sigma": (_parse_float, OPTIONAL),
    "stream.ni_jitter": (_parse_float, 0.0),
    "strategy.kind": (_parse_choice(STRATEGY_KINDS), "naive"),
    "strategy.lr": (_parse_float, 0.05),
    "strategy.epochs": (_parse_int, 1),
    "strategy.batch_size": (_parse_int, 64),
    "strategy.lambda": (_parse_float, OPTIONAL),
    "strategy.temperature": (_parse_float, 2.0),
    "strategy.xi": (_parse_float, 0.1),
    "strategy.buffer_capacity": (_parse_int, 1000),
    "strategy.ref_batch": (_parse_int, 256),
    "strategy.gss_subset": (_parse_int, 10),
    "strategy.smax": (_parse_float, 400.0),
    "strategy.hidden": (_parse_int, OPTIONAL),
    "grid.strategies": (_parse_str_list, OPTIONAL),
    "grid.lengths": (_parse_int_list, OPTIONAL),
    "grid.buffer_sizes": (_parse_int_list, OPTIONAL),
    "grid.epoch_counts": (_parse_int_list, OPTIONAL),
}


@dataclass(frozen=True)
class HarnessConfig:
    """A parsed config file: what to run plus grid overrides."""

    protocol: str = "single"
    run: RunConfig = None  # type: ignore[assignment]
    workers: int = 1
    grid_strategies: tuple[str, ...] | None = None
    grid_lengths: tuple[int, ...] | None = None
    grid_buffer_sizes: tuple[int, ...] | None = None
    grid_epoch_counts: tuple[int, ...] | None = None


def _suggest(key: str) -> str:
    close = difflib.get_close_matches(key, KEY_TABLE, n=1, cutoff=0.4)
    return f" (did you mean {close[0]!r}?)" if close else ""


def parse_config_text(text: str, source: str = "<config>") -> HarnessConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in KEY_TABLE:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}{_suggest(key)}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = KEY_TABLE[key][0]
        try:
            values[key] = parser(val)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: key {key!r}: {exc}") from exc

    def get(key):
        if key in values:
            return values[key]
        default = KEY_TABLE[key][1]
        return None if default is OPTIONAL else default

    try:
        stream = StreamSpec(
            dataset=get("stream.dataset"),
            generator=get("stream.generator"),
            num_tasks=get("stream.tasks"),
            scenario=get("stream.scenario"),
            granularity=get("stream.granularity"),
            class_order_seed=get("stream.class_order_seed"),
            seed=get("stream.seed"),
            max_angle=get("stream.max_angle"),
            train_per_class=get("stream.train_per_class"),
            test_per_class=get("stream.test_per_class"),
            dim=get("stream.dim"),
            noise_sigma=get("stream.noise_sigma"),
            ni_jitter=get("stream.ni_jitter"),
        )
        strategy = StrategyConfig(
            kind=get("strategy.kind"),
            lr=get("strategy.lr"),
            epochs=get("strategy.epochs"),
            batch_size=get("strategy.batch_size"),
            lam=get("strategy.lambda"),
            temperature=get("strategy.temperature"),
            xi=get("strategy.xi"),
            buffer_capacity=get("strategy.buffer_capacity"),
            ref_batch=get("strategy.ref_batch"),
            gss_subset=get("strategy.gss_subset"),
            smax=get("strategy.smax"),
            hidden=get("strategy.hidden"),
        )
        run = RunConfig(
            stream=stream, strategy=strategy,
            seed=get("seed"), replicates=get("replicates"),
        )
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    grid_strats = get("grid.strategies")
    if grid_strats is not None:
        for s in grid_strats:
            if s not in STRATEGY_KINDS:
                raise ConfigError(f"{source}: grid.strategies: unknown strategy {s!r}")
    return HarnessConfig(
        protocol=get("protocol"),
        run=run,
        workers=get("workers"),
        grid_strategies=grid_strats,
        grid_lengths=get("grid.lengths"),
        grid_buffer_sizes=get("grid.buffer_sizes"),
        grid_epoch_counts=get("grid.epoch_counts"),
    )


def parse_config(path) -> HarnessConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        return parse_config_text(f.read(), source=str(path))


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: HarnessConfig) -> str:
    """Canonical text form; parsing it reproduces cfg exactly."""
    run, stream, strat = cfg.run, cfg.run.stream, cfg.run.strategy
    out = {
        "protocol": cfg.protocol,
        "seed": run.seed,
        "replicates": run.replicates,
        "workers": cfg.workers,
        "stream.dataset": stream.dataset,
        "stream.generator": stream.generator,
        "stream.tasks": stream.num_tasks,
        "stream.scenario": stream.scenario,
        "stream.granularity": stream.granularity,
        "stream.class_order_seed": stream.class_order_seed,
        "stream.seed": stream.seed,
        "stream.max_angle": stream.max_angle,
        "stream.train_per_class": stream.train_per_class,
        "stream.test_per_class": stream.test_per_class,
        "stream.dim": stream.dim,
        "stream.noise_sigma": stream.noise_sigma,
        "stream.ni_jitter": stream.ni_jitter,
        "strategy.kind": strat.kind,
        "strategy.lr": strat.lr,
        "strategy.epochs": strat.epochs,
        "strategy.batch_size": strat.batch_size,
        "strategy.lambda": strat.lam,
        "strategy.temperature": strat.temperature,
        "strategy.xi": strat.xi,
        "strategy.buffer_capacity": strat.buffer_capacity,
        "strategy.ref_batch": strat.ref_batch,
        "strategy.gss_subset": strat.gss_subset,
        "strategy.smax": strat.smax,
        "strategy.hidden": strat.hidden,
        "grid.strategies": cfg.grid_strategies,
        "grid.lengths": cfg.grid_lengths,
        "grid.buffer_sizes": cfg.grid_buffer_sizes,
        "grid.epoch_counts": cfg.grid_epoch_counts,
    }
    buf = io.StringIO()
    for key in KEY_TABLE:
        if key not in out:
            continue
        value = out[key]
        if value is None:
            continue
        buf.write(f"{key} = {_fmt(value)}\n")
    return buf.getvalue()


def with_overrides(cfg: HarnessConfig, seed: int | None = None,
                   workers: int | None = None) -> HarnessConfig:
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    return cfg
