"""Protocol grids over (stream x strategy x hyperparameter) cells.

Each cell is an independent, fully seeded run producing an accuracy matrix
plus derived metrics. A run directory holds manifest.json, one cell-<id>/
subdirectory per cell (matrix.csv + result.json + timing.json) and
failures.json. Everything except timing.json is byte-deterministic in
(config, seed); wall-clock lives only in the timing sidecars.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import SCHEMA_VERSION
from .errors import ConfigError, ProtocolError, StateError
from .metrics import AccuracyMatrix, MetricReport, TaskTiming, average_accuracy, backward_transfer
from .scenarios import (
    CATEGORY,
    CLASS_IL,
    DOMAIN_IL,
    OBJECT,
    TASK_IL,
    SourceData,
    SynthSpec,
    TaskStream,
    load_idx,
    make_nc_stream,
    make_ni_stream,
    make_permuted_stream,
    make_rotated_stream,
    split_by_classes,
    stream_provenance_hash,
    synth_generate,
)
from .strategies import StrategyConfig, StreamInfo, make_strategy

GENERATORS = ("split", "permuted", "rotated", "nc", "ni")

# Desk-scale stand-ins preserving the class/task structure of the image corpora.
# Spreads keep features at O(1) per coordinate (stable at the default lr) while
# the noise level leaves genuine class overlap, which sustains gradient
# pressure across a task and reproduces the usual class-incremental collapse.
SYNTH_DATASETS: dict[str, SynthSpec] = {
    "synth10": SynthSpec(10, 1, dim=64, train_per_class=500, test_per_class=50,
                         category_spread=0.9, species_spread=0.1, noise_sigma=1.5, seed=101),
    "synth10b": SynthSpec(10, 1, dim=64, train_per_class=500, test_per_class=50,
                          category_spread=0.9, species_spread=0.1, noise_sigma=1.8, seed=202),
    "synth100": SynthSpec(20, 5, dim=64, train_per_class=100, test_per_class=20,
                          category_spread=1.0, species_spread=0.5, noise_sigma=1.2, seed=303),
    "synth200": SynthSpec(40, 5, dim=64, train_per_class=50, test_per_class=10,
                          category_spread=1.0, species_spread=0.5, noise_sigma=1.2, seed=404),
    "core50": SynthSpec(10, 5, dim=64, train_per_class=120, test_per_class=30,
                        category_spread=1.1, species_spread=0.5, noise_sigma=1.0, seed=505),
    "imagenet50": SynthSpec(10, 5, dim=64, train_per_class=120, test_per_class=30,
                            category_spread=1.1, species_spread=0.5, noise_sigma=1.2, seed=606),
}
DATASETS = tuple(sorted(SYNTH_DATASETS)) + ("mnist",)

DATA_DIR_ENV = "CLBENCH_DATA_DIR"
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")

BUFFER_GRID = (100, 300, 500, 700, 1000, 2000, 5000)
EPOCH_GRID = (1, 5, 10, 20, 50, 100)
ADAPT_LENGTHS = {10: (1, 2, 5), 100: (1, 2, 4, 5, 10, 20, 25, 50), 200: (5, 10, 20, 50)}
ADAPT_LENGTHS_FALLBACK = (1, 2, 4, 5, 10, 20, 25, 50)

CLASSIL_STRATEGIES = ("naive", "lwf", "ewc", "si", "icarl", "agem", "gss")
REPLAY_STRATEGIES = ("icarl", "agem", "gss")
ALL_STRATEGIES = CLASSIL_STRATEGIES + ("hat",)


@dataclass(frozen=True)
class StreamSpec:
    """Names a stream: dataset + construction op + shape knobs."""

    dataset: str = "synth10"
    generator: str = "split"
    num_tasks: int = 5
    scenario: str = CLASS_IL
    granularity: str = OBJECT
    class_order_seed: int = 0
    seed: int = 0
    max_angle: float = 90.0
    train_per_class: int | None = None
    test_per_class: int | None = None
    dim: int | None = None
    noise_sigma: float | None = None
    ni_jitter: float = 0.0

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r} (have {', '.join(DATASETS)})")
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r} (have {', '.join(GENERATORS)})")
        if self.num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {self.num_tasks}")


def build_source(spec: StreamSpec) -> SourceData:
    if spec.dataset == "mnist":
        root = os.environ.get(DATA_DIR_ENV)
        if not root:
            raise ConfigError(f"dataset 'mnist' needs {DATA_DIR_ENV} pointing at the IDX files")
        paths = [os.path.join(root, f) for f in MNIST_FILES]
        train = load_idx(paths[0], paths[1])
        test = load_idx(paths[2], paths[3])
        return SourceData(train, test, name="mnist")
    synth = SYNTH_DATASETS[spec.dataset]
    overrides = {}
    if spec.train_per_class is not None:
        overrides["train_per_class"] = spec.train_per_class
    if spec.test_per_class is not None:
        overrides["test_per_class"] = spec.test_per_class
    if spec.dim is not None:
        overrides["dim"] = spec.dim
    if spec.noise_sigma is not None:
        overrides["noise_sigma"] = spec.noise_sigma
    if overrides:
        synth = replace(synth, **overrides)
    src = synth_generate(synth)
    return SourceData(src.train, src.test, name=spec.dataset)


def build_stream(spec: StreamSpec) -> TaskStream:
    source = build_source(spec)
    if spec.generator == "split":
        return split_by_classes(source, spec.num_tasks, spec.scenario, spec.class_order_seed)
    if spec.generator == "permuted":
        return make_permuted_stream(source, spec.num_tasks, spec.seed)
    if spec.generator == "rotated":
        return make_rotated_stream(source, spec.num_tasks, spec.max_angle)
    if spec.generator == "nc":
        return make_nc_stream(source, spec.granularity, spec.num_tasks, spec.scenario)
    if spec.generator == "ni":
        return make_ni_stream(source, spec.num_tasks, spec.seed, spec.ni_jitter)
    raise ConfigError(f"unknown generator {spec.generator!r}")


@dataclass(frozen=True)
class RunConfig:
    stream: StreamSpec
    strategy: StrategyConfig
    seed: int = 0
    replicates: int = 3
    paired_taskil_eval: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")


def validate_compat(cfg: RunConfig) -> None:
    """Strategy/stream compatibility, checked before any training."""
    if cfg.strategy.kind == "hat" and cfg.stream.scenario != TASK_IL:
        raise ConfigError(
            "hat requires a task-incremental stream (task labels at test time)"
        )
    if cfg.stream.generator in ("permuted", "rotated", "ni") and cfg.stream.scenario != CLASS_IL:
        # domain streams carry their own scenario; the field stays at its default
        raise ConfigError(f"{cfg.stream.generator} streams fix their own scenario")


@dataclass
class RunResult:
    config: RunConfig
    matrix: AccuracyMatrix
    replicate_matrices: list[np.ndarray]
    report: MetricReport
    replicate_metrics: list[dict]
    replicate_seeds: list[int]
    steps_per_task: list[list[int]]
    wall_seconds_per_task: list[list[float]]
    provenance: str
    audit_violations: list[dict]
    extras: dict = field(default_factory=dict)


class AccessAudit:
    """Records train-split accesses that happen outside the owning task's window."""

    def __init__(self):
        self.current_train_task: int | None = None
        self.violations: list[dict] = []


class AuditedTask:
    """Task view that logs out-of-window train-split access."""

    def __init__(self, task, audit: AccessAudit):
        self._task = task
        self._audit = audit

    @property
    def train(self):
        if self._audit.current_train_task != self._task.task_id:
            self._audit.violations.append({
                "task_id": self._task.task_id,
                "current_train_task": self._audit.current_train_task,
            })
        return self._task.train

    @property
    def test(self):
        return self._task.test

    @property
    def class_set(self):
        return self._task.class_set

    @property
    def task_id(self):
        return self._task.task_id

    @property
    def meta(self):
        return self._task.meta


def _matrix_mean(replicate_matrices: list[np.ndarray]) -> AccuracyMatrix:
    stack = np.stack(replicate_matrices)
    return AccuracyMatrix.from_array(stack.mean(axis=0))


def run_single(cfg: RunConfig) -> RunResult:
    """Train task-by-task, evaluating every seen test set after each task.

    Replicates share the stream and differ only in the strategy seed
    (cfg.seed + r); their matrices are averaged elementwise into the mean
    matrix and kept individually.
    """
    validate_compat(cfg)
    stream = build_stream(cfg.stream)
    info = StreamInfo.from_stream(stream)
    hint_mode = stream.provides_task_labels_at_test
    audit = AccessAudit()

    rep_mats, rep_seeds, rep_steps, rep_walls, rep_metrics = [], [], [], [], []
    extras: dict = {}
    paired: list[dict] = []
    for r in range(cfg.replicates):
        seed = cfg.seed + r
        strat = make_strategy(replace(cfg.strategy, seed=seed), info)
        mat = AccuracyMatrix(stream.num_tasks)
        walls = []
        for i, task in enumerate(stream.tasks):
            audited = AuditedTask(task, audit)
            audit.current_train_task = i
            t0 = time.perf_counter()
            strat.begin_task(audited)
            strat.train_task(audited)
            strat.end_task(audited)
            walls.append(time.perf_counter() - t0)
            audit.current_train_task = None
            for j in range(i + 1):
                acc = strat.evaluate(stream.tasks[j].test, task_hint=j if hint_mode else None)
                mat.record(i, j, acc)
        if cfg.paired_taskil_eval and not hint_mode and stream.scenario == CLASS_IL:
            # Restricting the argmax to the true task's classes can only help;
            # record both sides and hold the run to that invariant.
            rec = {"class_il": [], "task_il": []}
            for j in range(stream.num_tasks):
                ci = mat.value(stream.num_tasks - 1, j)
                ti = strat.evaluate(stream.tasks[j].test, task_hint=j)
                if ti < ci - 1e-12:
                    raise ProtocolError(
                        f"task-hinted accuracy {ti} below unrestricted {ci} on task {j}"
                    )
                rec["class_il"].append(ci)
                rec["task_il"].append(ti)
            paired.append(rec)
        rep_mats.append(mat.as_array())
        rep_seeds.append(seed)
        rep_steps.append(list(strat.steps_per_task))
        rep_walls.append(walls)
        m = {"acc": average_accuracy(mat)}
        m["bwt"] = backward_transfer(mat) if stream.num_tasks >= 2 else None
        rep_metrics.append(m)

    if paired:
        extras["paired_eval"] = paired
    mean_matrix = _matrix_mean(rep_mats)
    timing = [
        TaskTiming(int(np.sum([s[i] for s in rep_steps])), float(np.sum([w[i] for w in rep_walls])))
        for i in range(stream.num_tasks)
    ]
    return RunResult(
        config=cfg,
        matrix=mean_matrix,
        replicate_matrices=rep_mats,
        report=MetricReport.from_matrix(mean_matrix, timing),
        replicate_metrics=rep_metrics,
        replicate_seeds=rep_seeds,
        steps_per_task=rep_steps,
        wall_seconds_per_task=rep_walls,
        provenance=stream_provenance_hash(stream),
        audit_violations=list(audit.violations),
        extras=extras,
    )


# -- grids ----------------------------------------------------------------


@dataclass
class GridFailure:
    cell_id: str
    axes: dict
    reason: str


@dataclass
class TrendSummary:
    """Per-strategy series of (axis value, ACC, BWT) with monotonicity verdicts."""

    axis: str
    strategy: str
    points: list[tuple]  # (axis value, acc, bwt-or-None)
    acc_verdict: str = ""
    bwt_verdict: str = ""
    acc_deltas: list = field(default_factory=list)

    @staticmethod
    def verdict(values: list[float]) -> str:
        if len(values) < 2:
            return "single-point"
        diffs = np.diff(values)
        if (diffs < 0).all():
            return "strictly_decreasing"
        if (diffs > 0).all():
            return "strictly_increasing"
        if (diffs <= 0).all():
            return "nonincreasing"
        if (diffs >= 0).all():
            return "nondecreasing"
        return "nonmonotonic"


@dataclass
class GridResult:
    protocol: str
    axis: str  # primary (plot) axis name
    cells: dict[str, RunResult]
    cell_axes: dict[str, dict]
    failures: list[GridFailure]
    trends: list[TrendSummary] = field(default_factory=list)

    @property
    def has_failures(self) -> bool:
        return bool(self.failures)


def compute_trends(grid: GridResult) -> list[TrendSummary]:
    """Numeric-axis trend series per strategy; empty for categorical axes."""
    by_strategy: dict[str, list[tuple]] = {}
    for cid, res in grid.cells.items():
        axes = grid.cell_axes[cid]
        val = axes.get(grid.axis)
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            return []
        st = axes.get("strategy", res.config.strategy.kind)
        by_strategy.setdefault(st, []).append((val, res.report.acc, res.report.bwt))
    trends = []
    for st in sorted(by_strategy):
        pts = sorted(by_strategy[st])
        accs = [p[1] for p in pts]
        bwts = [p[2] for p in pts if p[2] is not None]
        trends.append(TrendSummary(
            axis=grid.axis, strategy=st, points=pts,
            acc_verdict=TrendSummary.verdict(accs),
            bwt_verdict=TrendSummary.verdict(bwts) if len(bwts) == len(pts) else "partial",
            acc_deltas=[(pts[i][0], pts[i + 1][0], pts[i + 1][1] - pts[i][1])
                        for i in range(len(pts) - 1)],
        ))
    return trends


def _execute_cells(protocol: str, axis: str, cells: list[tuple[str, dict, RunConfig]],
                   failures: list[GridFailure], workers: int = 1) -> GridResult:
    """Run declared cells (optionally in parallel); every cell ends up either
    in cells or in failures — no silent gaps."""
    results: dict[str, RunResult] = {}

    def run_cell(item):
        cid, axes, cfg = item
        try:
            return cid, axes, run_single(cfg), None
        except (ConfigError, StateError, ProtocolError) as exc:
            return cid, axes, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_cell, cells))
    else:
        outcomes = [run_cell(c) for c in cells]
    cell_axes = {}
    for cid, axes, res, err in outcomes:
        if err is None:
            results[cid] = res
            cell_axes[cid] = axes
        else:
            failures.append(GridFailure(cid, axes, err))
    failures.sort(key=lambda f: f.cell_id)
    grid = GridResult(protocol, axis, results, cell_axes, failures)
    grid.trends = compute_trends(grid)
    return grid


def _strategy_cfg(base: RunConfig, kind: str, **kw) -> StrategyConfig:
    return replace(base.strategy, kind=kind, **kw)


def adaptability_lengths(num_classes: int) -> tuple[list[int], list[tuple[int, str]]]:
    """Sequence lengths for a class count, plus (length, reason) skips."""
    if num_classes in ADAPT_LENGTHS:
        return list(ADAPT_LENGTHS[num_classes]), []
    lengths, skipped = [], []
    for ln in ADAPT_LENGTHS_FALLBACK:
        if num_classes % ln != 0:
            skipped.append((ln, f"{num_classes} classes not divisible into {ln} tasks"))
        elif ln > 1 and num_classes // ln < 2:
            skipped.append((ln, "single-class tasks are degenerate"))
        else:
            lengths.append(ln)
    return lengths, skipped


def run_adaptability(base: RunConfig, strategies=CLASSIL_STRATEGIES,
                     lengths=None, workers: int = 1) -> GridResult:
    """ACC/BWT versus task-sequence length, one cell per (strategy, length)."""
    source_classes = build_source(base.stream).train.classes().size
    failures: list[GridFailure] = []
    if lengths is None:
        lengths, skipped = adaptability_lengths(source_classes)
    else:
        skipped = [(ln, f"{source_classes} classes not divisible into {ln} tasks")
                   for ln in lengths if source_classes % ln != 0]
        lengths = [ln for ln in lengths if source_classes % ln == 0]
    cells = []
    for kind in strategies:
        for ln in lengths:
            cid = f"{kind}-len{ln}"
            axes = {"strategy": kind, "num_tasks": ln}
            stream = replace(base.stream, generator="split", num_tasks=ln)
            cells.append((cid, axes, replace(base, stream=stream,
                                             strategy=_strategy_cfg(base, kind))))
        for ln, reason in skipped:
            failures.append(GridFailure(f"{kind}-len{ln}", {"strategy": kind, "num_tasks": ln}, reason))
    return _execute_cells("adaptability", "num_tasks", cells, failures, workers)


SCENARIO_SPLIT_DATASETS = ("synth10", "synth10b", "synth100", "synth200")


def run_sensitivity_scenarios(base: RunConfig, strategies=ALL_STRATEGIES,
                              split_datasets=SCENARIO_SPLIT_DATASETS,
                              domain_dataset: str = "synth10",
                              workers: int = 1) -> GridResult:
    """Class-IL and Task-IL on the split streams (5 tasks each) plus
    Domain-IL on permuted/rotated variants; HAT only where task labels exist."""
    failures: list[GridFailure] = []
    cells = []
    for kind in strategies:
        for ds in split_datasets:
            for scen in (CLASS_IL, TASK_IL):
                cid = f"{kind}-{scen}-{ds}"
                axes = {"strategy": kind, "scenario": scen, "dataset": ds}
                if kind == "hat" and scen != TASK_IL:
                    failures.append(GridFailure(cid, axes, "hat requires task labels at test"))
                    continue
                stream = replace(base.stream, dataset=ds, generator="split",
                                 num_tasks=5, scenario=scen)
                cells.append((cid, axes, replace(
                    base, stream=stream, strategy=_strategy_cfg(base, kind),
                    paired_taskil_eval=(scen == CLASS_IL),
                )))
        for gen in ("permuted", "rotated"):
            cid = f"{kind}-domain-{gen}"
            axes = {"strategy": kind, "scenario": DOMAIN_IL, "dataset": f"{domain_dataset}-{gen}"}
            if kind == "hat":
                failures.append(GridFailure(cid, axes, "hat requires task labels at test"))
                continue
            stream = replace(base.stream, dataset=domain_dataset, generator=gen, num_tasks=5,
                             scenario=CLASS_IL)
            cells.append((cid, axes, replace(base, stream=stream,
                                             strategy=_strategy_cfg(base, kind))))
    return _execute_cells("sensitivity-scenarios", "scenario", cells, failures, workers)


def run_sensitivity_granularity(base: RunConfig, strategies=ALL_STRATEGIES,
                                workers: int = 1) -> GridResult:
    """{NC, NI} x {category, object} on the 50-object corpus (NC: 9 tasks,
    NI: 8) and NC-only on its harder sibling. HAT rides NC as task-incremental."""
    failures: list[GridFailure] = []
    cells = []
    layouts = [("core50", "nc", 9), ("core50", "ni", 8), ("imagenet50", "nc", 9)]
    for kind in strategies:
        for ds, setting, ntasks in layouts:
            for gran in (CATEGORY, OBJECT):
                cid = f"{kind}-{ds}-{setting}-{gran}"
                axes = {"strategy": kind, "dataset": ds, "setting": setting,
                        "granularity": gran, "num_tasks": ntasks}
                if kind == "hat" and setting == "ni":
                    failures.append(GridFailure(
                        cid, axes, "new-instances streams provide no task labels for hat"))
                    continue
                scen = TASK_IL if kind == "hat" else CLASS_IL
                if setting == "nc":
                    stream = replace(base.stream, dataset=ds, generator="nc",
                                     num_tasks=ntasks, granularity=gran, scenario=scen)
                else:
                    stream = replace(base.stream, dataset=ds, generator="ni",
                                     num_tasks=ntasks, granularity=gran, scenario=CLASS_IL)
                if kind == "hat":
                    axes = dict(axes, scenario=TASK_IL)
                cells.append((cid, axes, replace(base, stream=stream,
                                                 strategy=_strategy_cfg(base, kind))))
    return _execute_cells("sensitivity-granularity", "setting", cells, failures, workers)


def run_efficiency_buffer(base: RunConfig, strategies=REPLAY_STRATEGIES,
                          sizes=BUFFER_GRID, workers: int = 1) -> GridResult:
    """Replay strategies across the buffer-size grid, single epoch everywhere."""
    for kind in strategies:
        if kind not in REPLAY_STRATEGIES:
            raise ConfigError(f"buffer grid is for replay strategies, got {kind!r}")
    stream = replace(base.stream, generator="split", scenario=CLASS_IL)
    total_train = sum(t.train.size for t in build_stream(stream).tasks)
    failures: list[GridFailure] = []
    cells = []
    for kind in strategies:
        for size in sizes:
            cid = f"{kind}-buf{size}"
            axes = {"strategy": kind, "buffer_size": size}
            cap = size
            if size > total_train:
                cap = total_train
                axes["buffer_clamped_to"] = cap
            cells.append((cid, axes, replace(
                base, stream=stream,
                strategy=_strategy_cfg(base, kind, buffer_capacity=cap, epochs=1),
            )))
    return _execute_cells("efficiency-buffer", "buffer_size", cells, failures, workers)


def run_efficiency_epochs(base: RunConfig, strategies=ALL_STRATEGIES,
                          epochs=EPOCH_GRID, workers: int = 1) -> GridResult:
    """All strategies across the epoch grid; single-epoch cells are flagged online."""
    failures: list[GridFailure] = []
    cells = []
    for kind in strategies:
        for ep in epochs:
            cid = f"{kind}-ep{ep}"
            axes = {"strategy": kind, "epochs": ep, "online": ep == 1}
            scen = TASK_IL if kind == "hat" else base.stream.scenario
            stream = replace(base.stream, generator="split", scenario=scen)
            cells.append((cid, axes, replace(
                base, stream=stream, strategy=_strategy_cfg(base, kind, epochs=ep),
            )))
    return _execute_cells("efficiency-epochs", "epochs", cells, failures, workers)


GRID_PROTOCOLS = {
    "adaptability": run_adaptability,
    "sensitivity-scenarios": run_sensitivity_scenarios,
    "sensitivity-granularity": run_sensitivity_granularity,
    "efficiency-buffer": run_efficiency_buffer,
    "efficiency-epochs": run_efficiency_epochs,
}


# -- run-directory serialization -------------------------------------------


def _json_matrix(values: np.ndarray) -> list:
    return [[None if np.isnan(v) else float(v) for v in row] for row in values]


def _dump_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def run_result_payload(res: RunResult) -> dict:
    """The deterministic part of a run result (no wall-clock)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "stream": asdict(res.config.stream),
            "strategy": asdict(res.config.strategy),
            "seed": res.config.seed,
            "replicates": res.config.replicates,
        },
        "provenance_sha256": res.provenance,
        "replicate_seeds": res.replicate_seeds,
        "mean_matrix": _json_matrix(res.matrix.as_array()),
        "replicate_matrices": [_json_matrix(m) for m in res.replicate_matrices],
        "metrics": {
            "acc": res.report.acc,
            "bwt": res.report.bwt,
            "per_task_final": res.report.per_task_final,
        },
        "replicate_metrics": res.replicate_metrics,
        "steps_per_task": res.steps_per_task,
        "audit_violations": res.audit_violations,
        "extras": res.extras,
    }


def timing_payload(res: RunResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "wall_seconds_per_task": res.wall_seconds_per_task,
        "total_wall_seconds": float(np.sum([np.sum(w) for w in res.wall_seconds_per_task])),
    }


def write_cell(cell_dir, res: RunResult) -> None:
    os.makedirs(cell_dir, exist_ok=True)
    with open(os.path.join(cell_dir, "matrix.csv"), "w") as f:
        f.write(res.matrix.to_csv())
    _dump_json(os.path.join(cell_dir, "result.json"), run_result_payload(res))
    _dump_json(os.path.join(cell_dir, "timing.json"), timing_payload(res))


def write_run_dir(out_dir, protocol: str, grid: GridResult | None = None,
                  single: RunResult | None = None) -> None:
    """Materialize a run directory; exactly one of grid/single is given."""
    os.makedirs(out_dir, exist_ok=True)
    if single is not None:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "protocol": "single",
            "cells": ["run"],
            "axis": None,
        }
        _dump_json(os.path.join(out_dir, "manifest.json"), manifest)
        write_cell(os.path.join(out_dir, "cell-run"), single)
        _dump_json(os.path.join(out_dir, "failures.json"), [])
        return
    assert grid is not None
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "protocol": protocol,
        "axis": grid.axis,
        "cells": sorted(grid.cells),
        "cell_axes": {cid: grid.cell_axes[cid] for cid in sorted(grid.cell_axes)},
        "trends": [
            {
                "axis": t.axis, "strategy": t.strategy,
                "points": [list(p) for p in t.points],
                "acc_verdict": t.acc_verdict, "bwt_verdict": t.bwt_verdict,
                "acc_deltas": [list(d) for d in t.acc_deltas],
            }
            for t in grid.trends
        ],
    }
    _dump_json(os.path.join(out_dir, "manifest.json"), manifest)
    for cid in sorted(grid.cells):
        write_cell(os.path.join(out_dir, f"cell-{cid}"), grid.cells[cid])
    _dump_json(
        os.path.join(out_dir, "failures.json"),
        [{"cell_id": f.cell_id, "axes": f.axes, "reason": f.reason} for f in grid.failures],
    )
