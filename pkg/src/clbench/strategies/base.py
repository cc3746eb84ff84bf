"""Strategy lifecycle shared by all learners: begin_task -> train_task -> end_task -> predict.

A strategy owns one network plus its auxiliary state and is driven by exactly
one run. Randomness is split into independent seeded streams (net init,
batch shuffling, auxiliary draws) so that strategies which consume auxiliary
randomness still shuffle identically to the plain baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from .. import nn_core
from ..errors import ConfigError, StateError
from ..nn_core import Batch, LossSpec, Network
from ..scenarios import TASK_IL, TaskStream

STRATEGY_KINDS = ("naive", "lwf", "ewc", "si", "icarl", "agem", "gss", "hat")
REPLAY_KINDS = ("icarl", "agem", "gss")

CHECKPOINT_SCHEMA_VERSION = 1


def default_lambda(kind: str) -> float:
    """Penalty strength when the config leaves lambda unset.

    SGD on the quadratic penalty is stable only while lr * lambda * F_k < 2;
    with the desk-scale streams' Fisher scale (~0.1) and the default lr that
    caps lambda near 400, so the EWC default sits well inside that bound.
    """
    return {"ewc": 100.0, "si": 1.0}.get(kind, 0.0)


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    lr: float = 0.05
    epochs: int = 1
    batch_size: int = 64
    lam: float | None = None  # None -> default_lambda(kind)
    temperature: float = 2.0
    xi: float = 0.1
    buffer_capacity: int = 1000
    ref_batch: int = 256
    gss_subset: int = 10
    smax: float = 400.0
    seed: int = 0
    hidden: int | None = None

    @property
    def resolved_lam(self) -> float:
        return default_lambda(self.kind) if self.lam is None else self.lam

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam is not None and self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.xi <= 0:
            raise ConfigError(f"xi must be positive, got {self.xi}")
        if self.smax <= 0:
            raise ConfigError(f"smax must be positive, got {self.smax}")
        if self.kind in REPLAY_KINDS and self.buffer_capacity <= 0:
            raise ConfigError(f"{self.kind} needs buffer_capacity > 0")


@dataclass(frozen=True)
class StreamInfo:
    """Static stream metadata a strategy may use at init (counts, class layout)."""

    input_dim: int
    class_sets: tuple[tuple[int, ...], ...]
    scenario: str

    def __post_init__(self):
        if sorted(self.all_classes()) != list(range(self.num_classes)):
            raise ConfigError("class ids must be contiguous 0..C-1")

    @classmethod
    def from_stream(cls, stream: TaskStream) -> "StreamInfo":
        return cls(stream.input_dim, tuple(t.class_set for t in stream.tasks), stream.scenario)

    def all_classes(self) -> tuple[int, ...]:
        out = set()
        for s in self.class_sets:
            out |= set(s)
        return tuple(sorted(out))

    @property
    def num_classes(self) -> int:
        return len(self.all_classes())

    @property
    def num_tasks(self) -> int:
        return len(self.class_sets)


def minibatch_slices(n: int, batch_size: int):
    """ceil(n / batch_size) slices covering 0..n, final one possibly short."""
    return [slice(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


class Strategy:
    """Plain fine-tuning baseline; subclasses override the hook methods."""

    kind = "naive"
    requires_task_labels = False
    tracks_delta = False

    def __init__(self, cfg: StrategyConfig, info: StreamInfo):
        if cfg.kind != self.kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match {self.kind!r}")
        self.cfg = cfg
        self.info = info
        hidden = cfg.hidden if cfg.hidden is not None else (256 if info.input_dim >= 784 else 100)
        dims = (info.input_dim, hidden, hidden, info.num_classes)
        self.net = Network.init(dims, np.random.SeedSequence([cfg.seed, 17]))
        self.shuffle_rng = np.random.default_rng([cfg.seed, 11])
        self.aux_rng = np.random.default_rng([cfg.seed, 13])
        self.seen_classes = np.array([], dtype=np.int64)
        self.prev_classes = np.array([], dtype=np.int64)
        self.tasks_trained = 0
        self.current_task: int | None = None
        self.steps_total = 0
        self.steps_per_task: list[int] = []

    # -- lifecycle -------------------------------------------------------

    def begin_task(self, task) -> None:
        if task.task_id != self.tasks_trained:
            raise ConfigError(
                f"task {task.task_id} out of order (expected {self.tasks_trained})"
            )
        self.current_task = task.task_id
        self.prev_classes = self.seen_classes.copy()
        self.seen_classes = np.union1d(self.seen_classes, np.asarray(task.class_set))
        self.steps_per_task.append(0)
        self._on_begin_task(task)

    def train_task(self, task) -> None:
        if self.current_task != task.task_id:
            raise StateError("train_task called without begin_task")
        feats, labels = self._task_train_arrays(task)
        n = feats.shape[0]
        slices = minibatch_slices(n, self.cfg.batch_size)
        for epoch in range(self.cfg.epochs):
            order = self.shuffle_rng.permutation(n)
            for bstep, sl in enumerate(slices):
                idx = order[sl]
                batch = Batch(feats[idx], labels[idx], task_id=task.task_id)
                self._train_batch(batch, epoch, bstep, len(slices))
                self.steps_total += 1
                self.steps_per_task[task.task_id] += 1

    def end_task(self, task) -> None:
        if self.current_task != task.task_id:
            raise StateError("end_task called without begin_task")
        self._on_end_task(task)
        self.tasks_trained = task.task_id + 1

    # -- hooks -----------------------------------------------------------

    def _on_begin_task(self, task) -> None:
        pass

    def _on_end_task(self, task) -> None:
        pass

    def _task_train_arrays(self, task):
        return task.train.features, task.train.labels

    def _loss_spec(self, batch: Batch) -> LossSpec:
        return LossSpec()

    def _transform_grad(self, grads: np.ndarray, batch: Batch) -> np.ndarray:
        return grads

    def _grad_mask(self) -> np.ndarray | None:
        return None

    def _post_step(self, grads: np.ndarray, before_flat: np.ndarray | None) -> None:
        pass

    def _train_batch(self, batch: Batch, epoch: int, bstep: int, nbatches: int) -> None:
        spec = self._loss_spec(batch)
        _, grads = nn_core.backward(self.net, batch, spec)
        grads = self._transform_grad(grads, batch)
        before = self.net.to_flat() if self.tracks_delta else None
        self.net = nn_core.sgd_step(self.net, grads, self.cfg.lr, self._grad_mask())
        self._post_step(grads, before)

    # -- inference -------------------------------------------------------

    def _candidate_classes(self, task_hint: int | None) -> np.ndarray:
        if task_hint is None:
            if self.seen_classes.size == 0:
                raise StateError("no task trained yet")
            return self.seen_classes
        if not 0 <= task_hint < self.tasks_trained:
            raise ConfigError(f"task hint {task_hint} names an untrained task")
        return np.asarray(self.info.class_sets[task_hint], dtype=np.int64)

    def predict(self, inputs: np.ndarray, task_hint: int | None = None) -> np.ndarray:
        """Most likely class id per row; hints restrict to that task's classes.

        Ties break to the lowest class id (columns are scanned in ascending
        class order).
        """
        cols = self._candidate_classes(task_hint)
        logits = self._predict_logits(inputs, task_hint)
        return cols[np.argmax(logits[:, cols], axis=1)]

    def _predict_logits(self, inputs: np.ndarray, task_hint: int | None) -> np.ndarray:
        return nn_core.forward(self.net, inputs)

    def evaluate(self, dataset, task_hint: int | None = None) -> float:
        pred = self.predict(dataset.features, task_hint)
        return float((pred == dataset.labels).mean())

    # -- checkpointing ---------------------------------------------------

    def _state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def _state_meta(self) -> dict:
        return {}

    def _load_state(self, arrays: dict, meta: dict) -> None:
        pass

    def save_checkpoint(self, path) -> None:
        """One .npz file: network, counters, rng states, strategy-specific state."""
        meta = {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "kind": self.kind,
            "cfg": asdict(self.cfg),
            "layer_dims": list(self.net.layer_dims),
            "info": {
                "input_dim": self.info.input_dim,
                "class_sets": [list(s) for s in self.info.class_sets],
                "scenario": self.info.scenario,
            },
            "tasks_trained": self.tasks_trained,
            "steps_total": self.steps_total,
            "steps_per_task": self.steps_per_task,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "aux_rng": self.aux_rng.bit_generator.state,
            "extra": self._state_meta(),
        }
        arrays = {
            "params": self.net.to_flat(),
            "seen_classes": self.seen_classes,
            "prev_classes": self.prev_classes,
        }
        for key, arr in self._state_arrays().items():
            arrays["x_" + key] = arr
        np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load_checkpoint(cls, path) -> "Strategy":
        from . import make_strategy  # factory lives in the package root

        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]))
            if meta["schema_version"] != CHECKPOINT_SCHEMA_VERSION:
                raise ConfigError(
                    f"checkpoint schema {meta['schema_version']} unsupported "
                    f"(expected {CHECKPOINT_SCHEMA_VERSION})"
                )
            arrays = {k[2:]: data[k] for k in data.files if k.startswith("x_")}
            info = StreamInfo(
                meta["info"]["input_dim"],
                tuple(tuple(s) for s in meta["info"]["class_sets"]),
                meta["info"]["scenario"],
            )
            cfg = StrategyConfig(**meta["cfg"])
            strat = make_strategy(cfg, info)
            strat.net = strat.net.with_flat(data["params"])
            strat.seen_classes = data["seen_classes"].astype(np.int64)
            strat.prev_classes = data["prev_classes"].astype(np.int64)
            strat.tasks_trained = meta["tasks_trained"]
            strat.steps_total = meta["steps_total"]
            strat.steps_per_task = list(meta["steps_per_task"])
            strat.shuffle_rng.bit_generator.state = meta["shuffle_rng"]
            strat.aux_rng.bit_generator.state = meta["aux_rng"]
            strat._load_state(arrays, meta["extra"])
        return strat


class Naive(Strategy):
    kind = "naive"
