"""Replay-based learners: reservoir/GSS buffers, A-GEM projection, iCaRL exemplars."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn_core
from ..errors import ConfigError, StateError
from ..nn_core import Batch, LossSpec
from .base import Strategy
from .regularization import lwf_targets

GSS_GRAD_CHUNK = 16  # per-sample gradient matrices stay small


@dataclass
class BufferEntry:
    x: np.ndarray
    y: int
    task_id: int
    score: float = 0.0
    uid: int = -1


class ReplayBuffer:
    """Bounded sample store; reservoir insertion for A-GEM, scored for GSS."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.entries: list[BufferEntry] = []
        self._scores = np.full(capacity, -np.inf)  # mirror of entry scores
        self._stream_count = 0  # reservoir: samples offered so far
        self._next_uid = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _new_entry(self, x, y, task_id, score=0.0) -> BufferEntry:
        e = BufferEntry(np.array(x, dtype=np.float64), int(y), int(task_id), score, self._next_uid)
        self._next_uid += 1
        return e

    def append(self, entry: BufferEntry) -> None:
        if len(self.entries) >= self.capacity:
            raise StateError("buffer full; replace instead of appending")
        self._scores[len(self.entries)] = entry.score
        self.entries.append(entry)

    def replace(self, i: int, entry: BufferEntry) -> None:
        self.entries[i] = entry
        self._scores[i] = entry.score

    def max_score_index(self) -> int:
        if not self.entries:
            raise StateError("empty replay buffer")
        return int(np.argmax(self._scores[: len(self.entries)]))

    def add_reservoir(self, x, y, task_id, rng: np.random.Generator) -> None:
        """Algorithm-R insertion, uniform over every sample offered so far."""
        self._stream_count += 1
        if len(self.entries) < self.capacity:
            self.append(self._new_entry(x, y, task_id))
            return
        j = rng.integers(self._stream_count)
        if j < self.capacity:
            self.replace(int(j), self._new_entry(x, y, task_id))

    def arrays(self):
        if not self.entries:
            raise StateError("empty replay buffer")
        x = np.stack([e.x for e in self.entries])
        y = np.array([e.y for e in self.entries], dtype=np.int64)
        t = np.array([e.task_id for e in self.entries], dtype=np.int64)
        return x, y, t


def replay_sample(buffer: ReplayBuffer, k: int, rng: np.random.Generator):
    """Uniform sample without replacement of min(k, |buffer|) stored entries."""
    if len(buffer) == 0:
        raise StateError("cannot sample from an empty buffer")
    idx = rng.choice(len(buffer), size=min(k, len(buffer)), replace=False)
    x = np.stack([buffer.entries[i].x for i in idx])
    y = np.array([buffer.entries[i].y for i in idx], dtype=np.int64)
    return x, y


def agem_project(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Project g so it cannot increase the reference (buffer) loss.

    Identity when <g, g_ref> >= 0, otherwise g minus its component along
    g_ref; the result satisfies <g', g_ref> >= -1e-10.
    """
    if g.shape != g_ref.shape:
        raise ConfigError(f"gradient shapes differ: {g.shape} vs {g_ref.shape}")
    dot = float(np.dot(g, g_ref))
    if dot >= 0.0:
        return g
    return g - (dot / float(np.dot(g_ref, g_ref))) * g_ref


class AGEM(Strategy):
    kind = "agem"

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)

    def _transform_grad(self, grads, batch):
        if len(self.buffer) == 0:
            return grads
        x, y = replay_sample(self.buffer, self.cfg.ref_batch, self.aux_rng)
        _, g_ref = nn_core.backward(self.net, Batch(x, y), LossSpec())
        return agem_project(grads, g_ref)

    def _on_end_task(self, task):
        feats, labels = task.train.features, task.train.labels
        for i in range(feats.shape[0]):
            self.buffer.add_reservoir(feats[i], labels[i], task.task_id, self.aux_rng)

    def _state_arrays(self):
        if not self.buffer.entries:
            return {}
        x, y, t = self.buffer.arrays()
        return {"buf_x": x, "buf_y": y, "buf_t": t}

    def _state_meta(self):
        return {"stream_count": self.buffer._stream_count, "next_uid": self.buffer._next_uid}

    def _load_state(self, arrays, meta):
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity)
        if "buf_x" in arrays:
            for x, y, t in zip(arrays["buf_x"], arrays["buf_y"], arrays["buf_t"]):
                self.buffer.append(self.buffer._new_entry(x, y, t))
        self.buffer._stream_count = meta["stream_count"]
        self.buffer._next_uid = meta["next_uid"]


def gss_score(candidate_grad: np.ndarray, compare_grads: list[np.ndarray]) -> float:
    """Max cosine similarity against the compared gradients; -1 when none compare."""
    cnorm = float(np.linalg.norm(candidate_grad))
    if cnorm == 0.0:
        raise ConfigError("candidate gradient must be nonzero")
    best = -1.0
    for g in compare_grads:
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            continue  # degenerate stored gradient carries no direction
        best = max(best, float(np.dot(candidate_grad, g)) / (cnorm * gnorm))
    return best


def gss_update_buffer(buffer: ReplayBuffer, x, y, task_id, score: float) -> None:
    """Insert when roomy; else replace the worst (max-score) entry iff we beat it."""
    if len(buffer) < buffer.capacity:
        buffer.append(buffer._new_entry(x, y, task_id, score))
        return
    worst = buffer.max_score_index()
    if score < buffer.entries[worst].score:
        buffer.replace(worst, buffer._new_entry(x, y, task_id, score))


class GSS(Strategy):
    """Experience replay whose buffer keeps gradient-diverse samples."""

    kind = "gss"

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)

    def _train_batch(self, batch, epoch, bstep, nbatches):
        # Later epochs revisit the same rows, so only the first pass feeds
        # the buffer; training itself replays stored samples every step.
        if epoch == 0:
            self._offer_candidates(batch)
        if len(self.buffer) > 0:
            rx, ry = replay_sample(self.buffer, self.cfg.batch_size, self.aux_rng)
            batch = Batch(
                np.concatenate([batch.inputs, rx]),
                np.concatenate([batch.labels, ry]),
                task_id=batch.task_id,
            )
        super()._train_batch(batch, epoch, bstep, nbatches)

    def _offer_candidates(self, batch):
        """Score the incoming batch against the batch-start buffer, then insert.

        Cosines come from the factored per-sample-gradient kernel, which
        equals scoring materialized gradients with gss_score but never builds
        an (n x param_count) matrix.
        """
        n_buf = len(self.buffer)
        if n_buf == 0:
            dots = None
        else:
            drawn = [
                self.aux_rng.choice(n_buf, size=min(self.cfg.gss_subset, n_buf), replace=False)
                for _ in range(batch.size)
            ]
            union = np.unique(np.concatenate(drawn))
            subsets = [np.searchsorted(union, d) for d in drawn]
            bx = np.stack([self.buffer.entries[i].x for i in union])
            by = np.array([self.buffer.entries[i].y for i in union], dtype=np.int64)
            dots, sq_cand, sq_buf = nn_core.per_sample_grad_dots(
                self.net, batch.inputs, batch.labels, bx, by
            )
        for k in range(batch.size):
            if dots is None:
                zs_logits = nn_core.forward(self.net, batch.inputs[k : k + 1])
                p = nn_core.softmax(zs_logits)[0]
                p[batch.labels[k]] -= 1.0
                if not p.any():
                    continue
                score = -1.0
            else:
                if sq_cand[k] == 0.0:
                    continue  # perfectly fit sample: no direction to compare
                idx = subsets[k]
                norms = np.sqrt(sq_cand[k] * sq_buf[idx])
                ok = norms > 0.0
                score = float(np.max(dots[k, idx][ok] / norms[ok])) if ok.any() else -1.0
            gss_update_buffer(self.buffer, batch.inputs[k], batch.labels[k], batch.task_id, score)

    def _state_arrays(self):
        if not self.buffer.entries:
            return {}
        x, y, t = self.buffer.arrays()
        scores = np.array([e.score for e in self.buffer.entries])
        return {"buf_x": x, "buf_y": y, "buf_t": t, "buf_score": scores}

    def _state_meta(self):
        return {"next_uid": self.buffer._next_uid}

    def _load_state(self, arrays, meta):
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity)
        if "buf_x" in arrays:
            for x, y, t, s in zip(arrays["buf_x"], arrays["buf_y"], arrays["buf_t"],
                                  arrays["buf_score"]):
                self.buffer.append(self.buffer._new_entry(x, y, t, float(s)))
        self.buffer._next_uid = meta["next_uid"]


def normalized_features(net, inputs: np.ndarray) -> np.ndarray:
    """L2-normalized last-hidden activations; zero rows stay zero."""
    feats = nn_core.hidden_features(net, inputs)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.maximum(norms, 1e-12)


def icarl_build_exemplars(features: np.ndarray, m: int) -> list[int]:
    """Greedy herding: repeatedly pick the row keeping the running exemplar
    mean closest to the class mean. Returns row indices in pick order."""
    if m < 1:
        raise ConfigError(f"need at least one exemplar, got m={m}")
    n = features.shape[0]
    mu = features.mean(axis=0)
    chosen: list[int] = []
    chosen_sum = np.zeros(features.shape[1])
    remaining = np.ones(n, dtype=bool)
    for step in range(min(m, n)):
        cand_means = (chosen_sum + features) / (step + 1)
        dists = np.linalg.norm(cand_means - mu, axis=1)
        dists[~remaining] = np.inf
        pick = int(np.argmin(dists))  # ties -> lowest row index
        chosen.append(pick)
        chosen_sum += features[pick]
        remaining[pick] = False
    return chosen


def nearest_mean_classify(means: dict[int, np.ndarray], feature: np.ndarray) -> int:
    """Class with the closest mean (Euclidean); ties break to the lowest id."""
    if not means:
        raise StateError("no exemplar means available")
    class_ids = sorted(means)
    dists = [float(np.linalg.norm(feature - means[c])) for c in class_ids]
    return class_ids[int(np.argmin(dists))]


class ICaRL(Strategy):
    """Exemplar rehearsal + distillation; nearest-mean-of-exemplars inference."""

    kind = "icarl"

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        self.exemplars: dict[int, list[np.ndarray]] = {}
        self.class_means: dict[int, np.ndarray] = {}
        self.snapshot = None

    def _on_begin_task(self, task):
        self.snapshot = self.net if self.prev_classes.size else None

    def _task_train_arrays(self, task):
        feats, labels = task.train.features, task.train.labels
        if self.exemplars:
            order = sorted(self.exemplars)  # canonical order; dict order is load-dependent
            ex = np.stack([x for c in order for x in self.exemplars[c]])
            ey = np.concatenate(
                [np.full(len(self.exemplars[c]), c, dtype=np.int64) for c in order]
            )
            feats = np.concatenate([feats, ex])
            labels = np.concatenate([labels, ey])
        return feats, labels

    def _loss_spec(self, batch: Batch) -> LossSpec:
        if self.snapshot is None:
            return LossSpec()
        return LossSpec(
            distill_weight=1.0,
            distill_targets=lwf_targets(self.snapshot, batch.inputs, self.prev_classes),
            distill_classes=self.prev_classes,
            temperature=self.cfg.temperature,
        )

    def _on_end_task(self, task):
        seen = [int(c) for c in self.seen_classes]
        m = self.cfg.buffer_capacity // len(seen)
        if m < 1:
            raise ConfigError(
                f"buffer capacity {self.cfg.buffer_capacity} cannot hold one "
                f"exemplar for each of {len(seen)} classes"
            )
        for c in list(self.exemplars):
            self.exemplars[c] = self.exemplars[c][:m]  # herding order: keep the head
        for c in sorted(set(int(v) for v in task.class_set)):
            rows = task.train.features[task.train.labels == c]
            feats = normalized_features(self.net, rows)
            picks = icarl_build_exemplars(feats, m)
            self.exemplars[c] = [rows[i].copy() for i in picks]
        self.class_means = {
            c: normalized_features(self.net, np.stack(rows)).mean(axis=0)
            for c, rows in self.exemplars.items()
        }

    def _predict_logits(self, inputs, task_hint):
        raise NotImplementedError("iCaRL predicts via nearest exemplar mean")

    def predict(self, inputs: np.ndarray, task_hint: int | None = None) -> np.ndarray:
        cols = self._candidate_classes(task_hint)
        means = {c: self.class_means[c] for c in cols if c in self.class_means}
        if len(means) < len(cols):
            raise StateError("a candidate class has no exemplars yet")
        feats = normalized_features(self.net, inputs)
        class_ids = np.array(sorted(means), dtype=np.int64)
        centers = np.stack([means[c] for c in class_ids])
        d2 = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        return class_ids[np.argmin(d2, axis=1)]

    def _state_arrays(self):
        out = {}
        for c, rows in self.exemplars.items():
            out[f"ex{c}"] = np.stack(rows)
        for c, mu in self.class_means.items():
            out[f"mu{c}"] = mu
        if self.snapshot is not None:
            out["snapshot"] = self.snapshot.to_flat()
        return out

    def _state_meta(self):
        return {"exemplar_classes": sorted(self.exemplars)}

    def _load_state(self, arrays, meta):
        self.exemplars = {
            c: [row.copy() for row in arrays[f"ex{c}"]] for c in meta["exemplar_classes"]
        }
        self.class_means = {c: arrays[f"mu{c}"] for c in meta["exemplar_classes"]}
        self.snapshot = self.net.with_flat(arrays["snapshot"]) if "snapshot" in arrays else None
