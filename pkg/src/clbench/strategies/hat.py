"""Hard-attention task gating: per-task unit masks that block gradients into
units claimed by earlier tasks. Task-incremental only (needs the task id at
test time to select a mask)."""

from __future__ import annotations

import numpy as np

from .. import nn_core
from ..errors import ConfigError
from ..nn_core import Batch, LossSpec, Network, _stable_sigmoid
from .base import Strategy

EMB_COMP_MAX = 50.0  # clamp for the annealed-slope compensation factor


def hat_gate(embeddings: np.ndarray, s: float) -> np.ndarray:
    """Per-hidden-unit gate sigmoid(s * e); inference uses s = smax."""
    if s <= 0:
        raise ConfigError(f"gate scale must be positive, got {s}")
    return _stable_sigmoid(s * embeddings)


def hat_gradient_gate(cumulative_mask: np.ndarray, net: Network) -> np.ndarray:
    """Per-parameter trainability from the cumulative unit mask.

    A weight moves only as far as both its endpoints are unclaimed:
    multiplier = min(1 - cum_src, 1 - cum_dst), with input and output layer
    endpoints always unclaimed. Biases follow their unit. Fully-claimed
    units therefore pass zero gradient through every touching parameter.
    """
    free = 1.0 - np.asarray(cumulative_mask, dtype=np.float64)
    per_layer = net.split_gates(free)
    parts = []
    n_layers = len(net.weights)
    for l in range(n_layers):
        fan_in, fan_out = net.layer_dims[l], net.layer_dims[l + 1]
        src_free = np.ones(fan_in) if l == 0 else per_layer[l - 1]
        dst_free = np.ones(fan_out) if l == n_layers - 1 else per_layer[l]
        w_mask = np.minimum(src_free[:, None], dst_free[None, :])
        parts.append(w_mask.ravel())
        parts.append(dst_free)
    return np.concatenate(parts)


class HAT(Strategy):
    kind = "hat"
    requires_task_labels = True

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        h = self.net.num_hidden_units
        self.embeddings: dict[int, np.ndarray] = {}
        self.cumulative_mask = np.zeros(h)
        self._mask: np.ndarray | None = None
        self._s = cfg.smax

    def _on_begin_task(self, task):
        self.embeddings[task.task_id] = self.aux_rng.standard_normal(self.net.num_hidden_units)
        # The cumulative mask is frozen during a task, so the parameter gate is too.
        self._mask = hat_gradient_gate(self.cumulative_mask, self.net)

    def _anneal(self, bstep: int, nbatches: int) -> float:
        smax = self.cfg.smax
        if nbatches <= 1:
            return smax
        return 1.0 / smax + (smax - 1.0 / smax) * bstep / (nbatches - 1)

    def _train_batch(self, batch: Batch, epoch: int, bstep: int, nbatches: int):
        e = self.embeddings[batch.task_id]
        s = self._anneal(bstep, nbatches)
        gates = hat_gate(e, s)
        cols = np.asarray(self.info.class_sets[batch.task_id], dtype=np.int64)
        spec = LossSpec(ce_classes=cols)
        _, grads, gate_grad = nn_core.backward(
            self.net, batch, spec, gates=gates, return_gate_grad=True
        )
        self.net = nn_core.sgd_step(self.net, grads, self.cfg.lr, self._mask)
        # Compensate the annealed sigmoid slope so embeddings keep training
        # even where the gate saturates; factor clamped to [1, EMB_COMP_MAX].
        slope = s * gates * (1.0 - gates)
        comp = np.clip(1.0 / np.maximum(slope, 1e-300), 1.0, EMB_COMP_MAX)
        self.embeddings[batch.task_id] = e - self.cfg.lr * gate_grad * slope * comp

    def _on_end_task(self, task):
        gate = hat_gate(self.embeddings[task.task_id], self.cfg.smax)
        self.cumulative_mask = np.maximum(self.cumulative_mask, gate)

    def _candidate_classes(self, task_hint):
        if task_hint is None:
            raise ConfigError("hard-attention gating needs a task hint at test time")
        return super()._candidate_classes(task_hint)

    def _predict_logits(self, inputs, task_hint):
        gates = hat_gate(self.embeddings[task_hint], self.cfg.smax)
        return nn_core.forward(self.net, inputs, gates=gates)

    def _state_arrays(self):
        out = {"cumulative_mask": self.cumulative_mask}
        for t, e in self.embeddings.items():
            out[f"emb{t}"] = e
        return out

    def _state_meta(self):
        return {"embedding_tasks": sorted(self.embeddings)}

    def _load_state(self, arrays, meta):
        self.cumulative_mask = arrays["cumulative_mask"]
        self.embeddings = {t: arrays[f"emb{t}"] for t in meta["embedding_tasks"]}
        self._mask = hat_gradient_gate(self.cumulative_mask, self.net)
