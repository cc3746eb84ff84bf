"""Regularization-based learners: distillation (LwF) and parameter importance (EWC, SI)."""

from __future__ import annotations

import numpy as np

from .. import nn_core
from ..errors import ConfigError
from ..nn_core import Batch, LossSpec, Network, QuadraticPenalty
from .base import Strategy

# LwF distills old-class outputs with a fixed unit weight; the lambda knob is
# reserved for the quadratic-penalty methods.
LWF_DISTILL_WEIGHT = 1.0


def lwf_targets(snapshot: Network, inputs: np.ndarray, old_classes: np.ndarray) -> np.ndarray:
    """Old-class logits of the frozen pre-task snapshot, the distillation target."""
    return nn_core.forward(snapshot, inputs)[:, old_classes]


class LwF(Strategy):
    kind = "lwf"

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        self.snapshot: Network | None = None

    def _on_begin_task(self, task):
        # Task 1 trains with plain cross-entropy: there is nothing to distill.
        self.snapshot = self.net if self.prev_classes.size else None

    def _loss_spec(self, batch: Batch) -> LossSpec:
        if self.snapshot is None:
            return LossSpec()
        return LossSpec(
            distill_weight=LWF_DISTILL_WEIGHT,
            distill_targets=lwf_targets(self.snapshot, batch.inputs, self.prev_classes),
            distill_classes=self.prev_classes,
            temperature=self.cfg.temperature,
        )


def ewc_consolidate(net: Network, features: np.ndarray, n_fisher: int,
                    rng: np.random.Generator):
    """Empirical diagonal Fisher over n_fisher rows plus the current anchor.

    Labels are drawn from the model's own softmax, keeping the estimate a true
    (nonnegative) Fisher rather than an empirical-label one.
    """
    n = features.shape[0]
    take = min(n_fisher, n)
    idx = rng.choice(n, size=take, replace=False)
    x = features[idx]
    probs = nn_core.softmax(nn_core.forward(net, x))
    u = rng.random((take, 1))
    labels = (probs.cumsum(axis=1) < u).sum(axis=1)
    labels = np.minimum(labels, probs.shape[1] - 1)
    fisher = nn_core.squared_grad_means(net, x, labels)
    return fisher, net.to_flat()


def ewc_penalty(net: Network, anchors: list[tuple[np.ndarray, np.ndarray]], lam: float) -> float:
    """(lam/2) * sum over anchors of sum_k F_k (theta_k - anchor_k)^2."""
    if not anchors:
        raise ConfigError("ewc penalty needs at least one stored anchor")
    theta = net.to_flat()
    total = 0.0
    for fisher, anchor in anchors:
        diff = theta - anchor
        total += 0.5 * lam * float(np.dot(fisher * diff, diff))
    return total


class EWC(Strategy):
    kind = "ewc"
    n_fisher = 1024

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        self.anchors: list[tuple[np.ndarray, np.ndarray]] = []  # (fisher, anchor)

    def _loss_spec(self, batch: Batch) -> LossSpec:
        lam = self.cfg.resolved_lam
        if lam == 0.0 or not self.anchors:
            return LossSpec()
        pens = tuple(
            QuadraticPenalty(lam, fisher, anchor) for fisher, anchor in self.anchors
        )
        return LossSpec(penalties=pens)

    def _on_end_task(self, task):
        self.anchors.append(
            ewc_consolidate(self.net, task.train.features, self.n_fisher, self.aux_rng)
        )

    def _state_arrays(self):
        out = {}
        for i, (fisher, anchor) in enumerate(self.anchors):
            out[f"fisher{i}"] = fisher
            out[f"anchor{i}"] = anchor
        return out

    def _state_meta(self):
        return {"num_anchors": len(self.anchors)}

    def _load_state(self, arrays, meta):
        self.anchors = [
            (arrays[f"fisher{i}"], arrays[f"anchor{i}"]) for i in range(meta["num_anchors"])
        ]


def si_accumulate(omega_running: np.ndarray, grads: np.ndarray,
                  delta_theta: np.ndarray) -> np.ndarray:
    """Path-integral update after one step: omega_k += -g_k * delta_theta_k."""
    if grads.shape != omega_running.shape or delta_theta.shape != omega_running.shape:
        raise ConfigError("omega/grads/delta shapes must match")
    return omega_running - grads * delta_theta


def si_consolidate(omega_running: np.ndarray, theta_now: np.ndarray,
                   theta_start: np.ndarray, xi: float) -> np.ndarray:
    """Importance increment at task end; negative path contributions clip to 0."""
    if xi <= 0:
        raise ConfigError(f"xi must be positive, got {xi}")
    return np.clip(omega_running, 0.0, None) / ((theta_now - theta_start) ** 2 + xi)


class SI(Strategy):
    kind = "si"
    tracks_delta = True

    def __init__(self, cfg, info):
        super().__init__(cfg, info)
        p = self.net.param_count
        self.omega_running = np.zeros(p)
        self.omega_consolidated = np.zeros(p)
        self.theta_start = self.net.to_flat()

    def _loss_spec(self, batch: Batch) -> LossSpec:
        lam = self.cfg.resolved_lam
        if lam == 0.0 or not self.omega_consolidated.any():
            return LossSpec()
        return LossSpec(
            penalties=(QuadraticPenalty(lam, self.omega_consolidated, self.theta_start),)
        )

    def _post_step(self, grads, before_flat):
        delta = self.net.to_flat() - before_flat
        self.omega_running = si_accumulate(self.omega_running, grads, delta)

    def _on_end_task(self, task):
        theta_now = self.net.to_flat()
        self.omega_consolidated = self.omega_consolidated + si_consolidate(
            self.omega_running, theta_now, self.theta_start, self.cfg.xi
        )
        self.omega_running = np.zeros_like(self.omega_running)
        self.theta_start = theta_now

    def _state_arrays(self):
        return {
            "omega_running": self.omega_running,
            "omega_consolidated": self.omega_consolidated,
            "theta_start": self.theta_start,
        }

    def _load_state(self, arrays, meta):
        self.omega_running = arrays["omega_running"]
        self.omega_consolidated = arrays["omega_consolidated"]
        self.theta_start = arrays["theta_start"]
