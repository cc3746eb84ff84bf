"""Shared oracles: finite differences and brute-force recomputations."""

from __future__ import annotations

import numpy as np

from clbench import nn_core
from clbench.nn_core import Batch, LossSpec, Network, QuadraticPenalty


def loss_value(net: Network, batch: Batch, spec: LossSpec, gates=None) -> float:
    loss, _ = nn_core.backward(net, batch, spec, gates=gates)
    return loss


def finite_difference_grads(net: Network, batch: Batch, spec: LossSpec,
                            gates=None, h: float = 1e-5) -> np.ndarray:
    """Central differences over every flat parameter."""
    theta = net.to_flat()
    fd = np.zeros_like(theta)
    for k in range(theta.size):
        tp = theta.copy()
        tp[k] += h
        tm = theta.copy()
        tm[k] -= h
        fd[k] = (
            loss_value(net.with_flat(tp), batch, spec, gates)
            - loss_value(net.with_flat(tm), batch, spec, gates)
        ) / (2 * h)
    return fd


def grad_rel_error(analytic: np.ndarray, fd: np.ndarray, floor: float = 1e-3) -> float:
    """Componentwise relative error with a floor against FD roundoff noise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom))


def random_loss_case(seed: int, dims=(3, 4, 3), n: int = 8):
    """A random (net, batch, composite loss spec, gates) quadruple."""
    r = np.random.default_rng(seed)
    net = Network.init(dims, seed)
    net = net.with_flat(net.to_flat() + 0.2 * r.standard_normal(net.param_count))
    x = r.standard_normal((n, dims[0]))
    y = r.integers(0, dims[-1], n)
    batch = Batch(x, y)
    gates = r.random(net.num_hidden_units) if seed % 2 == 0 else None
    penalties = ()
    if seed % 3 == 0:
        penalties = (
            QuadraticPenalty(r.uniform(0.1, 5.0), r.random(net.param_count),
                             net.to_flat() + r.standard_normal(net.param_count)),
        )
    distill_classes = np.sort(r.choice(dims[-1], size=2, replace=False))
    spec = LossSpec(
        ce_weight=r.uniform(0.5, 2.0),
        distill_weight=r.uniform(0.2, 2.0) if seed % 4 != 1 else 0.0,
        distill_targets=r.standard_normal((n, 2)),
        distill_classes=distill_classes,
        temperature=r.uniform(0.5, 4.0),
        penalties=penalties,
    )
    return net, batch, spec, gates


def brute_force_acc(matrix: np.ndarray) -> float:
    t = matrix.shape[0]
    total = 0.0
    for j in range(t):
        total += matrix[t - 1][j]
    return total / t


def brute_force_bwt(matrix: np.ndarray) -> float:
    t = matrix.shape[0]
    total = 0.0
    for j in range(t - 1):
        total += matrix[t - 1][j] - matrix[j][j]
    return total / (t - 1)
