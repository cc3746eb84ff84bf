"""Dense-network training engine: forward, exact backprop, SGD, loss terms.

Everything is float64 and seeded. Networks are value objects: an SGD step
returns a new Network instead of mutating, so snapshots stay valid anchors.
Parameters flatten layer by layer (weight matrix in row-major order, then
bias) into one vector; gradients use the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericsError

RELU = "relu"


def _stable_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(z):
    """Row-wise log softmax with max-shift for stability."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


@dataclass(frozen=True)
class Network:
    """Fully-connected net: ReLU hidden layers, identity (logit) output.

    weights[l] has shape (layer_dims[l], layer_dims[l+1]); activations are
    row batches, z = h @ W + b.
    """

    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = RELU

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise ConfigError(f"layer_dims must be >=2 positive ints, got {dims}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ConfigError(
                    f"layer {l} parameter shapes {w.shape}/{b.shape} do not chain "
                    f"with dims {dims}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericsError(f"non-finite parameters in layer {l}")

    @classmethod
    def init(cls, layer_dims, seed) -> "Network":
        """Seeded Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in layer_dims)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims, tuple(weights), tuple(biases))

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return self.layer_dims[1:-1]

    @property
    def num_hidden_units(self) -> int:
        return int(sum(self.hidden_dims))

    @property
    def param_count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def to_flat(self) -> np.ndarray:
        """Layer-major, row-major flattening of all parameters."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, flat: np.ndarray) -> "Network":
        """Rebuild a network from a flat parameter vector (same layout)."""
        if flat.shape != (self.param_count,):
            raise ConfigError(
                f"flat vector length {flat.shape} != param count {self.param_count}"
            )
        weights, biases, off = [], [], 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            n = fan_in * fan_out
            weights.append(flat[off : off + n].reshape(fan_in, fan_out))
            off += n
            biases.append(flat[off : off + fan_out])
            off += fan_out
        return Network(self.layer_dims, tuple(weights), tuple(biases), self.activation)

    def split_gates(self, gates: np.ndarray) -> list[np.ndarray]:
        """Slice a flat per-hidden-unit gate vector into per-layer pieces."""
        if gates.shape != (self.num_hidden_units,):
            raise ConfigError(
                f"gate vector length {gates.shape} != hidden unit count "
                f"{self.num_hidden_units}"
            )
        out, off = [], 0
        for h in self.hidden_dims:
            out.append(gates[off : off + h])
            off += h
        return out


@dataclass(frozen=True)
class Batch:
    """Training minibatch: inputs (n x d), global integer labels, optional task id."""

    inputs: np.ndarray
    labels: np.ndarray
    task_id: int | None = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ConfigError(f"inputs must be a nonempty 2-d matrix, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigError("labels must be one id per input row")
        if not np.isfinite(self.inputs).all():
            raise NumericsError("non-finite batch inputs")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class QuadraticPenalty:
    """(weight/2) * sum_k importance_k * (theta_k - anchor_k)^2 over flat params."""

    weight: float
    importance: np.ndarray
    anchor: np.ndarray


@dataclass(frozen=True)
class LossSpec:
    """Weighted composite of the three supported loss terms.

    ce_classes / distill_classes restrict the softmax to those global class
    columns (sorted ids); distill_targets are per-row logits aligned with
    distill_classes. Penalties act on the flat parameter vector.
    """

    ce_weight: float = 1.0
    ce_classes: np.ndarray | None = None
    distill_weight: float = 0.0
    distill_targets: np.ndarray | None = None
    distill_classes: np.ndarray | None = None
    temperature: float = 2.0
    penalties: tuple[QuadraticPenalty, ...] = ()


def forward_cache(net: Network, inputs: np.ndarray, gates: np.ndarray | None = None):
    """Forward pass keeping pre-activations and activations for backprop.

    Returns (zs, hs, logits): hs[0] is the input, hs[l+1] the gated hidden
    activation of layer l, logits the identity output.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.input_dim:
        raise ConfigError(
            f"input width {inputs.shape} does not match net input dim {net.input_dim}"
        )
    gate_slices = net.split_gates(np.asarray(gates, dtype=np.float64)) if gates is not None else None
    zs, hs = [], [inputs]
    h = inputs
    n_layers = len(net.weights)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        zs.append(z)
        if l < n_layers - 1:
            h = np.maximum(z, 0.0)
            if gate_slices is not None:
                h = h * gate_slices[l]
            hs.append(h)
    return zs, hs, zs[-1]


def forward(net: Network, inputs: np.ndarray, gates: np.ndarray | None = None) -> np.ndarray:
    """Logits for a batch; gates multiply hidden activations after the ReLU."""
    return forward_cache(net, inputs, gates)[2]


def hidden_features(net: Network, inputs: np.ndarray, gates: np.ndarray | None = None) -> np.ndarray:
    """Last hidden-layer activations (the representation nearest-mean classifiers use)."""
    if len(net.layer_dims) < 3:
        return np.asarray(inputs, dtype=np.float64)
    return forward_cache(net, inputs, gates)[1][-1]


def softmax_cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label], max-shifted."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise NumericsError("non-finite logits")
    if not 0 <= int(label) < logits.shape[-1]:
        raise ConfigError(f"label {label} outside [0, {logits.shape[-1]})")
    return float(-log_softmax(logits)[..., int(label)])


def distillation_loss(logits: np.ndarray, target_logits: np.ndarray, temperature: float) -> float:
    """KL(softmax(target/T) || softmax(logits/T)); exactly 0 for identical logits."""
    logits = np.asarray(logits, dtype=np.float64)
    target_logits = np.asarray(target_logits, dtype=np.float64)
    if logits.shape != target_logits.shape:
        raise ConfigError(
            f"logit length {logits.shape} != target length {target_logits.shape}"
        )
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    log_p = log_softmax(target_logits / temperature)
    log_q = log_softmax(logits / temperature)
    p = np.exp(log_p)
    return float(np.sum(p * (log_p - log_q), axis=-1).sum())


def _columns_and_positions(class_ids: np.ndarray, labels: np.ndarray):
    cols = np.asarray(class_ids, dtype=np.int64)
    pos = np.searchsorted(cols, labels)
    ok = (pos < cols.size) & (cols[np.minimum(pos, cols.size - 1)] == labels)
    if not ok.all():
        raise ConfigError("batch labels outside the restricted class columns")
    return cols, pos


def backward(
    net: Network,
    batch: Batch,
    spec: LossSpec,
    gates: np.ndarray | None = None,
    return_gate_grad: bool = False,
):
    """Mean-batch composite loss and its exact gradient (flat layout).

    With return_gate_grad, also returns dLoss/dGate per hidden unit, which
    gated strategies chain into their own gate parameters.
    """
    zs, hs, logits = forward_cache(net, batch.inputs, gates)
    n = batch.size
    d_out = np.zeros_like(logits)
    loss = 0.0

    if spec.ce_weight != 0.0:
        if spec.ce_classes is not None:
            cols, pos = _columns_and_positions(spec.ce_classes, batch.labels)
            sub = logits[:, cols]
        else:
            cols, pos = None, batch.labels
            sub = logits
        log_q = log_softmax(sub)
        loss += spec.ce_weight * float(-log_q[np.arange(n), pos].mean())
        grad = np.exp(log_q)
        grad[np.arange(n), pos] -= 1.0
        grad *= spec.ce_weight / n
        if cols is None:
            d_out += grad
        else:
            d_out[:, cols] += grad

    if spec.distill_weight != 0.0 and spec.distill_targets is not None:
        t = spec.temperature
        if t <= 0:
            raise ConfigError(f"temperature must be positive, got {t}")
        cols = spec.distill_classes
        sub = logits if cols is None else logits[:, cols]
        if spec.distill_targets.shape != sub.shape:
            raise ConfigError(
                f"distill targets shape {spec.distill_targets.shape} != logits "
                f"selection {sub.shape}"
            )
        log_p = log_softmax(spec.distill_targets / t)
        log_q = log_softmax(sub / t)
        p = np.exp(log_p)
        loss += spec.distill_weight * float(np.sum(p * (log_p - log_q), axis=1).mean())
        grad = (np.exp(log_q) - p) * (spec.distill_weight / (t * n))
        if cols is None:
            d_out += grad
        else:
            d_out[:, cols] += grad

    # Backprop through the layers.
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    gate_slices = net.split_gates(gates) if gates is not None else None
    gate_grads = [np.zeros(h) for h in net.hidden_dims] if return_gate_grad else None

    dz = d_out
    for l in range(len(net.weights) - 1, -1, -1):
        grads_w[l] = hs[l].T @ dz
        grads_b[l] = dz.sum(axis=0)
        if l > 0:
            da = dz @ net.weights[l].T
            relu_z = np.maximum(zs[l - 1], 0.0)
            if gate_grads is not None:
                gate_grads[l - 1] = (da * relu_z).sum(axis=0)
            if gate_slices is not None:
                da = da * gate_slices[l - 1]
            dz = da * (zs[l - 1] > 0)

    flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(grads_w, grads_b)])

    if spec.penalties:
        theta = net.to_flat()
        for pen in spec.penalties:
            if pen.importance.shape != theta.shape or pen.anchor.shape != theta.shape:
                raise ConfigError("penalty importance/anchor must match flat param layout")
            diff = theta - pen.anchor
            loss += 0.5 * pen.weight * float(np.dot(pen.importance * diff, diff))
            flat += pen.weight * pen.importance * diff

    if return_gate_grad:
        return loss, flat, np.concatenate(gate_grads) if gate_grads else np.zeros(0)
    return loss, flat


def sgd_step(
    net: Network,
    grads: np.ndarray,
    lr: float,
    grad_gate: np.ndarray | None = None,
) -> Network:
    """theta <- theta - lr * gate (.) grads; gate-0 parameters are bit-identical."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if grads.shape != (net.param_count,):
        raise ConfigError(
            f"gradient length {grads.shape} != param count {net.param_count}"
        )
    step = grads if grad_gate is None else grad_gate * grads
    return net.with_flat(net.to_flat() - lr * step)


def per_sample_grads(net: Network, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy gradients, one flat vector per sample (n x P).

    The loss here is the *per-sample* CE (no 1/n), so row k equals
    backward() on the singleton batch k.
    """
    zs, hs, logits = forward_cache(net, inputs)
    n = inputs.shape[0]
    dz = softmax(logits)
    dz[np.arange(n), labels] -= 1.0
    parts = []
    stack = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        gw = np.einsum("ni,nj->nij", hs[l], dz).reshape(n, -1)
        stack[l] = (gw, dz.copy())
        if l > 0:
            dz = (dz @ net.weights[l].T) * (zs[l - 1] > 0)
    for gw, gb in stack:
        parts.append(gw)
        parts.append(gb)
    return np.concatenate(parts, axis=1)


def _per_sample_hd(net: Network, inputs: np.ndarray, labels: np.ndarray):
    """Per-layer (input activation, output delta) pairs of the per-sample CE grads."""
    zs, hs, logits = forward_cache(net, inputs)
    dz = softmax(logits)
    dz[np.arange(inputs.shape[0]), labels] -= 1.0
    pairs = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        pairs[l] = (hs[l], dz)
        if l > 0:
            dz = (dz @ net.weights[l].T) * (zs[l - 1] > 0)
    return pairs


def per_sample_grad_dots(net: Network, inputs_a, labels_a, inputs_b, labels_b):
    """All pairwise dot products between per-sample CE gradients of two batches.

    Uses the outer-product structure of MLP gradients: <h_a x d_a, h_b x d_b>
    = <h_a, h_b><d_a, d_b>, so nothing of size param_count is materialized.
    Returns (dots (na, nb), sqnorm_a (na,), sqnorm_b (nb,)); agrees with
    per_sample_grads up to float roundoff.
    """
    pa = _per_sample_hd(net, inputs_a, labels_a)
    pb = _per_sample_hd(net, inputs_b, labels_b)
    na, nb = inputs_a.shape[0], inputs_b.shape[0]
    dots = np.zeros((na, nb))
    sqa = np.zeros(na)
    sqb = np.zeros(nb)
    for (ha, da), (hb, db) in zip(pa, pb):
        dots += (ha @ hb.T + 1.0) * (da @ db.T)  # +1 covers the bias gradient
        sqa += ((ha**2).sum(axis=1) + 1.0) * (da**2).sum(axis=1)
        sqb += ((hb**2).sum(axis=1) + 1.0) * (db**2).sum(axis=1)
    return dots, sqa, sqb


def squared_grad_means(net: Network, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean of squared per-sample CE gradients, computed without materializing them.

    For an MLP the per-sample weight gradient is an outer product, so its
    square is the outer product of squares; the mean is a single matmul per
    layer. Feeds the diagonal-Fisher estimate.
    """
    zs, hs, logits = forward_cache(net, inputs)
    n = inputs.shape[0]
    dz = softmax(logits)
    dz[np.arange(n), labels] -= 1.0
    parts = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        gw2 = (hs[l] ** 2).T @ (dz**2) / n
        gb2 = (dz**2).mean(axis=0)
        parts[l] = np.concatenate([gw2.ravel(), gb2])
        if l > 0:
            dz = (dz @ net.weights[l].T) * (zs[l - 1] > 0)
    return np.concatenate(parts)
