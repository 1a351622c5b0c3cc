"""Small dense reverse-mode kernel used by the encoder and the models.

Values are float64 numpy arrays wrapped in :class:`Node`. Every op records a
closure that pushes the upstream gradient to its inputs; trainable
parameters live in :class:`ParamGroup` objects and receive their gradients
directly into ``grad_weight``/``grad_bias`` when :func:`backward` runs.
Dense layers and the softmax/BCE heads act on the last axis, so the same ops
serve single documents and whole minibatches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

DTYPE = np.float64


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


class Node:
    __slots__ = ("value", "grad", "_parents", "_backward", "op")

    def __init__(self, value, parents=(), backward_fn=None, op=""):
        self.value = _as_array(value)
        self.grad = None
        self._parents = parents
        self._backward = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Node(op={self.op or 'leaf'}, shape={self.value.shape})"


def constant(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


@dataclass(eq=False)
class ParamGroup:
    """One trainable weight matrix plus (optionally) its bias vector.

    ``bias`` is ``None`` for lookup tables such as the token embedding.
    """

    name: str
    weight: np.ndarray
    bias: np.ndarray | None = None
    frozen: bool = False
    grad_weight: np.ndarray = field(init=False, repr=False)
    grad_bias: np.ndarray | None = field(init=False, repr=False)
    has_grad: bool = field(default=False, init=False, repr=False)

    def __post_init__(self):
        self.weight = _as_array(self.weight)
        if self.weight.ndim != 2:
            raise ShapeError(f"{self.name}: weight must be 2-D, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = _as_array(self.bias)
            if self.bias.shape != (self.weight.shape[0],):
                raise ShapeError(
                    f"{self.name}: bias shape {self.bias.shape} does not match weight shape {self.weight.shape}"
                )
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = None if self.bias is None else np.zeros_like(self.bias)

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def zero_grad(self):
        self.grad_weight.fill(0.0)
        if self.grad_bias is not None:
            self.grad_bias.fill(0.0)
        self.has_grad = False

    def arrays(self) -> dict[str, np.ndarray]:
        out = {f"{self.name}.weight": self.weight}
        if self.bias is not None:
            out[f"{self.name}.bias"] = self.bias
        return out


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def dense_forward(layer: ParamGroup, x) -> Node:
    """``weight @ x + bias`` along the last axis of ``x``.

    The forward product is accumulated over the input dimension in index
    order so results are reproducible independently of the BLAS build.
    """
    x = constant(x)
    if x.value.ndim == 0 or x.value.shape[-1] != layer.in_features:
        raise ShapeError(
            f"dense '{layer.name}': input shape {x.value.shape} incompatible with weight shape {layer.weight.shape}"
        )
    W = layer.weight
    xv = x.value
    acc = np.zeros(xv.shape[:-1] + (layer.out_features,), dtype=DTYPE)
    for j in range(layer.in_features):
        acc += xv[..., j, None] * W[:, j]
    out_val = acc if layer.bias is None else acc + layer.bias

    def backward_fn(g):
        if not layer.frozen:
            g2 = g.reshape(-1, layer.out_features)
            x2 = xv.reshape(-1, layer.in_features)
            layer.grad_weight += g2.T @ x2
            if layer.bias is not None:
                layer.grad_bias += g2.sum(axis=0)
            layer.has_grad = True
        x._accumulate(g @ W)

    return Node(out_val, (x,), backward_fn, "dense")


def embedding_bag_mean(table: ParamGroup, ids, segments, n_segments: int) -> Node:
    """Mean of ``table`` rows per segment; empty segments give a zero row.

    ``ids[i]`` is a row index belonging to segment ``segments[i]``.
    """
    ids = np.asarray(ids, dtype=np.intp)
    segments = np.asarray(segments, dtype=np.intp)
    if ids.shape != segments.shape:
        raise ShapeError(f"embedding bag: ids shape {ids.shape} != segments shape {segments.shape}")
    d = table.weight.shape[1]
    counts = np.bincount(segments, minlength=n_segments).astype(DTYPE)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    out_val = np.zeros((n_segments, d), dtype=DTYPE)
    np.add.at(out_val, segments, table.weight[ids])
    out_val *= inv[:, None]

    def backward_fn(g):
        if table.frozen:
            return
        np.add.at(table.grad_weight, ids, g[segments] * inv[segments, None])
        table.has_grad = True

    return Node(out_val, (), backward_fn, "embedding_bag")


def relu(x) -> Node:
    x = constant(x)
    mask = x.value > 0
    out_val = np.where(mask, x.value, 0.0)
    return Node(out_val, (x,), lambda g: x._accumulate(g * mask), "relu")


def sigmoid(x) -> Node:
    x = constant(x)
    out_val = _stable_sigmoid(x.value)
    return Node(out_val, (x,), lambda g: x._accumulate(g * out_val * (1.0 - out_val)), "sigmoid")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(logits, mask=None) -> Node:
    """Softmax over the last axis with max-subtraction.

    ``mask`` (boolean, same shape) excludes entries; a row with no allowed
    entries falls back to using all of them.
    """
    x = constant(logits)
    if x.value.ndim == 0 or x.value.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    z = x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeError(f"softmax mask shape {mask.shape} != logits shape {z.shape}")
        mask = mask | ~mask.any(axis=-1, keepdims=True)
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        x._accumulate(out_val * (g - (g * out_val).sum(axis=-1, keepdims=True)))

    return Node(out_val, (x,), backward_fn, "softmax")


def reshape(x, shape) -> Node:
    x = constant(x)
    old = x.value.shape
    out_val = x.value.reshape(shape)
    return Node(out_val, (x,), lambda g: x._accumulate(g.reshape(old)), "reshape")


def mean(x, axis: int) -> Node:
    x = constant(x)
    n = x.value.shape[axis]
    out_val = x.value.sum(axis=axis) / n

    def backward_fn(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g, axis) / n, x.value.shape))

    return Node(out_val, (x,), backward_fn, "mean")


def scale(x, factor: float) -> Node:
    x = constant(x)
    return Node(x.value * factor, (x,), lambda g: x._accumulate(g * factor), "scale")


def weighted_sum(weights, vectors) -> Node:
    """``out[..., :] = sum_k weights[..., k] * vectors[..., k, :]``, summed in k order."""
    w = constant(weights)
    v = constant(vectors)
    if v.value.ndim < 2 or w.value.shape != v.value.shape[:-1]:
        raise ShapeError(f"weighted sum: weights shape {w.value.shape} vs vectors shape {v.value.shape}")
    wv, vv = w.value, v.value
    out_val = wv[..., 0, None] * vv[..., 0, :]
    for k in range(1, wv.shape[-1]):
        out_val = out_val + wv[..., k, None] * vv[..., k, :]

    def backward_fn(g):
        w._accumulate(np.einsum("...d,...kd->...k", g, vv))
        v._accumulate(wv[..., None] * g[..., None, :])

    return Node(out_val, (w, v), backward_fn, "weighted_sum")


def sigmoid_bce(logits, targets) -> Node:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets.

    Uses ``max(z, 0) - z*t + log1p(exp(-|z|))`` so no log of 0 is taken.
    """
    z = constant(logits)
    t = _as_array(targets)
    if z.value.shape != t.shape:
        raise ShapeError(f"bce: logits shape {z.value.shape} != targets shape {t.shape}")
    zv = z.value
    n = zv.size
    loss = (np.maximum(zv, 0.0) - zv * t + np.log1p(np.exp(-np.abs(zv)))).sum() / n

    def backward_fn(g):
        z._accumulate(g * (_stable_sigmoid(zv) - t) / n)

    return Node(loss, (z,), backward_fn, "sigmoid_bce")


def probability_bce(probs, targets, eps: float = 1e-12) -> Node:
    """Mean binary cross-entropy on probabilities, clamped to [eps, 1-eps]."""
    p = constant(probs)
    t = _as_array(targets)
    if p.value.shape != t.shape:
        raise ShapeError(f"bce: probabilities shape {p.value.shape} != targets shape {t.shape}")
    pv = p.value
    pc = np.clip(pv, eps, 1.0 - eps)
    n = pv.size
    loss = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)).sum() / n
    inside = (pv > eps) & (pv < 1.0 - eps)

    def backward_fn(g):
        dp = (-t / pc + (1.0 - t) / (1.0 - pc)) / n
        p._accumulate(g * dp * inside)

    return Node(loss, (p,), backward_fn, "probability_bce")


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


def backward(loss: Node, seed=None) -> None:
    """Propagate gradients from ``loss`` through the recorded graph.

    The graph is released afterwards; a second call on the same node fails.
    """
    if not isinstance(loss, Node) or loss._backward is None:
        raise RuntimeError("backward called without a recorded forward pass")
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.value) if seed is None else _as_array(seed)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        node._backward = None
        node._parents = ()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)


def adam_step(params: list[ParamGroup], state: AdamState) -> None:
    """One bias-corrected Adam update over every unfrozen group.

    Every unfrozen group must have received gradients since its last step.
    """
    trainable = [p for p in params if not p.frozen]
    missing = [p.name for p in trainable if not p.has_grad]
    if missing:
        raise RuntimeError(f"adam_step: no gradients populated for {', '.join(missing)}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for group in trainable:
        pairs = [("weight", group.weight, group.grad_weight)]
        if group.bias is not None:
            pairs.append(("bias", group.bias, group.grad_bias))
        for suffix, value, grad in pairs:
            key = f"{group.name}.{suffix}"
            if key not in state.moments:
                state.moments[key] = (np.zeros_like(value), np.zeros_like(value))
            m, v = state.moments[key]
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * (grad * grad)
            value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        group.has_grad = False


def zero_grad(params: list[ParamGroup]) -> None:
    for p in params:
        p.zero_grad()
