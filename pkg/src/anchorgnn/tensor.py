"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array and, when
gradients are required, links back to the op that produced it. ``backward``
topologically orders those links and accumulates gradients into every leaf.
A tape is single-use: each training step records a fresh forward pass.

Also provides the Adam optimizer, a central-difference gradient checker, and
JSON checkpointing of named parameter sets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "TapeConsumedError",
    "parameter",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "concat_cols",
    "neighbor_sum",
    "segment_pool",
    "dropout_mask",
    "softmax_cross_entropy",
    "softmax_rows",
    "tensor_sum",
    "tensor_mean",
    "backward",
    "zero_grads",
    "OptimizerState",
    "adam_init",
    "adam_step",
    "gradcheck",
    "save_params",
    "load_params",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeConsumedError(RuntimeError):
    """Raised when backward is called twice on the same recorded forward pass."""


class _TapeNode:
    """One recorded primitive: parent tensors plus a closure producing their grads."""

    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """A dense float64 array, optionally carrying a gradient slot and a tape link."""

    __slots__ = ("values", "requires_grad", "grad", "_node", "_consumed")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _TapeNode | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Copy of the values with no gradient path (stop-gradient)."""
        return Tensor(self.values.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    # Ops are recorded only when some input participates in differentiation.
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _TapeNode(tuple(parents), backward_fn)
    return out


def _check_finite_forward(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.values @ b.values)

    def backward_fn(g):
        return (g @ b.values.T, a.values.T @ g)

    return _record(out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_values = a.values + b.values
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}") from exc
    out = Tensor(out_values)

    def backward_fn(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _record(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_values = a.values - b.values
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}") from exc
    out = Tensor(out_values)

    def backward_fn(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _record(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_values = a.values * b.values
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}") from exc
    out = Tensor(out_values)

    def backward_fn(g):
        return (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape))

    return _record(out, (a, b), backward_fn)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values * s)

    def backward_fn(g):
        return (g * s,)

    return _record(out, (a,), backward_fn)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.values, 0.0))
    positive = x.values > 0.0

    def backward_fn(g):
        return (g * positive,)

    return _record(out, (x,), backward_fn)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: incompatible shapes {a.shape} || {b.shape}")
    out = Tensor(np.concatenate([a.values, b.values], axis=1))
    split = a.shape[1]

    def backward_fn(g):
        return (g[:, :split], g[:, split:])

    return _record(out, (a, b), backward_fn)


def neighbor_sum(
    x: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    weights: np.ndarray | None = None,
    num_rows: int | None = None,
) -> Tensor:
    """Aggregate row features along edges: out[dst[e]] += w[e] * x[src[e]].

    The index arrays and weights are constants of the graph structure; gradients
    flow only through the node features.
    """
    x = _as_tensor(x)
    n = x.shape[0] if num_rows is None else num_rows
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if src.shape != dst.shape:
        raise ShapeError(f"neighbor_sum: src/dst length mismatch {src.shape} vs {dst.shape}")
    gathered = x.values[src]
    if weights is not None:
        gathered = gathered * weights[:, None]
    out_values = np.zeros((n, x.shape[1]), dtype=np.float64)
    np.add.at(out_values, dst, gathered)
    out = Tensor(out_values)

    def backward_fn(g):
        pulled = g[dst]
        if weights is not None:
            pulled = pulled * weights[:, None]
        gx = np.zeros_like(x.values)
        np.add.at(gx, src, pulled)
        return (gx,)

    return _record(out, (x,), backward_fn)


def segment_pool(x: Tensor, segment_ids: np.ndarray, num_segments: int, mode: str = "mean") -> Tensor:
    """Pool node rows into per-segment vectors (mean or sum over each segment)."""
    x = _as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape[0] != x.shape[0]:
        raise ShapeError(
            f"segment_pool: {segment_ids.shape[0]} segment ids for {x.shape[0]} rows"
        )
    if mode not in ("mean", "sum"):
        raise ValueError(f"segment_pool: unknown mode {mode!r}")
    counts = np.bincount(segment_ids, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"segment_pool: segment {empty} has no rows (empty graph)")
    out_values = np.zeros((num_segments, x.shape[1]), dtype=np.float64)
    np.add.at(out_values, segment_ids, x.values)
    if mode == "mean":
        out_values = out_values / counts[:, None]
    out = Tensor(out_values)

    def backward_fn(g):
        if mode == "mean":
            return ((g / counts[:, None])[segment_ids],)
        return (g[segment_ids],)

    return _record(out, (x,), backward_fn)


def dropout_mask(x: Tensor, mask: np.ndarray, rate: float) -> Tensor:
    """Apply a precomputed keep mask with inverted scaling (train-time dropout)."""
    x = _as_tensor(x)
    keep_scale = mask / (1.0 - rate)
    out = Tensor(x.values * keep_scale)

    def backward_fn(g):
        return (g * keep_scale,)

    return _record(out, (x,), backward_fn)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of integer labels under row-wise softmax.

    Returns the scalar loss tensor and the (constant) probability matrix.
    Stabilized by max subtraction so logits up to +-1e3 stay finite.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} logit rows")
    if labels.min() < 0 or labels.max() >= c:
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise IndexError(f"label {bad} out of range [0, {c})")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    nll = log_norm - z[np.arange(n), labels]
    probs = np.exp(z - log_norm[:, None])
    loss = Tensor(np.array(nll.mean()))
    _check_finite_forward(loss.values, "softmax_cross_entropy")

    def backward_fn(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (float(g) / n),)

    return _record(loss, (logits,), backward_fn), probs


def tensor_sum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.array(x.values.sum()))

    def backward_fn(g):
        return (np.full_like(x.values, float(g)),)

    return _record(out, (x,), backward_fn)


def tensor_mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.array(x.values.mean()))

    def backward_fn(g):
        return (np.full_like(x.values, float(g) / x.values.size),)

    return _record(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor the scalar ``loss`` depends on.

    The recorded tape is consumed: calling backward twice on the same loss
    raises ``TapeConsumedError``; record a fresh forward pass per step.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise TapeConsumedError("tape already consumed; re-record the forward pass")
    loss._consumed = True

    # Iterative topological order (post-order DFS) over the recorded graph.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._node is not None:
            for parent in node._node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._node is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._node.backward_fn(g)
        for parent, pg in zip(node._node.parents, parent_grads):
            if not parent.requires_grad or pg is None:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        node._node = None  # free the record; tape is single-use


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adam moment buffers and hyperparameters for a named parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.values)
        state.v[name] = np.zeros_like(p.values)
    return state


def adam_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """One bias-corrected Adam update in place; parameters without grads are skipped."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name not in state.m:
            raise KeyError(f"parameter {name!r} missing from optimizer state")
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != p.values.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.values.shape} for {name!r}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild the forward pass from the current parameter values on
    every call. Relative error is |analytic - cd| / (|analytic| + |cd| + 1e-12),
    maximized over every entry of every parameter.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"step size h={h} outside [1e-7, 1e-3]")
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
    zero_grads(params)

    max_rel = 0.0
    for p, g in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = f().item()
            flat[i] = orig - h
            loss_minus = f().item()
            flat[i] = orig
            cd = (loss_plus - loss_minus) / (2.0 * h)
            rel = abs(gflat[i] - cd) / (abs(gflat[i]) + abs(cd) + 1e-12)
            max_rel = max(max_rel, rel)
    return max_rel


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "anchorgnn-params"
_CHECKPOINT_VERSION = 1


def params_to_records(params: dict[str, Tensor]) -> list[dict]:
    return [
        {"name": name, "shape": list(p.values.shape), "values": p.values.reshape(-1).tolist()}
        for name, p in params.items()
    ]


def params_from_records(records: list[dict]) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for rec in records:
        arr = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        params[rec["name"]] = parameter(arr)
    return params


def save_params(params: dict[str, Tensor], path: str, extra: dict | None = None) -> None:
    """Write an ordered (name, shape, values) JSON checkpoint atomically."""
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "params": params_to_records(params),
    }
    if extra:
        payload["extra"] = extra
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def load_params(path: str) -> tuple[dict[str, Tensor], dict]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a parameter checkpoint")
    return params_from_records(payload["params"]), payload.get("extra", {})
