"""Dense float64 matrices with a dynamic reverse-mode tape.

Operations record a :class:`Node` on the active :class:`Tape` whenever one of
their inputs requires a gradient.  ``Tape.backward`` walks the recorded nodes
in strict reverse append order, so every node is visited exactly once.

Index vectors (``index_select``, ``scatter_reduce``, grouped softmax) are plain
integer numpy arrays and never carry gradients.
"""

from __future__ import annotations

import contextvars
import json
import math
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError

Key = tuple  # (name: str, template_args: tuple)

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "label")

    def __init__(self, data, requires_grad: bool = False, label: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.label = label

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def const(data) -> Tensor:
    return Tensor(data)


def zeros(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)))


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Propagate d(loss)/d(.) to every leaf reachable on this tape.

        Leaf ``.grad`` fields touched by this tape are overwritten with the
        gradient of this pass; uses of the same leaf accumulate.  Returns a map
        from ``id(leaf)`` to its gradient.
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be 1x1, got {loss.shape}")
        leaf_grads: dict[int, np.ndarray] = {}
        leaves: dict[int, Tensor] = {}
        pending: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                bucket = leaf_grads if inp.is_leaf else pending
                key = id(inp)
                bucket[key] = bucket[key] + gi if key in bucket else gi
                if inp.is_leaf:
                    leaves[key] = inp
        if loss.is_leaf and loss.requires_grad:
            leaf_grads[id(loss)] = np.ones((1, 1))
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            leaf.grad = leaf_grads[key]
        return leaf_grads


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def _record(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward) -> Tensor:
    result = Tensor.__new__(Tensor)
    result.data = out
    result.grad = None
    result.label = None
    tape = _ACTIVE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.is_leaf = False
        tape.nodes.append(Node(op, inputs, result, backward))
    else:
        result.requires_grad = False
        result.is_leaf = True
    return result


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------------
# forward ops
# ----------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _record("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _record("mul", (a, b), A * B, lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (a,), a.data * c, lambda g: (g * c,))


def concat_cols(*parts: Tensor) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one input")
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record("concat_cols", tuple(parts), np.concatenate([p.data for p in parts], axis=1), backward)


def concat_rows(*parts: Tensor) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows needs at least one input")
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(parts)))

    return _record("concat_rows", tuple(parts), np.concatenate([p.data for p in parts], axis=0), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}, {stop}) out of range for width {a.shape[1]}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _record("slice_cols", (a,), a.data[:, start:stop].copy(), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    return _record("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _record("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return _record("gelu", (a,), x * cdf, lambda g: (g * (cdf + x * pdf),))


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log-softmax over columns."""
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True) if x.shape[1] else x
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    sm = np.exp(out)
    return _record("log_softmax_rows", (a,), out, lambda g: (g - sm * g.sum(axis=1, keepdims=True),))


def _as_index(idx, bound: int, what: str) -> np.ndarray:
    arr = np.asarray(idx, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= bound):
        raise IndexError(f"{what}: index out of range [0, {bound})")
    return arr


def index_select(a: Tensor, idx) -> Tensor:
    """Gather rows ``a[idx]``; repeated indices accumulate in backward."""
    rows, cols = a.shape
    ix = _as_index(idx, rows, "index_select")

    def backward(g):
        full = np.zeros((rows, cols))
        np.add.at(full, ix, g)
        return (full,)

    return _record("index_select", (a,), a.data[ix], backward)


def _group_counts(gidx: np.ndarray, n_groups: int) -> np.ndarray:
    return np.bincount(gidx, minlength=n_groups).astype(np.float64)


def scatter_reduce(a: Tensor, group_idx, n_groups: int, kind: str) -> Tensor:
    """Reduce the rows of ``a`` into ``n_groups`` buckets.

    Empty groups produce zero rows.  For ``max`` ties go to the lowest input
    row, which alone receives the gradient.
    """
    rows, cols = a.shape
    g_idx = _as_index(group_idx, n_groups, "scatter_reduce")
    if g_idx.size != rows:
        raise ShapeError(f"scatter_reduce: {g_idx.size} group ids for {rows} rows")
    x = a.data
    if kind == "sum":
        out = np.zeros((n_groups, cols))
        np.add.at(out, g_idx, x)
        return _record("scatter_sum", (a,), out, lambda g: (g[g_idx],))
    if kind == "mean":
        counts = _group_counts(g_idx, n_groups)
        safe = np.where(counts > 0, counts, 1.0)[:, None]
        out = np.zeros((n_groups, cols))
        np.add.at(out, g_idx, x)
        out /= safe
        return _record("scatter_mean", (a,), out, lambda g: ((g / safe)[g_idx],))
    if kind == "max":
        out = np.full((n_groups, cols), -np.inf)
        np.maximum.at(out, g_idx, x)
        arg = np.full((n_groups, cols), -1, dtype=np.int64)
        hits = x == out[g_idx]
        for r in range(rows - 1, -1, -1):
            arg[g_idx[r], hits[r]] = r
        out[arg < 0] = 0.0

        def backward(g):
            full = np.zeros((rows, cols))
            gi, ci = np.nonzero(arg >= 0)
            full[arg[gi, ci], ci] += g[gi, ci]
            return (full,)

        return _record("scatter_max", (a,), out, backward)
    raise ValueError(f"unknown reduction {kind!r}")


def softmax_rows_grouped(a: Tensor, group_idx, n_groups: int) -> Tensor:
    """Softmax across the rows of each group, independently per column."""
    rows, cols = a.shape
    g_idx = _as_index(group_idx, n_groups, "softmax_rows_grouped")
    if g_idx.size != rows:
        raise ShapeError(f"softmax_rows_grouped: {g_idx.size} group ids for {rows} rows")
    x = a.data
    peak = np.full((n_groups, cols), -np.inf)
    np.maximum.at(peak, g_idx, x)
    e = np.exp(x - peak[g_idx]) if rows else x.copy()
    denom = np.zeros((n_groups, cols))
    np.add.at(denom, g_idx, e)
    y = e / denom[g_idx] if rows else e

    def backward(g):
        dot = np.zeros((n_groups, cols))
        np.add.at(dot, g_idx, g * y)
        return (y * (g - dot[g_idx]),)

    return _record("softmax_rows_grouped", (a,), y, backward)


def cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Row-averaged ``-sum(target * log_softmax(logits))`` as a 1x1 tensor."""
    _same_shape("cross_entropy", logits, targets)
    n = logits.shape[0]
    if n == 0:
        raise ShapeError("cross_entropy of zero rows")
    x, t = logits.data, targets.data
    shifted = x - x.max(axis=1, keepdims=True)
    logsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    sm = np.exp(logsm)
    loss = -(t * logsm).sum() / n

    def backward(g):
        s = g[0, 0] / n
        return ((sm * t.sum(axis=1, keepdims=True) - t) * s, -logsm * s)

    return _record("cross_entropy", (logits, targets), np.array([[loss]]), backward)


def reduce(a: Tensor, kind: str) -> Tensor:
    rows, cols = a.shape
    if kind == "sum":
        return _record("reduce_sum", (a,), np.array([[a.data.sum()]]),
                       lambda g: (np.full((rows, cols), g[0, 0]),))
    if kind == "mean":
        n = rows * cols
        if n == 0:
            raise ShapeError("mean of an empty tensor")
        return _record("reduce_mean", (a,), np.array([[a.data.mean()]]),
                       lambda g: (np.full((rows, cols), g[0, 0] / n),))
    raise ValueError(f"unknown reduction {kind!r}")


# ----------------------------------------------------------------------------
# parameters and optimisation
# ----------------------------------------------------------------------------


def _key_seed(seed: int, key: Key) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(repr(key).encode("utf-8"))])


def make_key(name: str, args: Iterable = ()) -> Key:
    return (str(name), tuple(args))


class ParameterStore:
    """Named leaf tensors (the assignment of values to parameters).

    Keys are ``(name, template_args)`` pairs; registering an existing key
    returns the tensor already stored under it, which is how sharing works.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[Key, Tensor] = {}
        self.opt_state: dict[Key, dict] = {}

    def __contains__(self, key: Key) -> bool:
        return key in self._params

    def __getitem__(self, key: Key) -> Tensor:
        return self._params[key]

    def __len__(self) -> int:
        return len(self._params)

    def keys(self) -> list[Key]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def rng(self, key: Key) -> np.random.Generator:
        return _key_seed(self.seed, key)

    def register(self, key: Key, value) -> Tensor:
        if key in self._params:
            raise KeyError(f"parameter {key!r} already registered")
        t = Tensor(value, requires_grad=True, label=f"{key[0]}{list(key[1]) if key[1] else ''}")
        self._params[key] = t
        return t

    def get_or_create(self, key: Key, shape: tuple[int, int], init: str) -> Tensor:
        existing = self._params.get(key)
        if existing is not None:
            if existing.shape != tuple(shape):
                raise ShapeError(f"parameter {key!r} reused with shape {shape}, stored {existing.shape}")
            return existing
        return self.register(key, initial_value(shape, init, self.rng(key)))

    def set_value(self, key: Key, value) -> None:
        t = self._params[key]
        arr = np.array(value, dtype=np.float64).reshape(t.shape)
        t.data = arr

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self, keys: Iterable[Key] | None = None) -> dict[Key, np.ndarray]:
        """Gradient report; untouched parameters report zeros."""
        chosen = self._params if keys is None else {k: self._params[k] for k in keys}
        return {k: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for k, t in chosen.items()}

    def snapshot(self) -> dict[Key, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def save(self, path) -> None:
        entries = [
            {"name": k[0], "args": list(k[1]), "shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for k, t in self._params.items()
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"seed": self.seed, "parameters": entries}, fh)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        store = cls(seed=doc.get("seed", 0))
        for e in doc["parameters"]:
            key = make_key(e["name"], e["args"])
            store.register(key, np.array(e["values"], dtype=np.float64).reshape(e["shape"]))
        return store


def initial_value(shape: tuple[int, int], init: str, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    if init == "embedding":
        return rng.normal(0.0, math.sqrt(1.0 / cols), size=shape) if cols else np.zeros(shape)
    if init == "linear":
        fan_in = max(rows - 1, 1)  # last row is the bias
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)
    if init == "parameter":
        if rows * cols == 1:
            return np.ones(shape)
        return rng.normal(0.0, math.sqrt(1.0 / max(rows, 1)), size=shape)
    raise ValueError(f"unknown initialiser {init!r}")


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(store: ParameterStore, grads: dict[Key, np.ndarray], lr: float,
                   weight_decay: float = 0.0, kind: str = "adam") -> None:
    """One in-place update of the parameters named in ``grads``.

    Weight decay enters as an additive ``weight_decay * theta`` gradient term
    for both optimisers.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if kind not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {kind!r}")
    for key, g in grads.items():
        if key not in store:
            raise KeyError(f"gradient for unknown parameter {key!r}")
        param = store[key]
        g = np.asarray(g, dtype=np.float64) + weight_decay * param.data
        if kind == "sgd":
            param.data = param.data - lr * g
            continue
        state = store.opt_state.setdefault(key, {"m": np.zeros(param.shape), "v": np.zeros(param.shape), "t": 0})
        state["t"] += 1
        state["m"] = ADAM_BETA1 * state["m"] + (1 - ADAM_BETA1) * g
        state["v"] = ADAM_BETA2 * state["v"] + (1 - ADAM_BETA2) * g * g
        m_hat = state["m"] / (1 - ADAM_BETA1 ** state["t"])
        v_hat = state["v"] / (1 - ADAM_BETA2 ** state["t"])
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
