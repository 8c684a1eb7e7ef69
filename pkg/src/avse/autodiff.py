"""Dense float64 tensors with tape-based reverse-mode differentiation.

Training code opens a Tape as a context manager, runs forward ops, then calls
backward(tape, loss). Ops called while no tape is active are plain numpy
forwards, which is what inference uses. All math is float64; persistence casts
to float32 at the file boundary, never here.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "add",
    "scale",
    "transpose",
    "embedding_rows",
    "take_row",
    "mean_rows",
    "slice_cols",
    "concat_cols",
    "concat_rows",
    "softmax_rows",
    "layer_norm_rows",
    "gelu",
    "dropout",
    "normalize_rows",
    "cross_entropy",
]


class Tensor:
    """A float64 ndarray plus the bookkeeping backward() needs."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.shape}, requires_grad={self.requires_grad})"


# Stack of live tapes. Ops record onto the innermost one only; nesting is
# allowed but nothing in this package uses more than one level.
_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of forward ops, inputs always before outputs."""

    def __init__(self):
        self._nodes: list[tuple[int, tuple[Tensor, ...], object]] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPES.pop()
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn) -> None:
        self._nodes.append((id(out), inputs, grad_fn))
        self._produced.add(id(out))

    def clear(self) -> None:
        self._nodes.clear()
        self._produced.clear()


def _finish(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    """Wrap an op result, check it is finite, and record it if a tape is live."""
    if not np.all(np.isfinite(out_data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs and _TAPES:
        _TAPES[-1]._record(out, inputs, grad_fn)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over the tape from a scalar loss.

    Populates .grad on every requires_grad leaf reachable from the loss and
    returns those leaves mapped to their gradients. The tape is cleared
    afterwards and cannot be replayed.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise ValueError("loss was not produced by an op recorded on this tape")

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaf_grads: dict[Tensor, np.ndarray] = {}
    for out_id, inputs, grad_fn in reversed(tape._nodes):
        g_out = flowing.pop(out_id, None)
        if g_out is None:
            continue
        for tensor, g in zip(inputs, grad_fn(g_out)):
            if g is None:
                continue
            tid = id(tensor)
            if tid in tape._produced:
                if tid in flowing:
                    flowing[tid] += g
                else:
                    flowing[tid] = g
            elif tensor.requires_grad:
                if tensor in leaf_grads:
                    leaf_grads[tensor] += g
                else:
                    leaf_grads[tensor] = g
    for tensor, g in leaf_grads.items():
        tensor.grad = g
    tape.clear()
    return leaf_grads


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def grad_fn(g):
        return (g @ b.data.T, a.data.T @ g)

    return _finish("matmul", a.data @ b.data, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may also be a 1-D row bias broadcast over a's rows."""
    if a.shape == b.shape:
        def grad_fn(g):
            return (g, g)
    elif b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        def grad_fn(g):
            return (g, g.sum(axis=0))
    else:
        raise ValueError(f"add shapes incompatible: {a.shape} + {b.shape}")
    return _finish("add", a.data + b.data, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def grad_fn(g):
        return (g * c,)

    return _finish("scale", a.data * c, (a,), grad_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose needs a 2-D tensor, got {a.shape}")

    def grad_fn(g):
        return (g.T,)

    return _finish("transpose", a.data.T.copy(), (a,), grad_fn)


def embedding_rows(table: Tensor, ids) -> Tensor:
    """Gather rows table[ids]; gradient scatter-adds back into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("ids must be a flat sequence")
    if idx.size == 0:
        raise ValueError("cannot gather zero rows")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ValueError(f"row id out of range for table with {table.shape[0]} rows")

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _finish("embedding_rows", table.data[idx], (table,), grad_fn)


def take_row(a: Tensor, i: int) -> Tensor:
    """Row i as a (1, d) tensor."""
    if not 0 <= i < a.shape[0]:
        raise ValueError(f"row {i} out of range for shape {a.shape}")

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[i] = g[0]
        return (ga,)

    return _finish("take_row", a.data[i : i + 1].copy(), (a,), grad_fn)


def mean_rows(a: Tensor) -> Tensor:
    """Column means as a (1, d) tensor."""
    t = a.shape[0]

    def grad_fn(g):
        return (np.repeat(g / t, t, axis=0),)

    return _finish("mean_rows", a.data.mean(axis=0, keepdims=True), (a,), grad_fn)


def slice_cols(a: Tensor, j0: int, j1: int) -> Tensor:
    if not 0 <= j0 < j1 <= a.shape[1]:
        raise ValueError(f"bad column slice [{j0}:{j1}] for shape {a.shape}")

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[:, j0:j1] = g
        return (ga,)

    return _finish("slice_cols", a.data[:, j0:j1].copy(), (a,), grad_fn)


def concat_cols(parts: list[Tensor]) -> Tensor:
    widths = [p.shape[1] for p in parts]

    def grad_fn(g):
        grads, j = [], 0
        for w in widths:
            grads.append(g[:, j : j + w])
            j += w
        return tuple(grads)

    return _finish("concat_cols", np.concatenate([p.data for p in parts], axis=1), tuple(parts), grad_fn)


def concat_rows(parts: list[Tensor]) -> Tensor:
    heights = [p.shape[0] for p in parts]

    def grad_fn(g):
        grads, i = [], 0
        for h in heights:
            grads.append(g[i : i + h])
            i += h
        return tuple(grads)

    return _finish("concat_rows", np.concatenate([p.data for p in parts], axis=0), tuple(parts), grad_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction, so large logits stay finite."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _finish("softmax_rows", y, (x,), grad_fn)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization followed by learned gain and bias."""
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def grad_fn(g):
        ggain = (g * xhat).sum(axis=0)
        gbias = g.sum(axis=0)
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=1, keepdims=True) - xhat * (gy * xhat).mean(axis=1, keepdims=True))
        return (gx, ggain, gbias)

    return _finish("layer_norm_rows", out, (x, gain, bias), grad_fn)


# tanh-approximation constants shared by forward and gradient
_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    u = _GELU_C * (x.data + _GELU_A * x.data**3)
    th = np.tanh(u)
    y = 0.5 * x.data * (1.0 + th)

    def grad_fn(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x.data**2)
        dy = 0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th**2) * du
        return (g * dy,)

    return _finish("gelu", y, (x,), grad_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only on the training path."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def grad_fn(g):
        return (g * keep,)

    return _finish("dropout", x.data * keep, (x,), grad_fn)


def normalize_rows(x: Tensor) -> Tensor:
    """Scale each row to unit L2 norm; zero rows are an error."""
    norms = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise ValueError("cannot L2-normalize a zero row")
    y = x.data / norms

    def grad_fn(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * dot) / norms,)

    return _finish("normalize_rows", y, (x,), grad_fn)


def cross_entropy(logits: Tensor, targets, ignore_id: int = -1) -> Tensor:
    """Mean negative log-likelihood over positions whose target != ignore_id.

    Computed via max-shifted log-sum-exp, so the result is never negative and
    stays finite for logits up to float range. Raises if every position is
    ignored.
    """
    tgt = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or tgt.ndim != 1 or tgt.shape[0] != logits.shape[0]:
        raise ValueError(f"cross_entropy shapes mismatch: logits {logits.shape}, targets {tgt.shape}")
    keep = tgt != ignore_id
    m = int(keep.sum())
    if m == 0:
        raise ValueError("cross_entropy: every position is ignored")
    if tgt[keep].min() < 0 or tgt[keep].max() >= logits.shape[1]:
        raise ValueError("cross_entropy: target id out of range")

    mx = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - mx)
    lse = np.log(e.sum(axis=1)) + mx[:, 0]
    rows = np.arange(logits.shape[0])
    nll = lse - logits.data[rows, tgt.clip(min=0)]
    loss = nll[keep].sum() / m

    def grad_fn(g):
        p = e / e.sum(axis=1, keepdims=True)
        p[rows[keep], tgt[keep]] -= 1.0
        p[~keep] = 0.0
        return (p * (float(g) / m),)

    return _finish("cross_entropy", np.asarray(loss), (logits,), grad_fn)
