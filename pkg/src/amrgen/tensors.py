"""Dense float64 tensors with reverse-mode gradients, Adam, and checkpoints.

A Tensor wraps a numpy array and remembers how it was produced; backward()
walks the recorded graph in reverse topological order and accumulates
gradients into every tensor that requires them. Everything is float64 so
central-difference checks are tight.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.shape != ():
            raise ShapeMismatch("backward() starts from a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self._accumulate(np.ones(()))
        for node in reversed(topo):
            if node.backward_fn is not None:
                node.backward_fn(node.grad)
            if node.parents:  # free intermediate grads, keep leaf grads
                node.grad = None


def constant(data) -> Tensor:
    return Tensor(data)


def _unary(x: Tensor, value, dvalue) -> Tensor:
    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(g * dvalue)

    return Tensor(value, parents=(x,), backward_fn=backward_fn)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _unary(x, y, 1.0 - y * y)


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _unary(x, y, y * (1.0 - y))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return Tensor(a.data + b.data, parents=(a, b), backward_fn=backward_fn)


def add_rows(mat: Tensor, vec: Tensor) -> Tensor:
    """Broadcast-add a vector over the rows of a matrix."""
    if mat.data.ndim != 2 or vec.data.ndim != 1 or mat.data.shape[1] != vec.data.shape[0]:
        raise ShapeMismatch(f"add_rows: {mat.data.shape} vs {vec.data.shape}")

    def backward_fn(g):
        if mat.requires_grad:
            mat._accumulate(g)
        if vec.requires_grad:
            vec._accumulate(g.sum(axis=0))

    return Tensor(mat.data + vec.data, parents=(mat, vec), backward_fn=backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul: {a.data.shape} vs {b.data.shape}")

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor(a.data * b.data, parents=(a, b), backward_fn=backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(g * c)

    return Tensor(x.data * c, parents=(x,), backward_fn=backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(n,m)@(m,p), (n,m)@(m,), (m,)@(m,p), or the (m,)@(m,) dot product."""
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul: bad ranks {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")

    def backward_fn(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                a._accumulate(np.outer(g, b.data) if a.data.ndim == 2 else g * b.data)
            else:
                a._accumulate(np.atleast_2d(g) @ b.data.T if a.data.ndim == 2 else (g @ b.data.T))
        if b.requires_grad:
            if a.data.ndim == 1:
                b._accumulate(np.outer(a.data, g) if b.data.ndim == 2 else g * a.data)
            else:
                b._accumulate(a.data.T @ np.atleast_2d(g) if b.data.ndim == 2 else a.data.T @ g)

    return Tensor(a.data @ b.data, parents=(a, b), backward_fn=backward_fn)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeMismatch("concat expects 1-D tensors")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for p, lo, hi in zip(parts, offsets, offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return Tensor(np.concatenate([p.data for p in parts]), parents=tuple(parts), backward_fn=backward_fn)


def hconcat(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along columns."""
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeMismatch("hconcat expects 2-D tensors with equal row counts")
    sizes = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for p, lo, hi in zip(parts, offsets, offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return Tensor(np.hstack([p.data for p in parts]), parents=tuple(parts), backward_fn=backward_fn)


def vstack(rows: list[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix."""
    width = rows[0].data.shape[0]
    for r in rows:
        if r.data.ndim != 1 or r.data.shape[0] != width:
            raise ShapeMismatch("vstack expects equal-length 1-D tensors")

    def backward_fn(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r._accumulate(g[i])

    return Tensor(np.stack([r.data for r in rows]), parents=tuple(rows), backward_fn=backward_fn)


def row(mat: Tensor, i: int) -> Tensor:
    if mat.data.ndim != 2:
        raise ShapeMismatch("row expects a matrix")
    if not 0 <= i < mat.data.shape[0]:
        raise IndexOutOfRange(f"row {i} of {mat.data.shape[0]}")

    def backward_fn(g):
        if mat.requires_grad:
            if mat.grad is None:
                mat.grad = np.zeros_like(mat.data)
            mat.grad[i] += g

    return Tensor(mat.data[i], parents=(mat,), backward_fn=backward_fn)


def take_rows(mat: Tensor, idx: list[int]) -> Tensor:
    if mat.data.ndim != 2:
        raise ShapeMismatch("take_rows expects a matrix")
    for i in idx:
        if not 0 <= i < mat.data.shape[0]:
            raise IndexOutOfRange(f"row {i} of {mat.data.shape[0]}")
    idx_arr = np.asarray(idx, dtype=np.intp)

    def backward_fn(g):
        if mat.requires_grad:
            if mat.grad is None:
                mat.grad = np.zeros_like(mat.data)
            np.add.at(mat.grad, idx_arr, g)

    return Tensor(mat.data[idx_arr], parents=(mat,), backward_fn=backward_fn)


def slice1d(x: Tensor, lo: int, hi: int) -> Tensor:
    if x.data.ndim != 1:
        raise ShapeMismatch("slice1d expects a vector")

    def backward_fn(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[lo:hi] += g

    return Tensor(x.data[lo:hi], parents=(x,), backward_fn=backward_fn)


def sum_tensors(parts: list[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    shape = parts[0].data.shape
    for p in parts:
        if p.data.shape != shape:
            raise ShapeMismatch("sum_tensors expects equal shapes")

    def backward_fn(g):
        for p in parts:
            if p.requires_grad:
                p._accumulate(g)

    total = parts[0].data.copy()
    for p in parts[1:]:
        total += p.data
    return Tensor(total, parents=tuple(parts), backward_fn=backward_fn)


def affine(W: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """W @ x + b for a 1-D input."""
    return add(matmul(W, x), b)


def softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Probability vector; masked-out entries get exactly zero probability."""
    z = logits.data.copy()
    if mask is not None:
        z[~mask] = -np.inf
    z -= z.max()
    e = np.exp(z)
    p = e / e.sum()

    def backward_fn(g):
        if logits.requires_grad:
            logits._accumulate(p * (g - float(g @ p)))

    return Tensor(p, parents=(logits,), backward_fn=backward_fn)


def softmax_xent(logits, target: int, mask: np.ndarray | None = None):
    """Cross-entropy of a softmax over (optionally masked) logits.

    Accepts a raw numpy vector and returns (loss, gradient), or a Tensor and
    returns a scalar loss Tensor wired into the graph. The gradient is the
    usual probabilities-minus-onehot, zero at masked entries.
    """
    raw = isinstance(logits, np.ndarray)
    z = (logits if raw else logits.data).astype(np.float64).copy()
    n = z.shape[0]
    if not 0 <= target < n:
        raise IndexOutOfRange(f"target {target} of {n}")
    if mask is not None:
        if mask.shape != z.shape:
            raise ShapeMismatch("mask shape must match logits")
        if not mask[target]:
            raise ValueError("target is masked out")
        z[~mask] = -np.inf
    m = z.max()
    e = np.exp(z - m)
    total = e.sum()
    p = e / total
    loss = float(np.log(total) + m - z[target])
    grad = p.copy()
    grad[target] -= 1.0
    if raw:
        return loss, grad

    def backward_fn(g):
        if logits.requires_grad:
            logits._accumulate(g * grad)

    return Tensor(loss, parents=(logits,), backward_fn=backward_fn)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    W: Tensor  # (4H, in + H), gate order i, f, o, g
    b: Tensor  # (4H,)


def lstm_step(state: tuple[Tensor, Tensor], x: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One step; state is the (cell, hidden) pair. Zero params and zero input
    map the zero state to itself."""
    cell, hidden = state
    h = hidden.data.shape[0]
    z = affine(params.W, concat([x, hidden]), params.b)
    i = sigmoid(slice1d(z, 0, h))
    f = sigmoid(slice1d(z, h, 2 * h))
    o = sigmoid(slice1d(z, 2 * h, 3 * h))
    g = tanh(slice1d(z, 3 * h, 4 * h))
    new_cell = add(mul(f, cell), mul(i, g))
    new_hidden = mul(o, tanh(new_cell))
    return new_cell, new_hidden


def bilinear_scores(M: Tensor, U: Tensor, s: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(M @ U @ s): one probability per row of M."""
    return softmax(matmul(M, matmul(U, s)), mask)


# ---------------------------------------------------------------------------
# Parameter store and Adam


@dataclass
class ParamEntry:
    tensor: Tensor
    frozen: bool
    m: np.ndarray
    v: np.ndarray
    frozen_rows: tuple[int, ...] = ()  # rows Adam must never touch


@dataclass
class ParamStore:
    entries: dict[str, ParamEntry] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, shape: tuple[int, ...], rng: np.random.Generator | None = None,
            value: np.ndarray | None = None, frozen: bool = False,
            frozen_rows: tuple[int, ...] = (), init_scale: float = 0.08) -> Tensor:
        if name in self.entries:
            raise ValueError(f"duplicate parameter {name!r}")
        if value is not None:
            data = np.asarray(value, dtype=np.float64).reshape(shape)
        elif rng is not None:
            data = rng.uniform(-init_scale, init_scale, size=shape)
        else:
            data = np.zeros(shape)
        t = Tensor(data, requires_grad=True)
        self.entries[name] = ParamEntry(tensor=t, frozen=frozen, m=np.zeros(shape), v=np.zeros(shape),
                                        frozen_rows=tuple(frozen_rows))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name].tensor

    def names(self) -> list[str]:
        return list(self.entries)

    def zero_grads(self) -> None:
        for entry in self.entries.values():
            entry.tensor.grad = None


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update from accumulated grads; frozen entries never move.
    Gradients are zeroed afterwards."""
    store.step += 1
    t = store.step
    for entry in store.entries.values():
        if entry.frozen:
            continue
        g = entry.tensor.grad
        if g is None:
            g = np.zeros_like(entry.tensor.data)
        if entry.frozen_rows:
            g = g.copy()
            g[list(entry.frozen_rows)] = 0.0
        entry.m = beta1 * entry.m + (1.0 - beta1) * g
        entry.v = beta2 * entry.v + (1.0 - beta2) * g * g
        m_hat = entry.m / (1.0 - beta1**t)
        v_hat = entry.v / (1.0 - beta2**t)
        entry.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grads()


def grad_check(loss_fn, store: ParamStore, h: float = 1e-5,
               max_per_tensor: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backward() grads and central differences.

    loss_fn runs a fresh forward pass off the store and returns a scalar
    Tensor. Optionally checks a random subset of entries per tensor.
    """
    store.zero_grads()
    loss_fn().backward()
    analytic = {name: (e.tensor.grad.copy() if e.tensor.grad is not None else np.zeros_like(e.tensor.data))
                for name, e in store.entries.items()}
    store.zero_grads()
    worst = 0.0
    for name, entry in store.entries.items():
        flat = entry.tensor.data.reshape(-1)
        indices = range(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            picker = rng or np.random.default_rng(0)
            indices = sorted(picker.choice(flat.size, size=max_per_tensor, replace=False).tolist())
        ana = analytic[name].reshape(-1)
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn().item()
            flat[idx] = orig - h
            down = loss_fn().item()
            flat[idx] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(fd - ana[idx]) / max(abs(fd) + abs(ana[idx]), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Named-tensor binary serialization (little-endian float64)

_MAGIC = b"AMRGTSR1"


def write_tensor_blob(fh, named: dict[str, np.ndarray]) -> None:
    fh.write(_MAGIC)
    fh.write(struct.pack("<I", len(named)))
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name], dtype="<f8")
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor_blob(fh) -> dict[str, np.ndarray]:
    if fh.read(8) != _MAGIC:
        raise ValueError("not a tensor blob")
    (count,) = struct.unpack("<I", fh.read(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
        out[name] = data.astype(np.float64)
    return out


def write_tensors(path: str, named: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        write_tensor_blob(fh, named)


def read_tensors(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        try:
            return read_tensor_blob(fh)
        except ValueError:
            raise ValueError(f"{path}: not a checkpoint file") from None
