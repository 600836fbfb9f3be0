"""Minimal reverse-mode autodiff over float64 numpy arrays.

Everything the model trains on goes through the Tensor class below. The op
set is deliberately small: exactly what a GRU encoder/decoder with additive
attention and a gated memory fusion needs. All arithmetic is float64;
gradient checks at 1e-4 are not feasible in float32.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A float64 ndarray plus the tape hooks needed for backward().

    Leaf tensors (parameters) carry requires_grad; intermediate tensors
    inherit it from their parents. With the tape disabled (see no_grad) ops
    return plain constant tensors.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph ----------------------------------------------------------

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() requires a scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(a: np.ndarray, what: str):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")


# -- primitive ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data
    rg = a.requires_grad or b.requires_grad
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, True, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data
    rg = a.requires_grad or b.requires_grad
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, True, (a, b), backward)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """a @ b for (m,n)@(n,) or (m,n)@(n,k)."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data
    rg = a.requires_grad or b.requires_grad
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        if b.data.ndim == 1:
            if a.requires_grad:
                a._accum(np.outer(g, b.data))
            if b.requires_grad:
                b._accum(a.data.T @ g)
        else:
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)

    return Tensor(out_data, True, (a, b), backward)


def matmul_t(a, x) -> Tensor:
    """a.T @ x without materializing the transpose on the tape."""
    a, x = as_tensor(a), as_tensor(x)
    out_data = a.data.T @ x.data
    rg = a.requires_grad or x.requires_grad
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        if a.requires_grad:
            a._accum(np.outer(x.data, g))
        if x.requires_grad:
            x._accum(a.data @ g)

    return Tensor(out_data, True, (a, x), backward)


def add_col(mat, vec) -> Tensor:
    """mat + vec[:, None]: broadcast a column over all columns of mat."""
    mat, vec = as_tensor(mat), as_tensor(vec)
    out_data = mat.data + vec.data[:, None]
    rg = mat.requires_grad or vec.requires_grad
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        if mat.requires_grad:
            mat._accum(g)
        if vec.requires_grad:
            vec._accum(g.sum(axis=1))

    return Tensor(out_data, True, (mat, vec), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = _sigmoid_np(a.data)
    if not (a.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        a._accum(g * out_data * (1.0 - out_data))

    return Tensor(out_data, True, (a,), backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # numerically stable two-sided form
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    if not (a.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        a._accum(g * (1.0 - out_data * out_data))

    return Tensor(out_data, True, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    if not (a.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        a._accum(g / a.data)

    return Tensor(out_data, True, (a,), backward)


def tsum(a) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum()
    if not (a.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        a._accum(np.full(a.data.shape, g, dtype=np.float64))

    return Tensor(out_data, True, (a,), backward)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data
    rg = a.requires_grad or b.requires_grad
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return Tensor(out_data, True, (a, b), backward)


def concat(parts: Iterable) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts])
    rg = any(p.requires_grad for p in parts)
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p._accum(g[off:off + n])
            off += n

    return Tensor(out_data, True, tuple(parts), backward)


def stack_rows(rows: Iterable) -> Tensor:
    rows = [as_tensor(r) for r in rows]
    out_data = np.stack([r.data for r in rows])
    rg = any(r.requires_grad for r in rows)
    if not (rg and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r._accum(g[i])

    return Tensor(out_data, True, tuple(rows), backward)


def row(mat, idx: int) -> Tensor:
    """Pick one row of a matrix (embedding lookup); grad scatters back."""
    mat = as_tensor(mat)
    out_data = mat.data[idx]
    if not (mat.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        full = np.zeros_like(mat.data)
        full[idx] = g
        mat._accum(full)

    return Tensor(out_data, True, (mat,), backward)


def pick(vec, idx: int) -> Tensor:
    vec = as_tensor(vec)
    out_data = vec.data[idx]
    if not (vec.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        full = np.zeros_like(vec.data)
        full[idx] = g
        vec._accum(full)

    return Tensor(out_data, True, (vec,), backward)


def softmax_stable(logits) -> np.ndarray:
    """Max-subtracted softmax over a non-empty 1-D float array."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax_stable expects a non-empty 1-D vector")
    _finite(x, "softmax input")
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def softmax(a) -> Tensor:
    a = as_tensor(a)
    out_data = softmax_stable(a.data)
    if not (a.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)

    def backward(g):
        a._accum(out_data * (g - np.dot(g, out_data)))

    return Tensor(out_data, True, (a,), backward)


def nll_from_logits(logits, target: int) -> Tensor:
    """-log softmax(logits)[target], fused for stability."""
    logits = as_tensor(logits)
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    out_data = lse - z[target]
    if not (logits.requires_grad and _GRAD_ENABLED):
        return Tensor(out_data)
    probs = np.exp(z - lse)

    def backward(g):
        gl = probs * g
        gl[target] -= g
        logits._accum(gl)

    return Tensor(out_data, True, (logits,), backward)


# -- parameters -----------------------------------------------------------


class ParameterStore:
    """Named map of leaf tensors with per-parameter trainable flags."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=trainable)
        t.requires_grad = trainable  # leaves keep their flag even under no_grad
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool):
        self._trainable[name] = flag
        self._params[name].requires_grad = flag

    def freeze_all(self):
        for name in self._params:
            self.set_trainable(name, False)

    def trainable_items(self):
        return [(n, t) for n, t in self._params.items() if self._trainable[n]]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_scalars(self, trainable_only: bool = False) -> int:
        return sum(t.data.size for n, t in self._params.items()
                   if not trainable_only or self._trainable[n])

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_snapshot(self, snap: dict[str, np.ndarray]):
        for n, arr in snap.items():
            self._params[n].data = np.array(arr, dtype=np.float64)


def clip_gradients(store: ParameterStore, max_norm: float) -> float:
    """Scale trainable grads so their global L2 norm is at most max_norm."""
    sq = 0.0
    for _, t in store.trainable_items():
        if t.grad is not None:
            sq += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(sq))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, t in store.trainable_items():
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


def sgd_step(store: ParameterStore, lr: float):
    for _, t in store.trainable_items():
        if t.grad is not None:
            t.data = t.data - lr * t.grad


class AdadeltaState:
    """Adadelta accumulators (Zeiler-style), kept per store instance."""

    def __init__(self, rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.acc_g: dict[str, np.ndarray] = {}
        self.acc_dx: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore):
        for name, t in store.trainable_items():
            if t.grad is None:
                continue
            g = t.grad
            ag = self.acc_g.setdefault(name, np.zeros_like(t.data))
            adx = self.acc_dx.setdefault(name, np.zeros_like(t.data))
            ag[:] = self.rho * ag + (1 - self.rho) * g * g
            dx = -np.sqrt(adx + self.eps) / np.sqrt(ag + self.eps) * g
            adx[:] = self.rho * adx + (1 - self.rho) * dx * dx
            t.data = t.data + dx


# -- gradient checking ------------------------------------------------------


class GradCheckReport:
    def __init__(self):
        self.per_param: dict[str, float] = {}
        self.tol: float = 0.0

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.per_param.values())

    def max_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    def __repr__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"GradCheckReport({status}, max_rel_err={self.max_error():.3e})"


def gradient_check(loss_fn: Callable[[ParameterStore], Tensor],
                   store: ParameterStore,
                   eps: float = 1e-5,
                   tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    loss_fn must be deterministic; it is evaluated twice up-front and the
    two values must agree bit-exactly. Only trainable entries are checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with no_grad():
        v1 = loss_fn(store).item()
        v2 = loss_fn(store).item()
    if v1 != v2:
        raise RuntimeError("loss_fn is not deterministic (two evaluations differ)")

    store.zero_grad()
    loss = loss_fn(store)
    loss.backward()
    analytic = {n: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for n, t in store.trainable_items()}

    report = GradCheckReport()
    report.tol = tol
    for name, t in store.trainable_items():
        g_a = analytic[name]
        flat = t.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = loss_fn(store).item()
            flat[i] = orig - eps
            with no_grad():
                f_minus = loss_fn(store).item()
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            ga = g_a.reshape(-1)[i]
            rel = abs(ga - g_fd) / max(abs(ga), abs(g_fd), 1e-8)
            worst = max(worst, rel)
        report.per_param[name] = worst
    return report
