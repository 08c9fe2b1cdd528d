"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every operation evaluates eagerly and, when gradients are enabled and at least
one input requires them, records a tape node holding its inputs and a local
gradient closure.  :func:`backward` walks the recorded nodes once, in reverse
creation order.

The elementwise functions (``sin``, ``tanh``, ...) also accept plain numpy
arrays and return plain arrays, so numerical code can be written once and run
either on the tape (training) or directly on arrays (inversion, evaluation).
"""
from __future__ import annotations

import builtins
import contextlib
import itertools
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "ParamStore", "ShapeError", "DomainError",
    "tensor", "constant", "no_grad", "is_grad_enabled", "backward", "evaluate", "grad_check",
    "add", "sub", "mul", "div", "neg", "matmul", "sum", "mean", "sin", "cos", "tanh",
    "exp", "log", "softplus", "softmax", "square", "mask_mul", "concat", "reshape",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class DomainError(ValueError):
    """An operation was evaluated outside its mathematical domain."""


_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording tape nodes."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that doubles as a node of the differentiation tape.

    Leaves are created with :func:`tensor`; interior nodes are produced by the
    operations in this module and carry ``op``, ``parents`` and the local
    gradient rule ``_backward`` (output cotangent -> one cotangent per parent).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward", "id")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if (requires_grad and op == "leaf") else None
        self.op = op
        self.parents = parents
        self._backward = backward
        self.id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if type(x) is Tensor else Tensor(x)


def _node(value: np.ndarray, op: str, inputs: tuple, rule: Callable) -> Tensor:
    if _grad_enabled and any([t.requires_grad for t in inputs]):
        return Tensor(value, requires_grad=True, op=op, parents=inputs, backward=rule)
    return Tensor(value, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(op: str, fn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return fn(a, b)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _plain(*xs) -> bool:
    for x in xs:
        if type(x) is Tensor:
            return False
    return True


# -- binary elementwise ------------------------------------------------------

def add(a, b):
    if _plain(a, b):
        return np.add(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(_binary("add", np.add, a.data, b.data), "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    if _plain(a, b):
        return np.subtract(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(_binary("sub", np.subtract, a.data, b.data), "sub", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    if _plain(a, b):
        return np.multiply(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _node(_binary("mul", np.multiply, ad, bd), "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    if _plain(a, b):
        return np.divide(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    out = _binary("div", np.divide, ad, bd)
    return _node(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


# broadcast-add is ordinary add with numpy broadcasting; kept as a named alias
broadcast_add = add


def mask_mul(x, mask):
    """Multiply by a constant 0/1 mask (no gradient flows into the mask)."""
    mask = np.asarray(mask, dtype=np.float64)
    if _plain(x):
        return np.multiply(x, mask)
    if x.shape != mask.shape:
        raise ShapeError(f"mask_mul: incompatible shapes {x.shape} and {mask.shape}")
    return _node(x.data * mask, "mask_mul", (x,), lambda g: (g * mask,))


def matmul(a, b):
    if _plain(a, b):
        return np.matmul(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, "matmul", (a, b), lambda g: (g @ bd.T, ad.T @ g))


# -- unary ---------------------------------------------------------------------

def neg(x):
    if _plain(x):
        return np.negative(x)
    return _node(-x.data, "neg", (x,), lambda g: (-g,))


def sin(x):
    if _plain(x):
        return np.sin(x)
    xd = x.data
    return _node(np.sin(xd), "sin", (x,), lambda g: (g * np.cos(xd),))


def cos(x):
    if _plain(x):
        return np.cos(x)
    xd = x.data
    return _node(np.cos(xd), "cos", (x,), lambda g: (-g * np.sin(xd),))


def tanh(x):
    if _plain(x):
        return np.tanh(x)
    out = np.tanh(x.data)
    return _node(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def exp(x):
    if _plain(x):
        return np.exp(x)
    out = np.exp(x.data)
    return _node(out, "exp", (x,), lambda g: (g * out,))


def log(x):
    xd = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if np.any(xd <= 0):
        raise DomainError(f"log: non-positive input (min {xd.min():.6g})")
    if _plain(x):
        return np.log(xd)
    return _node(np.log(xd), "log", (x,), lambda g: (g / xd,))


def _softplus(v):
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def softplus(x):
    if _plain(x):
        return _softplus(np.asarray(x, dtype=np.float64))
    xd = x.data
    # d/dx softplus = sigmoid, written to avoid overflow for either sign
    def rule(g):
        e = np.exp(-np.abs(xd))
        sig = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)
    return _node(_softplus(xd), "softplus", (x,), rule)


def _softmax(v):
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Softmax over the last axis."""
    if _plain(x):
        return _softmax(np.asarray(x, dtype=np.float64))
    out = _softmax(x.data)
    return _node(out, "softmax", (x,),
                 lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def square(x):
    if _plain(x):
        return np.square(x)
    xd = x.data
    return _node(xd * xd, "square", (x,), lambda g: (2.0 * g * xd,))


# -- shape and reductions -------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    if _plain(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)
    return _node(out, "sum", (x,), rule)


def mean(x, axis=None, keepdims=False):
    if _plain(x):
        return np.mean(x, axis=axis, keepdims=keepdims)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    if _plain(x):
        return np.reshape(x, shape)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from None
    return _node(out, "reshape", (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence, axis: int = -1):
    if _plain(*xs):
        return np.concatenate(xs, axis=axis)
    ts = [_as_tensor(t) for t in xs]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in ts)) from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, "concat", tuple(ts), lambda g: tuple(np.split(g, cuts, axis=axis)))


# -- evaluation and gradients ---------------------------------------------------

def evaluate(node) -> np.ndarray:
    """Forward value of an expression.

    Expressions are evaluated as they are built, so this only unwraps the
    cached value of the final node.
    """
    return node.data if isinstance(node, Tensor) else np.asarray(node, dtype=np.float64)


def backward(loss: Tensor, store: "ParamStore | None" = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    ``store`` is accepted for symmetry with the training loop; gradients land in
    the leaf tensors, which are exactly the store's parameters.
    """
    if not isinstance(loss, Tensor) or loss.shape != ():
        shape = loss.shape if isinstance(loss, Tensor) else np.shape(loss)
        raise ValueError(f"backward: loss must be a scalar tensor, got shape {shape}")
    if not loss.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.id in nodes:
            continue
        nodes[t.id] = t
        stack.extend(p for p in t.parents if p.requires_grad and p.id not in nodes)

    cot: dict[int, np.ndarray] = {loss.id: np.ones(())}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = cot.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad += g
            continue
        for p, pg in zip(t.parents, t._backward(g)):
            if not p.requires_grad:
                continue
            if p.id in cot:
                cot[p.id] = cot[p.id] + pg
            else:
                cot[p.id] = pg


class ParamStore:
    """Named trainable tensors with a stable iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad.copy() for k, p in self._params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load(self, values: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in self._params.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeError(f"load: parameter {k!r} has shape {p.shape}, got {v.shape}")
            p.data = v.copy()
            p.grad = np.zeros_like(p.data)

    def num_parameters(self) -> int:
        return builtins.sum(p.data.size for p in self._params.values())


def grad_check(f: Callable[[], Tensor], store: ParamStore, step: float = 1e-5,
               analytic: Mapping[str, np.ndarray] | None = None) -> float:
    """Largest |analytic - central difference| / max(1, |analytic|) over all entries.

    ``analytic`` overrides the tape gradients, which is how a deliberately wrong
    gradient can be checked against the finite-difference oracle.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    if analytic is None:
        store.zero_grad()
        loss = f()
        if not np.isfinite(loss.data):
            raise FloatingPointError("grad_check: objective is not finite")
        backward(loss, store)
        analytic = store.grads()

    worst = 0.0
    with no_grad():
        for name, p in store:
            flat = p.data.reshape(-1)
            an = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise FloatingPointError(f"grad_check: objective not finite near {name}[{i}]")
                num = (fp - fm) / (2.0 * step)
                worst = max(worst, abs(an[i] - num) / max(1.0, abs(an[i])))
    return worst
