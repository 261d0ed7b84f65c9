"""Dense float64 tensors with reverse-mode automatic differentiation.

Every trainable quantity in the package is a `Tensor`. Arithmetic on
tensors records a tape; calling `backward()` on a scalar result walks the
tape in reverse topological order and accumulates gradients into the
`grad` buffer of every reachable tensor with `requires_grad=True`.

Gradient correctness is arbitrated by `grad_check`, which compares the
tape's output against central finite differences.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """N-dimensional float64 array node in a reverse-mode autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # ------------------------------------------------------------------
    # construction helpers

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=np.float64), requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # tape plumbing

    def _record(self, parents: tuple["Tensor", ...], backward) -> "Tensor":
        """Attach provenance to `self` if the tape is live."""
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            self.requires_grad = True
            self._parents = parents
            self._backward = backward
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad.

        `self` must be a scalar (size-1) tensor.
        """
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into the public grad buffer
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] += pg
                else:
                    grads[pid] = pg

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data)

        def bw(g):
            return ((self, _unbroadcast(g, self.shape)),
                    (other, _unbroadcast(g, other.shape)))

        return out._record((self, other), bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data - other.data)

        def bw(g):
            return ((self, _unbroadcast(g, self.shape)),
                    (other, _unbroadcast(-g, other.shape)))

        return out._record((self, other), bw)

    def __rsub__(self, other):
        return Tensor(other) - self

    def __neg__(self):
        out = Tensor(-self.data)
        return out._record((self,), lambda g: ((self, -g),))

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data)

        def bw(g):
            return ((self, _unbroadcast(g * other.data, self.shape)),
                    (other, _unbroadcast(g * self.data, other.shape)))

        return out._record((self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data / other.data)

        def bw(g):
            return ((self, _unbroadcast(g / other.data, self.shape)),
                    (other, _unbroadcast(-g * self.data / other.data ** 2,
                                         other.shape)))

        return out._record((self, other), bw)

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise ContractError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent)

        def bw(g):
            return ((self, g * exponent * self.data ** (exponent - 1)),)

        return out._record((self,), bw)

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError("matmul requires tensors of rank >= 2")
        out = Tensor(self.data @ other.data)

        def bw(g):
            ga = g @ _swap_last(other.data)
            gb = _swap_last(self.data) @ g
            return ((self, _unbroadcast(ga, self.shape, batch_only=True)),
                    (other, _unbroadcast(gb, other.shape, batch_only=True)))

        return out._record((self, other), bw)

    # ------------------------------------------------------------------
    # shape ops

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape))
        return out._record((self,), lambda g: ((self, g.reshape(self.shape)),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = Tensor(self.data.transpose(axes))
        return out._record((self,), lambda g: ((self, g.transpose(inv)),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, key) -> "Tensor":
        out = Tensor(self.data[key])

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return ((self, full),)

        return out._record((self,), bw)

    def take_rows(self, indices) -> "Tensor":
        """Gather rows along axis 0 (embedding-table lookup)."""
        idx = np.asarray(indices, dtype=np.intp)
        out = Tensor(self.data[idx])

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return ((self, full),)

        return out._record((self,), bw)

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims))

        def bw(g):
            if axis is None:
                return ((self, np.broadcast_to(g, self.shape).copy()),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return ((self, np.broadcast_to(gg, self.shape).copy()),)

        return out._record((self,), bw)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.max(axis=axis, keepdims=keepdims)
        out = Tensor(out_data)

        def bw(g):
            if axis is None:
                full_max = out_data
                gg = g
            else:
                full_max = out_data if keepdims else np.expand_dims(out_data, axis)
                gg = g if keepdims else np.expand_dims(g, axis)
            mask = (self.data == full_max).astype(np.float64)
            counts = mask.sum(axis=axis, keepdims=True) if axis is not None \
                else mask.sum()
            # ties share the incoming gradient equally
            return ((self, mask / counts * gg),)

        return out._record((self,), bw)

    # ------------------------------------------------------------------
    # elementwise functions

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data))
        return out._record((self,), lambda g: ((self, g * out.data),))

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise DomainError("log of non-positive value")
        out = Tensor(np.log(self.data))
        return out._record((self,), lambda g: ((self, g / self.data),))

    def tanh(self) -> "Tensor":
        data = np.tanh(self.data)
        # keep the open interval: float rounding saturates tanh at +-1
        bound = 1.0 - np.finfo(np.float64).epsneg
        np.clip(data, -bound, bound, out=data)
        out = Tensor(data)
        return out._record((self,), lambda g: ((self, g * (1.0 - out.data ** 2)),))

    def abs(self) -> "Tensor":
        out = Tensor(np.abs(self.data))
        # subgradient 0 at the kink
        return out._record((self,), lambda g: ((self, g * np.sign(self.data)),))

    def sqrt(self) -> "Tensor":
        if np.any(self.data < 0):
            raise DomainError("sqrt of negative value")
        out = Tensor(np.sqrt(self.data))
        return out._record((self,), lambda g: ((self, g * 0.5 / np.maximum(out.data, 1e-300)),))


def _swap_last(arr: np.ndarray) -> np.ndarray:
    return np.swapaxes(arr, -1, -2)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...],
                 batch_only: bool = False) -> np.ndarray:
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    # sum away leading dims
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    if not batch_only:
        axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    else:
        # matmul: only batch dims (all but the trailing two) can broadcast
        axes = tuple(i for i in range(max(0, g.ndim - 2))
                     if shape[i] == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------
# free functions


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DomainError("stack of empty list")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bw(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple((t, np.squeeze(p, axis=axis))
                     for t, p in zip(tensors, parts))

    return out._record(tuple(tensors), bw)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DomainError("concat of empty list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            grads.append((t, g[tuple(idx)]))
        return tuple(grads)

    return out._record(tuple(tensors), bw)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties split the gradient equally."""
    out = Tensor(np.maximum(a.data, b.data))

    def bw(g):
        ga = np.where(a.data > b.data, g, np.where(a.data == b.data, 0.5 * g, 0.0))
        gb = np.where(b.data > a.data, g, np.where(a.data == b.data, 0.5 * g, 0.0))
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return out._record((a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function; output strictly in (0, 1)."""
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    out_data[~pos] = ed / (1.0 + ed)
    # float rounding may collapse extreme values onto the closed endpoints
    np.clip(out_data, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg,
            out=out_data)
    out = Tensor(out_data)
    return out._record((x,), lambda g: ((x, g * out.data * (1.0 - out.data)),))


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without overflow for large |x|."""
    d = x.data
    out_data = np.where(d >= 0, -np.log1p(np.exp(-np.abs(d))),
                        d - np.log1p(np.exp(-np.abs(d))))
    out = Tensor(out_data)

    def bw(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        s = np.empty_like(d)
        pos = d >= 0
        s[pos] = np.exp(-d[pos]) / (1.0 + np.exp(-d[pos]))
        s[~pos] = 1.0 / (1.0 + np.exp(d[~pos]))
        return ((x, g * s),)

    return out._record((x,), bw)


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-stabilized softmax along `axis`; slices sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(out_data)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((x, out_data * (g - dot)),)

    return out._record((x,), bw)


def logsumexp(xs: list[Tensor]) -> Tensor:
    """Elementwise log(sum(exp(x_i))) over a nonempty list of same-shape tensors.

    Stabilized by max subtraction; a singleton list returns its element
    value exactly.
    """
    if not xs:
        raise DomainError("logsumexp of empty list")
    shapes = {t.shape for t in xs}
    if len(shapes) != 1:
        raise ShapeError(f"logsumexp over mismatched shapes {shapes}")
    stacked = stack(xs, axis=0)
    return logsumexp_axis(stacked, axis=0)


def logsumexp_axis(x: Tensor, axis: int) -> Tensor:
    """log(sum(exp(x))) reduced along one axis, max-stabilized."""
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    s = np.exp(shifted).sum(axis=axis)
    out_data = np.squeeze(m, axis=axis) + np.log(s)
    out = Tensor(out_data)

    def bw(g):
        w = np.exp(shifted) / np.expand_dims(s, axis)
        return ((x, np.expand_dims(g, axis) * w),)

    return out._record((x,), bw)


def einsum(spec: str, *operands: Tensor) -> Tensor:
    """Differentiable einsum.

    Restricted to specs where every index of each operand also appears in
    the output or in another operand (no internal traces), which makes the
    gradient expressible as another einsum with subscripts swapped.
    """
    if "..." in spec:
        raise ContractError("einsum ellipsis not supported")
    in_spec, out_spec = spec.replace(" ", "").split("->")
    in_specs = in_spec.split(",")
    if len(in_specs) != len(operands):
        raise ShapeError("einsum operand count mismatch")
    for i, s in enumerate(in_specs):
        if len(set(s)) != len(s):
            raise ContractError(f"repeated index within operand {i}")
        others = set(out_spec) | set("".join(in_specs[:i] + in_specs[i + 1:]))
        if not set(s) <= others:
            raise ContractError(f"operand {i} has an index summed only internally")
    out = Tensor(np.einsum(spec, *[t.data for t in operands]))

    def bw(g):
        grads = []
        for i, t in enumerate(operands):
            rest_specs = in_specs[:i] + in_specs[i + 1:]
            rest_ops = [o.data for j, o in enumerate(operands) if j != i]
            sub = ",".join([out_spec] + rest_specs) + "->" + in_specs[i]
            grads.append((t, np.einsum(sub, g, *rest_ops)))
        return tuple(grads)

    return out._record(tuple(operands), bw)


# ----------------------------------------------------------------------
# interleaved complex arithmetic

@dataclass
class ComplexVec:
    """A complex vector stored as interleaved (real, imag) float pairs."""

    dim: int
    data: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.dim % 2 != 0:
            raise DomainError(f"ComplexVec dim must be even, got {self.dim}")
        self.data = _as_array(self.data)
        if self.data.shape != (self.dim,):
            raise ShapeError(f"data shape {self.data.shape} != ({self.dim},)")

    @staticmethod
    def pack(values: list[complex]) -> "ComplexVec":
        data = np.empty(2 * len(values))
        data[0::2] = [v.real for v in values]
        data[1::2] = [v.imag for v in values]
        return ComplexVec(dim=2 * len(values), data=data)

    def unpack(self) -> list[complex]:
        return [complex(r, i) for r, i in zip(self.data[0::2], self.data[1::2])]


def complex_split(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split interleaved last axis into (real, imag) halves."""
    if x.shape[-1] % 2 != 0:
        raise DomainError(f"interleaved complex tensor needs even last dim, got {x.shape[-1]}")
    idx_re = (Ellipsis, slice(0, None, 2))
    idx_im = (Ellipsis, slice(1, None, 2))
    return x[idx_re], x[idx_im]


def complex_interleave(re: Tensor, im: Tensor) -> Tensor:
    """Inverse of complex_split: weave halves back into one even axis."""
    stacked = stack([re, im], axis=re.ndim)  # [..., d/2, 2]
    return stacked.reshape(*re.shape[:-1], 2 * re.shape[-1])


def complex_hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Coordinatewise complex product of two interleaved tensors."""
    ar, ai = complex_split(a)
    br, bi = complex_split(b)
    return complex_interleave(ar * br - ai * bi, ar * bi + ai * br)


# ----------------------------------------------------------------------
# finite-difference verification


def grad_check(f, params: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` is a zero-argument callable returning a scalar Tensor that depends
    on `params`. The error per coordinate is
    |analytic - numeric| / max(1, |numeric|) and the max over all
    coordinates of all parameters is returned.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise DomainError(f"eps {eps} outside [1e-6, 1e-3]")
    for p in params:
        p.zero_grad()
        p.requires_grad = True
    loss = f()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                err = abs(a.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
