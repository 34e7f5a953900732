"""Dense real/complex tensors with reverse-mode automatic differentiation.

Gradients of complex tensors are stored with the real-pair packing
``grad = dL/dRe + i*dL/dIm`` (twice the conjugate Wirtinger derivative), so
that ``w -= lr * grad`` performs plain gradient descent on the real loss and
finite-difference checks on the real and imaginary parts compare directly
against ``grad.real`` and ``grad.imag``.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import (
    ComplexLossError,
    DetachedGraphError,
    DtypeMismatchError,
    GeometryError,
    ShapeMismatchError,
)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable taping inside the context (inference / oracle computations)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _is_complex(a: np.ndarray) -> bool:
    return np.issubdtype(a.dtype, np.complexfloating)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` (trailing-dim rules)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional array node on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype == np.float16 or arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._parents: tuple = ()
        self._grad_fn = None
        self._op = ""

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_complex(self):
        return _is_complex(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def item(self):
        return self.data.item()

    def astype(self, dtype) -> "Tensor":
        out = _make(self.data.astype(dtype), (self,), "astype")
        if out.requires_grad:
            src = self.dtype

            def back(g):
                return (g.astype(src),)

            out._grad_fn = back
        return out

    # -- backward pass ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"backward requires a scalar loss, got shape {self.shape}")
        if self.is_complex:
            raise ComplexLossError("backward requires a real scalar loss")
        if not self.requires_grad:
            raise DetachedGraphError("loss is not connected to any tensor requiring grad")

        # Topological order over the tape (iterative, each node once).
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                # Leaf: accumulate (repeated backward calls add up).
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
                continue
            parent_grads = node._grad_fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def real(self):
        return real_part(self)


class Parameter(Tensor):
    """A trainable tensor registered by name in a model's parameter registry."""

    __slots__ = ("name", "init_spec")

    def __init__(self, data, name: str = "", init_spec: str = "explicit", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.init_spec = init_spec


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and not np.isscalar(x) else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, op) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._op = op
    return out


def _check_dtypes(a: Tensor, b: Tensor, op: str):
    if isinstance(b, Tensor) and (a.is_complex != b.is_complex):
        raise DtypeMismatchError(
            f"{op}: real/complex mix ({a.dtype} vs {b.dtype}); promote explicitly with to_complex()"
        )


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ops -------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    _check_dtypes(a, b, "add")
    _check_broadcast(a, b, "add")
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        out._grad_fn = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def sub(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    _check_dtypes(a, b, "sub")
    _check_broadcast(a, b, "sub")
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:
        out._grad_fn = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; for complex operands this is the exact complex product."""
    a = _lift(a)
    b = _lift(b, a)
    _check_dtypes(a, b, "mul")
    _check_broadcast(a, b, "mul")
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        # conj() on the partner is what makes the real-pair packing correct
        # for complex factors; it is a no-op for real data.
        out._grad_fn = lambda g: (
            _unbroadcast(g * np.conj(b.data), a.shape),
            _unbroadcast(g * np.conj(a.data), b.shape),
        )
    return out


def complex_mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    if not (a.is_complex and b.is_complex):
        raise DtypeMismatchError(f"complex_mul requires complex operands, got {a.dtype}, {b.dtype}")
    return mul(a, b)


def div(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    _check_dtypes(a, b, "div")
    _check_broadcast(a, b, "div")
    out = _make(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        out._grad_fn = lambda g: (
            _unbroadcast(g / np.conj(b.data), a.shape),
            _unbroadcast(-g * np.conj(a.data) / np.conj(b.data) ** 2, b.shape),
        )
    return out


def neg(a) -> Tensor:
    a = _lift(a)
    out = _make(-a.data, (a,), "neg")
    if out.requires_grad:
        out._grad_fn = lambda g: (-g,)
    return out


def power(a, p: float) -> Tensor:
    a = _lift(a)
    out = _make(a.data**p, (a,), "pow")
    if out.requires_grad:
        out._grad_fn = lambda g: (g * p * np.conj(a.data) ** (p - 1),)
    return out


def texp(a) -> Tensor:
    a = _lift(a)
    out = _make(np.exp(a.data), (a,), "exp")
    if out.requires_grad:
        out._grad_fn = lambda g: (g * np.conj(out.data),)
    return out


def tlog(a) -> Tensor:
    a = _lift(a)
    out = _make(np.log(a.data), (a,), "log")
    if out.requires_grad:
        out._grad_fn = lambda g: (g / np.conj(a.data),)
    return out


def tsqrt(a) -> Tensor:
    a = _lift(a)
    out = _make(np.sqrt(a.data), (a,), "sqrt")
    if out.requires_grad:
        out._grad_fn = lambda g: (g * 0.5 / np.conj(out.data),)
    return out


def ttanh(a) -> Tensor:
    a = _lift(a)
    out = _make(np.tanh(a.data), (a,), "tanh")
    if out.requires_grad:
        out._grad_fn = lambda g: (g * (1.0 - out.data**2),)
    return out


def relu(a) -> Tensor:
    a = _lift(a)
    if a.is_complex:
        raise DtypeMismatchError("relu is defined for real tensors only")
    out = _make(np.maximum(a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        mask = (a.data > 0).astype(a.dtype)
        out._grad_fn = lambda g: (g * mask,)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Smooth-gated nonlinearity (tanh approximation)."""
    a = _lift(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = _make(0.5 * x * (1.0 + t), (a,), "gelu")
    if out.requires_grad:
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner

        def back(g):
            return (g * local,)

        out._grad_fn = back
    return out


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo) with gradient gated to the un-clipped region."""
    a = _lift(a)
    out = _make(np.maximum(a.data, lo), (a,), "clip_min")
    if out.requires_grad:
        mask = (a.data > lo).astype(a.dtype)
        out._grad_fn = lambda g: (g * mask,)
    return out


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch table for the basic elementwise operations."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "complex_mul":
        return complex_mul(a, b)
    if op == "relu_like":
        return relu(a)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- dtype bridges ---------------------------------------------------------


def to_complex(a) -> Tensor:
    """Explicit real -> complex promotion."""
    a = _lift(a)
    if a.is_complex:
        return a
    cdtype = np.complex64 if a.dtype == np.float32 else np.complex128
    out = _make(a.data.astype(cdtype), (a,), "to_complex")
    if out.requires_grad:
        out._grad_fn = lambda g: (g.real.astype(a.dtype),)
    return out


def real_part(a) -> Tensor:
    a = _lift(a)
    if not a.is_complex:
        return a
    out = _make(a.data.real.copy(), (a,), "real")
    if out.requires_grad:
        cdtype = a.dtype
        out._grad_fn = lambda g: (g.astype(cdtype),)
    return out


def imag_part(a) -> Tensor:
    a = _lift(a)
    if not a.is_complex:
        raise DtypeMismatchError("imag_part requires a complex tensor")
    out = _make(a.data.imag.copy(), (a,), "imag")
    if out.requires_grad:
        cdtype = a.dtype
        out._grad_fn = lambda g: ((1j * g).astype(cdtype),)
    return out


def conj(a) -> Tensor:
    a = _lift(a)
    out = _make(np.conj(a.data), (a,), "conj")
    if out.requires_grad:
        out._grad_fn = lambda g: (np.conj(g),)
    return out


# -- reductions and structure ops -------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

        out._grad_fn = back
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        out._grad_fn = lambda g: (g.reshape(a.shape),)
    return out


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    out = _make(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else np.argsort(axes)
        out._grad_fn = lambda g: (np.transpose(g, inv),)
    return out


def getitem(a, idx) -> Tensor:
    a = _lift(a)
    out = _make(a.data[idx].copy() if isinstance(a.data[idx], np.ndarray) else a.data[idx], (a,), "getitem")
    if out.requires_grad:

        def back(g):
            buf = np.zeros(a.shape, dtype=a.dtype)
            buf[idx] = g
            return (buf,)

        out._grad_fn = back
    return out


def pad_zeros(a, pad_width) -> Tensor:
    """Zero padding; pad_width follows numpy's ((before, after), ...) form."""
    a = _lift(a)
    out = _make(np.pad(a.data, pad_width), (a,), "pad")
    if out.requires_grad:
        sl = tuple(slice(b, b + n) for (b, _), n in zip(pad_width, a.shape))
        out._grad_fn = lambda g: (g[sl],)
    return out


def concat(tensors, axis=0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out._grad_fn = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def roll(a, shift, axis) -> Tensor:
    a = _lift(a)
    out = _make(np.roll(a.data, shift, axis=axis), (a,), "roll")
    if out.requires_grad:
        neg_shift = tuple(-s for s in shift) if isinstance(shift, (tuple, list)) else -shift
        out._grad_fn = lambda g: (np.roll(g, neg_shift, axis=axis),)
    return out


def stack(tensors, axis=0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack")
    if out.requires_grad:
        out._grad_fn = lambda g: tuple(np.moveaxis(g, axis, 0))
    return out


def matmul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b)
    _check_dtypes(a, b, "matmul")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:

        def back(g):
            ga = g @ np.conj(b.data).swapaxes(-1, -2)
            gb = np.conj(a.data).swapaxes(-1, -2) @ g
            return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

        out._grad_fn = back
    return out


# -- fused neural-net ops ----------------------------------------------------


def linear(x, w, b=None) -> Tensor:
    """Affine map over the trailing axis: y[..., j] = sum_i x[..., i] w[i, j] + b[j]."""
    x = _lift(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatchError(f"linear: input channels {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeMismatchError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, "linear")
    if out.requires_grad:

        def back(g):
            g2 = g.reshape(-1, w.shape[1])
            x2 = x.data.reshape(-1, w.shape[0])
            gx = (g @ w.data.T).reshape(x.shape)
            gw = x2.T @ g2
            if b is None:
                return (gx, gw)
            return (gx, gw, g2.sum(axis=0))

        out._grad_fn = back
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize over one axis to zero mean / unit variance, then scale and shift."""
    x = _lift(x)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    ax = axis % x.ndim
    c = x.shape[ax]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(
            f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} must be ({c},)"
        )
    bshape = [1] * x.ndim
    bshape[ax] = c
    gd = gamma.data.reshape(bshape)
    bd = beta.data.reshape(bshape)

    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _make(gd * xhat + bd, (x, gamma, beta), "layer_norm")
    if out.requires_grad:

        def back(g):
            red = tuple(i for i in range(x.ndim) if i != ax)
            ggamma = (g * xhat).sum(axis=red)
            gbeta = g.sum(axis=red)
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=ax, keepdims=True) - xhat * (gh * xhat).mean(axis=ax, keepdims=True))
            return (gx, ggamma, gbeta)

        out._grad_fn = back
    return out


def conv3d(x, w, b=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """3D cross-correlation, channel-first: x [Cin,D,H,W], w [Cout,Cin/g,k,k,k]."""
    x = _lift(x)
    cin = x.shape[0]
    cout, cin_g, k = w.shape[0], w.shape[1], w.shape[2]
    if w.shape[2:] != (k, k, k) or k % 2 == 0:
        raise GeometryError(f"conv3d: kernel must be odd and cubic, got {w.shape[2:]}")
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise GeometryError(
            f"conv3d: groups={groups} incompatible with Cin={cin}, Cout={cout}, w Cin/g={cin_g}"
        )
    spatial = x.shape[1:]
    out_sp = tuple((n + 2 * padding - k) // stride + 1 for n in spatial)
    if any(n <= 0 for n in out_sp):
        raise GeometryError(
            f"conv3d: non-positive output extents {out_sp} from input {spatial}, k={k}, "
            f"stride={stride}, padding={padding}"
        )

    xp = np.pad(x.data, ((0, 0),) + ((padding, padding),) * 3) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride]  # [Cin, D', H', W', k, k, k]
    wg = w.data.reshape(groups, cout // groups, cin_g, k, k, k)
    xg = win.reshape(groups, cin_g, *out_sp, k, k, k)
    y = np.einsum("gcdhwijk,gocijk->godhw", xg, wg, optimize=True)
    y = y.reshape(cout, *out_sp)
    if b is not None:
        y = y + b.data.reshape(-1, 1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    out = _make(y, parents, "conv3d")
    if out.requires_grad:
        pd = tuple(n + 2 * padding for n in spatial)

        def back(g):
            gg = g.reshape(groups, cout // groups, *out_sp)
            gw = np.einsum("gcdhwijk,godhw->gocijk", xg, gg, optimize=True).reshape(w.shape)
            gcols = np.einsum("godhw,gocijk->gcdhwijk", gg, wg, optimize=True)
            gcols = gcols.reshape(cin, *out_sp, k, k, k)
            gxp = np.zeros((cin,) + pd, dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        gxp[
                            :,
                            i : i + stride * out_sp[0] : stride,
                            j : j + stride * out_sp[1] : stride,
                            l : l + stride * out_sp[2] : stride,
                        ] += gcols[..., i, j, l]
            gx = gxp[:, padding : padding + spatial[0], padding : padding + spatial[1], padding : padding + spatial[2]] if padding else gxp
            if b is None:
                return (gx, gw)
            return (gx, gw, g.sum(axis=(1, 2, 3)))

        out._grad_fn = back
    return out


def avg_pool3d(x, k: int = 2, stride: int | None = None) -> Tensor:
    """Window-mean downsampling over the three trailing axes of [C,D,H,W]."""
    x = _lift(x)
    if stride is None:
        stride = k
    if stride != k:
        raise GeometryError("avg_pool3d: only stride == k windows are supported")
    c, d, h, w = x.shape
    if d % k or h % k or w % k:
        raise GeometryError(f"avg_pool3d: extents {(d, h, w)} not divisible by {k}")
    xb = x.data.reshape(c, d // k, k, h // k, k, w // k, k)
    out = _make(xb.mean(axis=(2, 4, 6)), (x,), "avg_pool3d")
    if out.requires_grad:
        scale = 1.0 / k**3

        def back(g):
            gb = np.broadcast_to(
                g[:, :, None, :, None, :, None] * scale, (c, d // k, k, h // k, k, w // k, k)
            )
            return (gb.reshape(x.shape).astype(x.dtype, copy=False),)

        out._grad_fn = back
    return out


def backward(loss: Tensor) -> None:
    """Populate grads of every reachable tensor with requires_grad from a real scalar loss."""
    loss.backward()
