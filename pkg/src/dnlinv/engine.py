"""Reverse-mode automatic differentiation over dense numpy arrays.

A small dynamically recorded graph: every operation returns a new Tensor
that remembers its parent tensors and a closure that pushes the output
gradient back to them. ``Tensor.backward()`` walks the recorded graph once
in reverse topological order and accumulates gradients on every tensor
created with ``requires_grad=True``.

Tensors are real-valued. Complex arithmetic is built on top of paired
tensors in :mod:`dnlinv.ctensor`. The Fourier primitive therefore maps a
(real, imag) pair to a stacked ``(2, ...)`` output.

Precision is a process-global switch (:func:`set_default_dtype`); new
tensors are created in the active dtype. 32-bit is the reconstruction
default, 64-bit is what the property tests use.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.linalg import solve_triangular


class EngineError(Exception):
    """Base class for graph construction and execution errors."""


class NonFiniteError(EngineError, ArithmeticError):
    """An operation produced NaN or Inf while finite checking was enabled."""


class NondeterministicFunctionError(EngineError):
    """check_gradient was handed a function that is not repeatable."""


_default_dtype = np.float32
_grad_enabled = True
_check_finite = False


def set_default_dtype(dtype) -> None:
    """Set the dtype used for all subsequently created tensors.

    Only float32 and float64 are allowed; the matching complex dtype is
    used by the Fourier primitive internally.
    """
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported default dtype {dtype!r}")
    _default_dtype = dt.type


def get_default_dtype():
    return _default_dtype


def complex_dtype():
    """Complex dtype matching the active real default."""
    return np.complex128 if _default_dtype == np.float64 else np.complex64


@contextlib.contextmanager
def precision(dtype):
    """Context manager that temporarily switches the default dtype."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def set_check_finite(flag: bool) -> None:
    """Toggle per-op finite checking (off by default; used in tests)."""
    global _check_finite
    _check_finite = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording (pure forward eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense real array plus the bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

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

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return powi(self, p)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose2d(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    # -- backward -------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Gradients accumulate into ``.grad`` of every reachable tensor with
        ``requires_grad=True``; callers are responsible for zeroing grads
        between steps.
        """
        if self.data.size != 1:
            raise EngineError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _make(data, parents, backward, op: str) -> Tensor:
    """Create the output node of an op, recording parents when needed."""
    if _check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op {op!r}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


_REGISTRY = {}


def _register(name):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn

    return deco


def record(op: str, inputs, **kwargs) -> Tensor:
    """Apply a primitive by name. Inputs is a sequence of tensors/arrays."""
    fn = _REGISTRY.get(op)
    if fn is None:
        raise EngineError(f"unknown op {op!r}; known: {sorted(_REGISTRY)}")
    return fn(*inputs, **kwargs)


# -- elementwise and reduction primitives --------------------------------


@_register("add")
def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


@_register("sub")
def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward, "sub")


@_register("mul")
def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * bd, ad.shape))
        _accumulate(b, _unbroadcast(g * ad, bd.shape))

    return _make(data, (a, b), backward, "mul")


@_register("div")
def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / bd, ad.shape))
        _accumulate(b, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _make(data, (a, b), backward, "div")


@_register("neg")
def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward, "neg")


@_register("pow")
def powi(a: Tensor, p) -> Tensor:
    p = float(p)
    data = a.data**p
    ad = a.data

    def backward(g):
        _accumulate(a, g * p * ad ** (p - 1.0))

    return _make(data, (a,), backward, "pow")


@_register("exp")
def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _make(data, (a,), backward, "exp")


@_register("log")
def log(a: Tensor) -> Tensor:
    data = np.log(a.data)
    ad = a.data

    def backward(g):
        _accumulate(a, g / ad)

    return _make(data, (a,), backward, "log")


@_register("relu")
def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, 0).astype(a.data.dtype)

    def backward(g):
        _accumulate(a, g * mask)

    return _make(data, (a,), backward, "relu")


@_register("dropout")
def dropout_apply(a: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a fixed (already scaled) dropout mask array."""
    mask = np.asarray(mask, dtype=a.data.dtype)
    data = a.data * mask

    def backward(g):
        _accumulate(a, _unbroadcast(g * mask, a.data.shape))

    return _make(data, (a,), backward, "dropout")


@_register("sum")
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data, dtype=a.data.dtype)
    in_shape = a.data.shape

    def backward(g):
        if axis is None:
            ga = np.broadcast_to(g, in_shape)
        else:
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            ga = np.broadcast_to(gg, in_shape)
        _accumulate(a, ga)

    return _make(data, (a,), backward, "sum")


# -- shape primitives -----------------------------------------------------


@_register("reshape")
def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    in_shape = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(in_shape))

    return _make(data, (a,), backward, "reshape")


@_register("transpose2d")
def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise EngineError(f"transpose2d expects a matrix, got shape {a.data.shape}")
    data = np.ascontiguousarray(a.data.T)

    def backward(g):
        _accumulate(a, g.T)

    return _make(data, (a,), backward, "transpose2d")


@_register("slice")
def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing with scatter-add backward."""
    data = np.array(a.data[index], copy=True)
    in_shape = a.data.shape
    dtype = a.data.dtype

    def backward(g):
        full = np.zeros(in_shape, dtype=dtype)
        full[index] = g
        _accumulate(a, full)

    return _make(data, (a,), backward, "slice")


@_register("concat")
def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(data, tuple(tensors), backward, "concat")


# -- linear algebra primitives ---------------------------------------------


@_register("matmul")
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise EngineError(f"matmul expects matrices, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise EngineError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def backward(g):
        _accumulate(a, g @ bd.T)
        _accumulate(b, ad.T @ g)

    return _make(data, (a, b), backward, "matmul")


@_register("tri_solve")
def tri_solve(chol: Tensor, rhs: Tensor) -> Tensor:
    """Solve L X = B for X with L lower triangular.

    Gradients: dB = L^{-T} G and dL = -tril(L^{-T} G X^T). The upper
    triangle of L never enters the forward value so its gradient is zero.
    """
    chol, rhs = _as_tensor(chol), _as_tensor(rhs)
    ld, bd = chol.data, rhs.data
    if ld.ndim != 2 or ld.shape[0] != ld.shape[1]:
        raise EngineError(f"tri_solve expects a square factor, got {ld.shape}")
    if bd.ndim != 2 or bd.shape[0] != ld.shape[0]:
        raise EngineError(f"tri_solve rhs shape {bd.shape} does not match factor {ld.shape}")
    x = solve_triangular(ld, bd, lower=True, check_finite=False)

    def backward(g):
        gb = solve_triangular(ld, g, lower=True, trans="T", check_finite=False)
        _accumulate(rhs, gb)
        if chol.requires_grad:
            gl = -np.tril(gb @ x.T)
            _accumulate(chol, gl)

    return _make(x, (chol, rhs), backward, "tri_solve")


# -- convolution / resampling primitives ------------------------------------


def _im2col2d(xp: np.ndarray, kh: int, kw: int):
    c, hp, wp = xp.shape
    h, w = hp - kh + 1, wp - kw + 1
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(xp, (c, kh, kw, h, w), (s0, s1, s2, s1, s2))
    return np.ascontiguousarray(view).reshape(c * kh * kw, h * w), h, w


@_register("conv2d")
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 2-D convolution, x (Cin,H,W), weight (Cout,Cin,kh,kw)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 4:
        raise EngineError(f"conv2d expects (C,H,W) and (Cout,Cin,kh,kw), got {xd.shape}, {wd.shape}")
    cin, h, w = xd.shape
    cout, cin_w, kh, kw = wd.shape
    if cin != cin_w:
        raise EngineError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise EngineError("conv2d requires odd kernel sizes for same padding")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (ph, ph), (pw, pw)))
    cols, oh, ow = _im2col2d(xp, kh, kw)
    wm = wd.reshape(cout, -1)
    out = wm @ cols
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[:, None]
    out = out.reshape(cout, oh, ow)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.reshape(cout, -1)
        if bias is not None:
            _accumulate(bias, gm.sum(axis=1))
        if weight.requires_grad:
            _accumulate(weight, (gm @ cols.T).reshape(wd.shape))
        if x.requires_grad:
            gcols = wm.T @ gm
            gc = gcols.reshape(cin, kh, kw, h, w)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + h, j : j + w] += gc[:, i, j]
            _accumulate(x, gxp[:, ph : ph + h, pw : pw + w])

    return _make(out, parents, backward, "conv2d")


def _im2col1d(xp: np.ndarray, k: int):
    c, tp = xp.shape
    t = tp - k + 1
    s0, s1 = xp.strides
    view = np.lib.stride_tricks.as_strided(xp, (c, k, t), (s0, s1, s1))
    return np.ascontiguousarray(view).reshape(c * k, t), t


@_register("conv1d")
def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 1-D convolution, x (Cin,T), weight (Cout,Cin,k)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim != 2 or wd.ndim != 3:
        raise EngineError(f"conv1d expects (C,T) and (Cout,Cin,k), got {xd.shape}, {wd.shape}")
    cin, t = xd.shape
    cout, cin_w, k = wd.shape
    if cin != cin_w:
        raise EngineError(f"conv1d channel mismatch: input {cin}, weight {cin_w}")
    if k % 2 == 0:
        raise EngineError("conv1d requires an odd kernel size for same padding")
    p = k // 2
    xp = np.pad(xd, ((0, 0), (p, p)))
    cols, ot = _im2col1d(xp, k)
    wm = wd.reshape(cout, -1)
    out = wm @ cols
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[:, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.reshape(cout, -1)
        if bias is not None:
            _accumulate(bias, gm.sum(axis=1))
        if weight.requires_grad:
            _accumulate(weight, (gm @ cols.T).reshape(wd.shape))
        if x.requires_grad:
            gcols = wm.T @ gm
            gc = gcols.reshape(cin, k, t)
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, i : i + t] += gc[:, i]
            _accumulate(x, gxp[:, p : p + t])

    return _make(out, parents, backward, "conv1d")


@_register("upsample2x")
def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of (C,H,W) or (C,T) tensors."""
    xd = x.data
    if xd.ndim == 3:
        c, h, w = xd.shape
        data = np.repeat(np.repeat(xd, 2, axis=1), 2, axis=2)

        def backward(g):
            _accumulate(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    elif xd.ndim == 2:
        c, t = xd.shape
        data = np.repeat(xd, 2, axis=1)

        def backward(g):
            _accumulate(x, g.reshape(c, t, 2).sum(axis=2))

    else:
        raise EngineError(f"upsample2x expects (C,H,W) or (C,T), got shape {xd.shape}")

    return _make(data, (x,), backward, "upsample2x")


# -- Fourier primitive ------------------------------------------------------


def fft2c_array(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Centered orthonormal 2-D FFT over the trailing two axes.

    DC sits at index (X//2, Y//2). The transform is unitary, so the
    adjoint equals the inverse.
    """
    z = np.asarray(z)
    if z.ndim < 2 or z.shape[-1] == 0 or z.shape[-2] == 0:
        raise EngineError(f"fft2c needs two non-empty trailing axes, got shape {z.shape}")
    axes = (-2, -1)
    shifted = np.fft.ifftshift(z, axes=axes)
    f = np.fft.ifft2(shifted, norm="ortho") if inverse else np.fft.fft2(shifted, norm="ortho")
    return np.fft.fftshift(f, axes=axes)


@_register("fft2c")
def fft2c_pair(re: Tensor, im: Tensor, inverse: bool = False) -> Tensor:
    """Centered 2-D FFT on a (re, im) tensor pair; returns stacked (2, ...).

    The transform is unitary, so the backward pass is the opposite-direction
    transform applied to the output gradient pair.
    """
    re, im = _as_tensor(re), _as_tensor(im)
    if re.data.shape != im.data.shape:
        raise EngineError(f"fft2c re/im shape mismatch: {re.data.shape} vs {im.data.shape}")
    z = re.data.astype(complex_dtype())
    z += 1j * im.data.astype(complex_dtype())
    out = fft2c_array(z, inverse=inverse)
    data = np.stack([out.real, out.imag]).astype(_default_dtype, copy=False)

    def backward(g):
        gz = g[0].astype(complex_dtype()) + 1j * g[1].astype(complex_dtype())
        h = fft2c_array(gz, inverse=not inverse)
        _accumulate(re, h.real.astype(re.data.dtype, copy=False))
        _accumulate(im, h.imag.astype(im.data.dtype, copy=False))

    return _make(data, (re, im), backward, "fft2c")


# -- gradient checking -------------------------------------------------------


def check_gradient(
    f,
    params,
    eps: float = 1e-6,
    n_samples: int = 10,
    seed: int = 0,
    step: float | None = None,
    fd_dtype=None,
) -> float:
    """Compare backward gradients of ``f()`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor; it is called repeatedly while single parameter entries are
    perturbed in place. Returns the maximum over sampled coordinates of
    ``|autodiff - fd| / (|fd| + eps)``. Parameters the output does not
    depend on contribute zero error.

    ``fd_dtype`` evaluates the finite-difference reference at a different
    precision (the params are temporarily upcast). Checking 32-bit gradients
    against a 64-bit difference quotient keeps function-evaluation roundoff
    out of the comparison.
    """
    base = f()
    again = f()
    if not np.array_equal(base.data, again.data):
        raise NondeterministicFunctionError("function value changed between calls with no perturbation")
    for p in params:
        p.grad = None
    out = f()
    out.backward()
    grads = [None if p.grad is None else p.grad.copy() for p in params]

    saved = None
    ctx = contextlib.nullcontext()
    if fd_dtype is not None:
        saved = [p.data for p in params]
        for p in params:
            p.data = p.data.astype(fd_dtype)
        ctx = precision(fd_dtype)

    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        with ctx:
            for p, g in zip(params, grads):
                flat = p.data.reshape(-1)
                k = min(n_samples, flat.size)
                idxs = rng.choice(flat.size, size=k, replace=False)
                for i in idxs:
                    orig = flat[i]
                    h = step
                    if h is None:
                        h = float(np.cbrt(np.finfo(p.data.dtype).eps)) * (1.0 + abs(float(orig)))
                    flat[i] = orig + h
                    fp = float(f().data)
                    flat[i] = orig - h
                    fm = float(f().data)
                    flat[i] = orig
                    fd = (fp - fm) / (2.0 * h)
                    ad = 0.0 if g is None else float(g.reshape(-1)[i])
                    err = abs(ad - fd) / (abs(fd) + eps)
                    worst = max(worst, err)
    finally:
        if saved is not None:
            for p, d in zip(params, saved):
                p.data = d
    return worst
