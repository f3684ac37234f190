"""Reverse-mode automatic differentiation over dense numpy tensors.

The engine is define-by-run: every operation records a node on a tape
(the creator `Function` of its output tensor) and `backward()` walks the
tape in reverse creation order, which is a valid topological order and
is deterministic for a fixed program.

Conventions:
  * default dtype is float32; float64 tensors are supported and are used
    on the rate/verification paths where tight tolerances matter,
  * reductions accumulate in float64 in fixed index order,
  * images and feature maps are channel-last (B, H, W, C).
"""

import numpy as np
from scipy import special as _special

DEFAULT_DTYPE = np.float32

_CHECK_FINITE = True


def set_check_finite(enabled):
    """Toggle the per-op non-finite output check (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class AutodiffError(RuntimeError):
    pass


class NonFiniteError(AutodiffError):
    """An op produced a NaN/inf output during the forward pass."""


_serial = 0


def _next_serial():
    global _serial
    _serial += 1
    return _serial


class Tensor:
    """Dense n-d array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_ctx", "node_id", "name")

    def __init__(self, data, requires_grad=False, dtype=None, _ctx=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._ctx = _ctx
        self.node_id = _next_serial()
        self.name = None

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
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def backward(self):
        """Populate .grad on every tensor this scalar depends on."""
        if self.data.size != 1:
            raise AutodiffError("backward() requires a scalar loss tensor")
        if self._ctx is None and not self.requires_grad:
            raise AutodiffError("backward() on a tensor with no graph")

        # Reverse creation order restricted to the reachable subgraph is a
        # topological order; it is also fixed, which keeps gradient
        # accumulation order reproducible.
        topo = []
        visited = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in visited or t._ctx is None:
                continue
            visited.add(id(t))
            topo.append(t)
            stack.extend(t._ctx.inputs)
        topo.sort(key=lambda t: t.node_id, reverse=True)

        self.grad = np.ones_like(self.data)
        for t in topo:
            ctx = t._ctx
            if t.grad is None:
                continue
            grads = ctx.backward(t.grad)
            if not isinstance(grads, tuple):
                grads = (grads,)
            for inp, g in zip(ctx.inputs, grads):
                if g is None or not inp.requires_grad_path():
                    continue
                g = np.asarray(g)
                if g.dtype != inp.data.dtype:
                    g = g.astype(inp.data.dtype)
                if g.shape != inp.data.shape:
                    g = g.reshape(inp.data.shape)
                if inp.grad is None:
                    inp.grad = g.copy() if g.base is not None else g
                else:
                    inp.grad = inp.grad + g

    def requires_grad_path(self):
        return self.requires_grad or self._ctx is not None

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def astype(self, dtype):
        return cast(self, dtype)


class Parameter(Tensor):
    """Trainable tensor; `requires_grad=False` freezes it."""

    def __init__(self, data, dtype=None, name=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype if dtype is not None else None)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Function:
    """One tape node: stores inputs and whatever forward saved."""

    def __init__(self, *inputs):
        self.inputs = inputs
        self.saved = ()

    def save(self, *args):
        self.saved = args

    @classmethod
    def apply(cls, *inputs, **kwargs):
        inputs = tuple(_as_tensor(t) for t in inputs)
        ctx = cls(*inputs)
        out_data = ctx.forward(*[t.data for t in inputs], **kwargs)
        if _CHECK_FINITE and not np.all(np.isfinite(out_data)):
            raise NonFiniteError(f"{cls.__name__} produced a non-finite value")
        track = any(t.requires_grad_path() for t in inputs)
        out = Tensor(out_data, dtype=out_data.dtype, _ctx=ctx if track else None)
        return out

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops


class Add(Function):
    def forward(self, a, b):
        self.save(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        self.save(a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.saved
        return _unbroadcast(grad, sa), _unbroadcast(-grad, sb)


class Mul(Function):
    def forward(self, a, b):
        self.save(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Div(Function):
    def forward(self, a, b):
        self.save(a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        return (_unbroadcast(grad / b, a.shape),
                _unbroadcast(-grad * a / (b * b), b.shape))


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return -grad


class PowConst(Function):
    def forward(self, a, exponent=2.0):
        self.save(a, exponent)
        return a ** exponent

    def backward(self, grad):
        a, c = self.saved
        return grad * c * a ** (c - 1.0)


class Square(Function):
    def forward(self, a):
        self.save(a)
        return a * a

    def backward(self, grad):
        (a,) = self.saved
        return grad * (2.0 * a)


class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.save(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return grad * out


class Log(Function):
    def forward(self, a):
        self.save(a)
        return np.log(a)

    def backward(self, grad):
        (a,) = self.saved
        return grad / a


class Sqrt(Function):
    def forward(self, a):
        out = np.sqrt(a)
        self.save(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return grad / (2.0 * out)


class Abs(Function):
    def forward(self, a):
        self.save(np.sign(a))
        return np.abs(a)

    def backward(self, grad):
        (sign,) = self.saved
        return grad * sign


class Erfc(Function):
    def forward(self, a):
        self.save(a)
        return _special.erfc(a)

    def backward(self, grad):
        (a,) = self.saved
        return grad * (-2.0 / np.sqrt(np.pi)) * np.exp(-a * a)


class Tanh(Function):
    def forward(self, a):
        out = np.tanh(a)
        self.save(out)
        return out

    def backward(self, grad):
        (out,) = self.saved
        return grad * (1.0 - out * out)


class Sigmoid(Function):
    def forward(self, a):
        out = np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                       np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
        self.save(out)
        return out.astype(a.dtype)

    def backward(self, grad):
        (out,) = self.saved
        return grad * out * (1.0 - out)


class Softplus(Function):
    def forward(self, a):
        # log(1 + e^a), overflow-safe for large |a|
        out = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))
        self.save(a)
        return out.astype(a.dtype)

    def backward(self, grad):
        (a,) = self.saved
        sig = np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                       np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a))))
        return grad * sig


class Relu(Function):
    def forward(self, a):
        self.save(a > 0)
        return np.maximum(a, 0.0).astype(a.dtype)

    def backward(self, grad):
        (mask,) = self.saved
        return grad * mask


class LowerBound(Function):
    """max(x, bound) whose gradient still passes when it would lift x
    off the bound (keeps floored values trainable)."""

    def forward(self, a, bound=0.0):
        self.save(a >= bound)
        return np.maximum(a, bound).astype(a.dtype)

    def backward(self, grad):
        (above,) = self.saved
        return grad * (above | (grad < 0))


class Cast(Function):
    def forward(self, a, dtype=np.float64):
        self.save(a.dtype)
        return a.astype(dtype)

    def backward(self, grad):
        (src_dtype,) = self.saved
        return grad.astype(src_dtype)


# ---------------------------------------------------------------------------
# shape ops


class Reshape(Function):
    def forward(self, a, shape=None):
        self.save(a.shape)
        return a.reshape(shape)

    def backward(self, grad):
        (shape,) = self.saved
        return grad.reshape(shape)


class Transpose(Function):
    def forward(self, a, axes=None):
        if axes is None:
            axes = tuple(reversed(range(a.ndim)))
        self.save(tuple(np.argsort(axes)))
        return np.transpose(a, axes)

    def backward(self, grad):
        (inv,) = self.saved
        return np.transpose(grad, inv)


# ---------------------------------------------------------------------------
# reductions (float64 accumulation, fixed index order)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.save(a.shape, axis, keepdims)
        return np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward(self, grad):
        shape, axis, keepdims = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return np.broadcast_to(grad, shape)


class Mean(Function):
    def forward(self, a, axis=None, keepdims=False):
        out = np.mean(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
        self.save(a.shape, axis, keepdims, a.size / max(out.size, 1))
        return out

    def backward(self, grad):
        shape, axis, keepdims, n = self.saved
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return np.broadcast_to(grad, shape) / n


# ---------------------------------------------------------------------------
# linear algebra


class MatMul(Function):
    def forward(self, a, b):
        self.save(a, b)
        return a @ b

    def backward(self, grad):
        a, b = self.saved
        ga = grad @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ grad
        if ga.shape != a.shape:
            ga = _unbroadcast(ga, a.shape)
        if gb.shape != b.shape:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb


# ---------------------------------------------------------------------------
# convolutions (NHWC, weights (KH, KW, Cin, Cout))


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    # one strided gather instead of kh*kw slice copies
    b, _, _, c = xp.shape
    sb, srow, scol, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(b, oh, ow, kh, kw, c),
        strides=(sb, srow * sh, scol * sw, srow, scol, sc), writeable=False)
    return np.ascontiguousarray(view)


def _col2im(cols, xp_shape, sh, sw):
    b, oh, ow, kh, kw, c = cols.shape
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += cols[:, :, :, i, j, :]
    return xp


class Conv2d(Function):
    def forward(self, x, w, b=None, stride=1, padding=0):
        sh = sw = int(stride)
        p = int(padding)
        kh, kw, cin, cout = w.shape
        if x.shape[-1] != cin:
            raise AutodiffError(
                f"conv2d channel mismatch: input has {x.shape[-1]}, kernel expects {cin}")
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        oh = (xp.shape[1] - kh) // sh + 1
        ow = (xp.shape[2] - kw) // sw + 1
        if oh <= 0 or ow <= 0:
            raise AutodiffError("conv2d output would be empty for this input size")
        cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
        cols_mat = cols.reshape(-1, kh * kw * cin)
        out = cols_mat @ w.reshape(-1, cout)
        if b is not None:
            out += b
        self.save(cols_mat, w, x.shape, sh, sw, p, b is not None)
        return out.reshape(x.shape[0], oh, ow, cout)

    def backward(self, grad):
        cols_mat, w, x_shape, sh, sw, p, has_bias = self.saved
        kh, kw, cin, cout = w.shape
        b, h, wdt, _ = x_shape
        oh, ow = grad.shape[1], grad.shape[2]
        grad_mat = grad.reshape(-1, cout)
        gw = (cols_mat.T @ grad_mat).reshape(w.shape)
        gb = grad_mat.sum(axis=0, dtype=np.float64).astype(grad.dtype) if has_bias else None
        dcols = (grad_mat @ w.reshape(-1, cout).T).reshape(b, oh, ow, kh, kw, cin)
        xp_shape = (b, h + 2 * p, wdt + 2 * p, cin)
        dxp = _col2im(dcols, xp_shape, sh, sw)
        dx = dxp[:, p:p + h, p:p + wdt, :] if p else dxp
        if has_bias:
            return dx, gw, gb
        return dx, gw


class ConvTranspose2d(Function):
    def forward(self, x, w, b=None, stride=1, padding=0, output_padding=0):
        sh = sw = int(stride)
        p = int(padding)
        op = int(output_padding)
        kh, kw, cout, cin = w.shape
        if x.shape[-1] != cin:
            raise AutodiffError(
                f"conv_transpose2d channel mismatch: input has {x.shape[-1]}, kernel expects {cin}")
        bsz, h, wdt, _ = x.shape
        oh = (h - 1) * sh + kh - 2 * p + op
        ow = (wdt - 1) * sw + kw - 2 * p + op
        x_mat = x.reshape(-1, cin)
        cols = (x_mat @ w.reshape(-1, cin).T).reshape(bsz, h, wdt, kh, kw, cout)
        outp = _col2im(cols, (bsz, oh + 2 * p, ow + 2 * p, cout), sh, sw)
        out = outp[:, p:p + oh, p:p + ow, :] if p else outp
        if b is not None:
            out = out + b
        self.save(x_mat, w, x.shape, sh, sw, p, b is not None)
        return out

    def backward(self, grad):
        x_mat, w, x_shape, sh, sw, p, has_bias = self.saved
        kh, kw, cout, cin = w.shape
        bsz, h, wdt, _ = x_shape
        gb = grad.sum(axis=(0, 1, 2), dtype=np.float64).astype(grad.dtype) if has_bias else None
        gradp = np.pad(grad, ((0, 0), (p, p), (p, p), (0, 0))) if p else grad
        # pad bottom/right so strided gathering always fits
        need_h = kh + sh * (h - 1) - gradp.shape[1]
        need_w = kw + sw * (wdt - 1) - gradp.shape[2]
        if need_h > 0 or need_w > 0:
            gradp = np.pad(gradp, ((0, 0), (0, max(need_h, 0)), (0, max(need_w, 0)), (0, 0)))
        dcols = _im2col(gradp, kh, kw, sh, sw, h, wdt)
        dcols_mat = dcols.reshape(-1, kh * kw * cout)
        dx = (dcols_mat @ w.reshape(-1, cin)).reshape(x_shape)
        gw = (dcols_mat.T @ x_mat).reshape(w.shape)
        if has_bias:
            return dx, gw, gb
        return dx, gw


# ---------------------------------------------------------------------------
# fused losses


class SoftmaxCrossEntropy(Function):
    """Per-sample -log softmax(logits)[label]; fused for stability."""

    def forward(self, logits, labels=None):
        labels = np.asarray(labels, dtype=np.int64)
        m = logits.max(axis=1, keepdims=True)
        z = logits - m
        lse = np.log(np.sum(np.exp(z), axis=1, dtype=np.float64)).astype(logits.dtype)
        loss = lse - z[np.arange(len(labels)), labels]
        self.save(z, lse, labels)
        return loss

    def backward(self, grad):
        z, lse, labels = self.saved
        probs = np.exp(z - lse[:, None])
        probs[np.arange(len(labels)), labels] -= 1.0
        return probs * grad[:, None]


# ---------------------------------------------------------------------------
# functional wrappers


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def pow_const(a, exponent):
    return PowConst.apply(a, exponent=exponent)


def square(a):
    return Square.apply(a)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def sqrt(a):
    return Sqrt.apply(a)


def abs_(a):
    return Abs.apply(a)


def erfc(a):
    return Erfc.apply(a)


def tanh(a):
    return Tanh.apply(a)


def sigmoid(a):
    return Sigmoid.apply(a)


def softplus(a):
    return Softplus.apply(a)


def relu(a):
    return Relu.apply(a)


def lower_bound(a, bound):
    return LowerBound.apply(a, bound=float(bound))


def cast(a, dtype):
    return Cast.apply(a, dtype=dtype)


def reshape(a, shape):
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a, axes=None):
    return Transpose.apply(a, axes=axes)


def sum_(a, axis=None, keepdims=False):
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def matmul(a, b):
    return MatMul.apply(a, b)


def conv2d(x, w, b=None, stride=1, padding=0):
    if b is None:
        return Conv2d.apply(x, w, stride=stride, padding=padding)
    return Conv2d.apply(x, w, b, stride=stride, padding=padding)


def conv_transpose2d(x, w, b=None, stride=1, padding=0, output_padding=0):
    if b is None:
        return ConvTranspose2d.apply(x, w, stride=stride, padding=padding,
                                     output_padding=output_padding)
    return ConvTranspose2d.apply(x, w, b, stride=stride, padding=padding,
                                 output_padding=output_padding)


def softmax_cross_entropy(logits, labels):
    return SoftmaxCrossEntropy.apply(logits, labels=np.asarray(labels))


def gdn(x, beta, gamma):
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), channel-last x.

    `gamma` is (C, C) with row i weighting the squared channels feeding
    output channel i; `beta` is (C,). Callers are responsible for the
    positivity constraints (see codec.GDNLayer).
    """
    c = x.shape[-1]
    flat = reshape(x, (-1, c))
    norm = matmul(square(flat), transpose(gamma)) + beta
    out = flat / sqrt(norm)
    return reshape(out, x.shape)


def igdn(x, beta, gamma):
    """Approximate GDN inverse: multiplies by the norm instead of dividing."""
    c = x.shape[-1]
    flat = reshape(x, (-1, c))
    norm = matmul(square(flat), transpose(gamma)) + beta
    out = flat * sqrt(norm)
    return reshape(out, x.shape)


# ---------------------------------------------------------------------------
# module system


class Module:
    """Composable parameter container in the style of small numpy nets."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if prefix else attr
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def set_trainable(self, trainable):
        for p in self.parameters():
            p.requires_grad = bool(trainable)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def parameter_grads(params):
    """name -> gradient array; zeros for parameters backward never reached."""
    out = {}
    for name, p in params:
        out[name] = np.zeros_like(p.data) if p.grad is None else p.grad
    return out
