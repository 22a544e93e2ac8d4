"""Differentiable array operations.

Exactly the ops the desmoking model needs: direct 2-D convolution (im2col
windows + GEMM, no frequency-domain path), transposed convolution, 2x2 max
pooling, relu/sigmoid/softplus, elementwise arithmetic with scalar broadcast,
channel concat/broadcast, and a full mean reduction.

Every op validates shapes eagerly, computes its forward with numpy, and, when
a graph is recording and an input requires grad, registers a closure mapping
the output gradient back to input gradients.  Gradients are skipped for
inputs that do not require them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ulw.autodiff.tensor import Tensor, active_graph, debug_checks_enabled
from ulw.errors import NumericError, ShapeError, UsageError


def _emit(kind: str, inputs: tuple, out_data: np.ndarray, backward_fn) -> Tensor:
    out = Tensor(out_data)
    if debug_checks_enabled() and not np.all(np.isfinite(out.data)):
        raise NumericError(f"{kind}: non-finite values in output")
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(kind, inputs, out, backward_fn)
    return out


def _require_tensor(kind: str, t, ndim: int | None = None, name: str = "input") -> None:
    if not isinstance(t, Tensor):
        raise UsageError(f"{kind}: {name} must be a Tensor, got {type(t).__name__}")
    if ndim is not None and t.data.ndim != ndim:
        raise ShapeError(f"{kind}: {name} must be {ndim}-d, got shape {t.shape}")


def _require_same_dtype(kind: str, *tensors: Tensor) -> np.dtype:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise UsageError(f"{kind}: mixed dtypes {sorted(str(d) for d in dtypes)}")
    return tensors[0].dtype


def _pad2d(arr: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return arr
    fill = "constant" if mode == "zeros" else "edge"
    return np.pad(arr, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=fill)


def _unpad2d_grad(gpad: np.ndarray, pad: int, mode: str, height: int, width: int) -> np.ndarray:
    """Adjoint of _pad2d: slice for zero fill, fold borders back for edge fill."""
    if pad == 0:
        return gpad
    p = pad
    core = gpad[:, :, p:p + height, p:p + width]
    if mode == "zeros":
        return core
    core = core.copy()
    core[:, :, 0, :] += gpad[:, :, :p, p:p + width].sum(axis=2)
    core[:, :, -1, :] += gpad[:, :, p + height:, p:p + width].sum(axis=2)
    core[:, :, :, 0] += gpad[:, :, p:p + height, :p].sum(axis=3)
    core[:, :, :, -1] += gpad[:, :, p:p + height, p + width:].sum(axis=3)
    core[:, :, 0, 0] += gpad[:, :, :p, :p].sum(axis=(2, 3))
    core[:, :, 0, -1] += gpad[:, :, :p, p + width:].sum(axis=(2, 3))
    core[:, :, -1, 0] += gpad[:, :, p + height:, :p].sum(axis=(2, 3))
    core[:, :, -1, -1] += gpad[:, :, p + height:, p + width:].sum(axis=(2, 3))
    return core


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, *, stride: int = 1,
           padding: str = "same", pad_mode: str = "zeros", groups: int = 1) -> Tensor:
    """2-D cross-correlation over an NCHW batch.

    weight is [C_out, C_in // groups, k, k] with k odd and square.  "same"
    padding pads k//2 per side (so stride 1 preserves H and W); "valid" pads
    nothing.  pad_mode picks the fill for same padding: "zeros" or "edge"
    (replicate the border pixel).
    """
    _require_tensor("conv2d", x, ndim=4)
    _require_tensor("conv2d", weight, ndim=4, name="weight")
    n, c, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if k % 2 != 1:
        raise ShapeError(f"conv2d: kernel size {k} must be odd")
    if stride < 1:
        raise UsageError(f"conv2d: stride must be >= 1, got {stride}")
    if padding not in ("same", "valid"):
        raise UsageError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    if pad_mode not in ("zeros", "edge"):
        raise UsageError(f"conv2d: pad_mode must be 'zeros' or 'edge', got {pad_mode!r}")
    if groups < 1 or c % groups != 0 or c_out % groups != 0:
        raise ShapeError(
            f"conv2d: groups={groups} must divide input channels {c} and output channels {c_out}")
    if c_in_g != c // groups:
        raise ShapeError(
            f"conv2d: kernel expects {c_in_g} input channels per group, input provides {c // groups}")
    if bias is not None:
        _require_tensor("conv2d", bias, ndim=1, name="bias")
        if bias.shape[0] != c_out:
            raise ShapeError(f"conv2d: bias length {bias.shape[0]} != output channels {c_out}")
        _require_same_dtype("conv2d", x, weight, bias)
    else:
        _require_same_dtype("conv2d", x, weight)
    pad = k // 2 if padding == "same" else 0
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(
            f"conv2d: spatial size {h}x{w} too small for kernel {k} with {padding} padding")

    xp = _pad2d(x.data, pad, pad_mode)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = win.shape[2], win.shape[3]
    cg_in, cg_out = c // groups, c_out // groups
    out = np.empty((n, c_out, h_out, w_out), dtype=x.dtype)
    for gi in range(groups):
        isl = slice(gi * cg_in, (gi + 1) * cg_in)
        osl = slice(gi * cg_out, (gi + 1) * cg_out)
        acc = np.tensordot(win[:, isl], weight.data[osl], axes=([1, 4, 5], [1, 2, 3]))
        out[:, osl] = np.moveaxis(acc, 3, 1)
    if bias is not None:
        out += bias.data.reshape(1, c_out, 1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad
    need_b = bias is not None and bias.requires_grad
    w_data = weight.data

    def backward_fn(gout: np.ndarray):
        gx = gw = gb = None
        if need_b:
            gb = gout.sum(axis=(0, 2, 3))
        if need_w:
            gw = np.empty_like(w_data)
            for gi in range(groups):
                isl = slice(gi * cg_in, (gi + 1) * cg_in)
                osl = slice(gi * cg_out, (gi + 1) * cg_out)
                gw[osl] = np.tensordot(gout[:, osl], win[:, isl], axes=([0, 2, 3], [0, 2, 3]))
        if need_x:
            gxp = np.zeros_like(xp)
            for gi in range(groups):
                isl = slice(gi * cg_in, (gi + 1) * cg_in)
                osl = slice(gi * cg_out, (gi + 1) * cg_out)
                for u in range(k):
                    ru = slice(u, u + stride * (h_out - 1) + 1, stride)
                    for v in range(k):
                        rv = slice(v, v + stride * (w_out - 1) + 1, stride)
                        contrib = np.tensordot(gout[:, osl], w_data[osl, :, u, v], axes=([1], [0]))
                        gxp[:, isl, ru, rv] += np.moveaxis(contrib, 3, 1)
            gx = _unpad2d_grad(gxp, pad, pad_mode, h, w)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb)
        return tuple(grads)

    return _emit("conv2d", inputs, out, backward_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, *, stride: int = 2) -> Tensor:
    """Transposed 2-D convolution, the exact adjoint of a valid strided conv2d.

    weight is [C_in, C_out, k, k]; output spatial size is (H-1)*stride + k,
    which doubles H and W for the default stride=2 with k=2.
    """
    _require_tensor("conv_transpose2d", x, ndim=4)
    _require_tensor("conv_transpose2d", weight, ndim=4, name="weight")
    n, c, h, w = x.shape
    c_in_w, c_out, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv_transpose2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if stride not in (1, 2):
        raise UsageError(f"conv_transpose2d: stride must be 1 or 2, got {stride}")
    if stride == 2 and k % 2 != 0:
        raise ShapeError(f"conv_transpose2d: kernel size {k} must be even for stride 2")
    if c_in_w != c:
        raise ShapeError(
            f"conv_transpose2d: kernel expects {c_in_w} input channels, input has {c}")
    _require_same_dtype("conv_transpose2d", x, weight)

    h_out, w_out = (h - 1) * stride + k, (w - 1) * stride + k
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    w_data = weight.data
    for u in range(k):
        for v in range(k):
            contrib = np.tensordot(x.data, w_data[:, :, u, v], axes=([1], [0]))
            out[:, :, u:u + stride * (h - 1) + 1:stride,
                v:v + stride * (w - 1) + 1:stride] += np.moveaxis(contrib, 3, 1)

    need_x, need_w = x.requires_grad, weight.requires_grad
    x_data = x.data

    def backward_fn(gout: np.ndarray):
        gwin = sliding_window_view(gout, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        gx = gw = None
        if need_x:
            gx = np.moveaxis(np.tensordot(gwin, w_data, axes=([1, 4, 5], [1, 2, 3])), 3, 1)
        if need_w:
            gw = np.tensordot(x_data, gwin, axes=([0, 2, 3], [0, 2, 3]))
        return (gx, gw)

    return _emit("conv_transpose2d", (x, weight), out, backward_fn)


def max_pool2d(x: Tensor, window: int = 2) -> Tensor:
    """2x2 max pooling with stride 2.  Ties route the gradient to the first
    maximum in row-major order within the window."""
    _require_tensor("max_pool2d", x, ndim=4)
    if window != 2:
        raise UsageError(f"max_pool2d: only window=2 is supported, got {window}")
    n, c, h, w = x.shape
    if h % 2 != 0:
        raise ShapeError(f"max_pool2d: height {h} must be even")
    if w % 2 != 0:
        raise ShapeError(f"max_pool2d: width {w} must be even")
    hh, wh = h // 2, w // 2
    blocks = x.data.reshape(n, c, hh, 2, wh, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, wh, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward_fn(gout: np.ndarray):
        gblocks = np.zeros((n, c, hh, wh, 4), dtype=gout.dtype)
        np.put_along_axis(gblocks, idx[..., None], gout[..., None], axis=-1)
        gx = gblocks.reshape(n, c, hh, wh, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _emit("max_pool2d", (x,), out, backward_fn)


def relu(x: Tensor) -> Tensor:
    _require_tensor("relu", x)
    out = np.maximum(x.data, 0)
    x_data = x.data

    def backward_fn(gout: np.ndarray):
        return (gout * (x_data > 0),)

    return _emit("relu", (x,), out, backward_fn)


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic function (finite out to x = +-100 and beyond)."""
    _require_tensor("sigmoid", x)
    out = _sigmoid_array(x.data)
    out_data = out

    def backward_fn(gout: np.ndarray):
        return (gout * out_data * (1.0 - out_data),)

    return _emit("sigmoid", (x,), out, backward_fn)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) computed without overflow; gradient is sigmoid(x)."""
    _require_tensor("softplus", x)
    xd = x.data
    out = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))

    def backward_fn(gout: np.ndarray):
        return (gout * _sigmoid_array(xd),)

    return _emit("softplus", (x,), out, backward_fn)


def _coerce_operand(kind: str, value, dtype) -> tuple[np.ndarray, Tensor | None]:
    """Returns (array, tensor-or-None).  Python scalars become 0-d arrays."""
    if isinstance(value, Tensor):
        return value.data, value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return np.asarray(value, dtype=dtype), None
    raise UsageError(f"{kind}: operand must be a Tensor or a scalar, got {type(value).__name__}")


def _binary_shapes(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise ShapeError(
        f"{kind}: operands need identical shapes or a scalar, got {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Collapse a broadcast gradient back to a scalar operand's shape."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _binary(kind: str, a, b, forward, grad_a, grad_b) -> Tensor:
    dtype = a.dtype if isinstance(a, Tensor) else (b.dtype if isinstance(b, Tensor) else np.float32)
    av, at = _coerce_operand(kind, a, dtype)
    bv, bt = _coerce_operand(kind, b, dtype)
    if at is not None and bt is not None:
        _require_same_dtype(kind, at, bt)
    _binary_shapes(kind, av, bv)
    out = forward(av, bv)
    inputs = tuple(t for t in (at, bt) if t is not None)
    need_a = at is not None and at.requires_grad
    need_b = bt is not None and bt.requires_grad

    def backward_fn(gout: np.ndarray):
        grads = []
        if at is not None:
            grads.append(_reduce_to(grad_a(gout, av, bv), av.shape) if need_a else None)
        if bt is not None:
            grads.append(_reduce_to(grad_b(gout, av, bv), bv.shape) if need_b else None)
        return tuple(grads)

    return _emit(kind, inputs, out, backward_fn)


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda av, bv: av + bv,
                   lambda g, av, bv: g,
                   lambda g, av, bv: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda av, bv: av - bv,
                   lambda g, av, bv: g,
                   lambda g, av, bv: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda av, bv: av * bv,
                   lambda g, av, bv: g * bv,
                   lambda g, av, bv: g * av)


def div(a, b) -> Tensor:
    def forward(av, bv):
        if np.any(bv == 0):
            raise NumericError("div: zero denominator")
        return av / bv

    return _binary("div", a, b, forward,
                   lambda g, av, bv: g / bv,
                   lambda g, av, bv: -g * av / (bv * bv))


def square(a: Tensor) -> Tensor:
    _require_tensor("square", a)
    av = a.data
    out = av * av

    def backward_fn(gout: np.ndarray):
        return (2.0 * av * gout,)

    return _emit("square", (a,), out, backward_fn)


def broadcast_to_channels(t: Tensor, shape: tuple) -> Tensor:
    """Expand a per-channel vector [C] to a full [N,C,H,W] map.

    The gradient sums back over batch and spatial axes.
    """
    _require_tensor("broadcast_to_channels", t, ndim=1)
    if len(shape) != 4:
        raise ShapeError(f"broadcast_to_channels: target shape must be 4-d, got {shape}")
    if shape[1] != t.shape[0]:
        raise ShapeError(
            f"broadcast_to_channels: vector length {t.shape[0]} != target channels {shape[1]}")
    out = np.ascontiguousarray(np.broadcast_to(t.data.reshape(1, -1, 1, 1), shape))

    def backward_fn(gout: np.ndarray):
        return (gout.sum(axis=(0, 2, 3)),)

    return _emit("broadcast_to_channels", (t,), out, backward_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    _require_tensor("concat_channels", a, ndim=4)
    _require_tensor("concat_channels", b, ndim=4, name="second input")
    _require_same_dtype("concat_channels", a, b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels: non-channel dims must match, got {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    ca = a.shape[1]
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward_fn(gout: np.ndarray):
        ga = gout[:, :ca] if need_a else None
        gb = gout[:, ca:] if need_b else None
        return (ga, gb)

    return _emit("concat_channels", (a, b), out, backward_fn)


def reduce_mean(x: Tensor) -> Tensor:
    """Mean over all elements, returned as a 0-d scalar tensor."""
    _require_tensor("reduce_mean", x)
    if x.size == 0:
        raise ShapeError("reduce_mean: empty tensor")
    out = np.asarray(x.data.mean(), dtype=x.dtype)
    shape, count = x.shape, x.size

    def backward_fn(gout: np.ndarray):
        return (np.full(shape, gout / count, dtype=gout.dtype),)

    return _emit("reduce_mean", (x,), out, backward_fn)


# Arithmetic sugar so model and loss code reads like math.
Tensor.__add__ = add
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = lambda self, other: div(other, self)
Tensor.__neg__ = lambda self: mul(self, -1.0)
