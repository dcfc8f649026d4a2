"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine records a pure DAG during the forward pass (no in-place
mutation of forward values) and walks it in reverse topological order on
``backward``.  Only the operations the yield model needs are provided:
2-D convolution, transposed convolution, affine (dense) layers, ReLU,
sigmoid, mean-squared-error, concatenation, flattening and the scalar
arithmetic required to combine losses.

Convolutions accept a single example ``[C, H, W]`` or a batch
``[N, C, H, W]``; dense layers accept ``[n]`` or ``[N, n]``.  Everything
is float64: desk-scale sizes make speed a non-issue and the
finite-difference gradient checks need the headroom.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit


class Tensor:
    """N-dimensional float64 array, optionally tracked on the gradient tape.

    Gradients accumulate into ``grad`` across ``backward`` calls until
    explicitly cleared with ``zero_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` of every reachable tracked tensor with d(self)/d(tensor).

        ``self`` must be a scalar (shape ``()``).
        """
        if self.data.shape != ():
            raise ValueError(
                f"backward requires a scalar tensor, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(topo):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter:
    """A named, gradient-tracked tensor. Names are unique within a model."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.data.shape

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _make(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    """Wrap an op result; attach tape bookkeeping only if some input is tracked."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# conv primitives on raw arrays (shared by conv2d and transposed_conv2d)

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """[N,C,Hp,Wp] padded input -> columns [N, oh*ow, C*k*k]."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp,
        shape=(n, c, oh, ow, k, k),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
    )
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * k * k)


def _col2im(dcols: np.ndarray, n: int, c: int, hp: int, wp: int,
            k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Scatter-add columns [N, oh*ow, C*k*k] back onto a padded [N,C,Hp,Wp] grid."""
    dxp = np.zeros((n, c, hp, wp), dtype=np.float64)
    d6 = dcols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += d6[:, :, ki, kj]
    return dxp


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    oh, ow = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = _im2col(xp, k, stride, oh, ow)
    y = cols @ w.reshape(co, -1).T
    return y.transpose(0, 2, 1).reshape(n, co, oh, ow), cols


def _conv_bwd_data(dy: np.ndarray, w: np.ndarray, stride: int, pad: int,
                   h: int, wd: int) -> np.ndarray:
    """Gradient of conv w.r.t. its input; also the forward map of transposed conv."""
    n, co, oh, ow = dy.shape
    ci, k = w.shape[1], w.shape[2]
    dcols = dy.transpose(0, 2, 3, 1).reshape(n, oh * ow, co) @ w.reshape(co, -1)
    dxp = _col2im(dcols, n, ci, h + 2 * pad, wd + 2 * pad, k, stride, oh, ow)
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def _conv_bwd_weight(cols: np.ndarray, dy: np.ndarray, wshape) -> np.ndarray:
    n, co, oh, ow = dy.shape
    dy_r = dy.transpose(0, 2, 3, 1).reshape(n, oh * ow, co)
    dw = np.tensordot(dy_r, cols, axes=([0, 1], [0, 1]))
    return dw.reshape(wshape)


def _as_batched(x: Tensor, opname: str):
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ValueError(f"{opname}: input must be [C,H,W] or [N,C,H,W], got {x.shape}")


# ---------------------------------------------------------------------------
# differentiable operations

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``kernel`` is ``[C_out, C_in, k, k]``; output spatial size is
    ``floor((H + 2*pad - k)/stride) + 1`` per side.
    """
    xb, single = _as_batched(x, "conv2d")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"conv2d: kernel must be [C_out,C_in,k,k], got {kernel.shape}")
    co, ci, k, _ = kernel.shape
    n, c, h, w = xb.shape
    if c != ci:
        raise ValueError(
            f"conv2d: input has {c} channels but kernel expects {ci} "
            f"(input {x.shape}, kernel {kernel.shape})"
        )
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ValueError(f"conv2d: kernel size {k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias.shape != (co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({co},)")

    y, cols = _conv_fwd(xb, kernel.data, stride, pad)
    y += bias.data[None, :, None, None]
    out_data = y[0] if single else y

    def grad_fn(g: np.ndarray) -> None:
        gb = g[None] if single else g
        if kernel.requires_grad:
            kernel._accumulate(_conv_bwd_weight(cols, gb, kernel.shape))
        if bias.requires_grad:
            bias._accumulate(gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dx = _conv_bwd_data(gb, kernel.data, stride, pad, h, w)
            x._accumulate(dx[0] if single else dx)

    return _make(out_data, (x, kernel, bias), grad_fn)


def transposed_conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
                      pad: int = 0, output_pad: int = 0) -> Tensor:
    """Transposed 2-D convolution (fractionally strided upsampling).

    ``kernel`` is ``[C_in, C_out, k, k]``; output spatial size is
    ``(H - 1)*stride - 2*pad + k + output_pad`` per side.
    """
    if output_pad >= stride:
        raise ValueError(f"transposed_conv2d: output_pad {output_pad} must be < stride {stride}")
    xb, single = _as_batched(x, "transposed_conv2d")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValueError(f"transposed_conv2d: kernel must be [C_in,C_out,k,k], got {kernel.shape}")
    ci, co, k, _ = kernel.shape
    n, c, h, w = xb.shape
    if c != ci:
        raise ValueError(
            f"transposed_conv2d: input has {c} channels but kernel expects {ci} "
            f"(input {x.shape}, kernel {kernel.shape})"
        )
    if bias.shape != (co,):
        raise ValueError(f"transposed_conv2d: bias shape {bias.shape} != ({co},)")
    oh = (h - 1) * stride - 2 * pad + k + output_pad
    ow = (w - 1) * stride - 2 * pad + k + output_pad

    # Forward of a transposed conv is the data-gradient of the matching conv.
    y = _conv_bwd_data(xb, kernel.data, stride, pad, oh, ow)
    y += bias.data[None, :, None, None]
    out_data = y[0] if single else y

    def grad_fn(g: np.ndarray) -> None:
        gb = g[None] if single else g
        need_cols = kernel.requires_grad
        if x.requires_grad or need_cols:
            gp = np.pad(gb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else gb
            cols_big = _im2col(gp, k, stride, h, w)
            if x.requires_grad:
                dx = (cols_big @ kernel.data.reshape(ci, -1).T).transpose(0, 2, 1).reshape(n, ci, h, w)
                x._accumulate(dx[0] if single else dx)
            if need_cols:
                x_r = xb.transpose(0, 2, 3, 1).reshape(n, h * w, ci)
                dk = np.tensordot(x_r, cols_big, axes=([0, 1], [0, 1]))
                kernel._accumulate(dk.reshape(kernel.shape))
        if bias.requires_grad:
            bias._accumulate(gb.sum(axis=(0, 2, 3)))

    return _make(out_data, (x, kernel, bias), grad_fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weight @ x + bias`` for ``x`` of shape [n] or [N, n]."""
    if weight.ndim != 2:
        raise ValueError(f"dense: weight must be 2-D [m,n], got {weight.shape}")
    m, n_in = weight.shape
    if x.ndim not in (1, 2) or x.shape[-1] != n_in:
        raise ValueError(
            f"dense: input shape {x.shape} incompatible with weight {weight.shape}"
        )
    if bias.shape != (m,):
        raise ValueError(f"dense: bias shape {bias.shape} != ({m},)")
    single = x.ndim == 1
    xb = x.data[None] if single else x.data
    y = xb @ weight.data.T + bias.data
    out_data = y[0] if single else y

    def grad_fn(g: np.ndarray) -> None:
        gb = g[None] if single else g
        if weight.requires_grad:
            weight._accumulate(gb.T @ xb)
        if bias.requires_grad:
            bias._accumulate(gb.sum(axis=0))
        if x.requires_grad:
            dx = gb @ weight.data
            x._accumulate(dx[0] if single else dx)

    return _make(out_data, (x, weight, bias), grad_fn)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def grad_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * (x.data > 0.0))

    return _make(y, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def grad_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * y * (1.0 - y))

    return _make(y, (x,), grad_fn)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if a.shape != b.shape:
        raise ValueError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = max(diff.size, 1)
    y = np.asarray((diff * diff).sum() / n)

    def grad_fn(g: np.ndarray) -> None:
        scale = 2.0 * g / n
        if a.requires_grad:
            a._accumulate(scale * diff)
        if b.requires_grad:
            b._accumulate(-scale * diff)

    return _make(y, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    y = a.data + b.data

    def grad_fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(y, (a, b), grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    y = x.data * c

    def grad_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * c)

    return _make(y, (x,), grad_fn)


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis (axis 0 for [C,H,W], 1 for [N,C,H,W])."""
    if not tensors:
        raise ValueError("concat_channels: empty input list")
    nd = tensors[0].ndim
    if nd not in (3, 4) or any(t.ndim != nd for t in tensors):
        raise ValueError(f"concat_channels: all inputs must share rank 3 or 4, got {[t.shape for t in tensors]}")
    axis = 0 if nd == 3 else 1
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = (slice(None),) * axis + (slice(lo, hi),)
                t._accumulate(g[idx])

    return _make(y, tuple(tensors), grad_fn)


def squeeze_last(x: Tensor) -> Tensor:
    """Drop a trailing singleton axis: [N,1] -> [N], [1] -> scalar."""
    if x.ndim == 0 or x.shape[-1] != 1:
        raise ValueError(f"squeeze_last: trailing axis of {x.shape} is not 1")
    y = x.data.reshape(x.shape[:-1])

    def grad_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return _make(y, (x,), grad_fn)


def flatten(x: Tensor) -> Tensor:
    """[C,H,W] -> [C*H*W]; [N,C,H,W] -> [N, C*H*W]."""
    if x.ndim == 4:
        y = x.data.reshape(x.shape[0], -1)
    else:
        y = x.data.reshape(-1)

    def grad_fn(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return _make(y, (x,), grad_fn)
