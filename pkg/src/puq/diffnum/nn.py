"""Layer ops used by the denoiser and the fitting MLP."""

from __future__ import annotations

import numpy as np

from .rng import RngStream
from .tensor import ShapeError, Tensor, make_node


def _im2col(x: np.ndarray) -> np.ndarray:
    # (B, C, H, W) -> (B, C*9, H*W), zero "same" padding
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, 3 * i + j] = xp[:, :, i : i + h, j : j + w]
    return cols.reshape(b, c * 9, h * w)


def _col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    b = cols.shape[0]
    cols = cols.reshape(b, c, 3, 3, h, w)
    xp = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            xp[:, :, i : i + h, j : j + w] += cols[:, :, i, j]
    return xp[:, :, 1:-1, 1:-1]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3, stride 1, zero-padded convolution (cross-correlation)."""
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be (B, C, H, W), got {x.shape}")
    b, cin, h, w = x.shape
    cout = weight.shape[0]
    if weight.shape != (cout, cin, 3, 3):
        raise ShapeError(
            f"conv2d weight {weight.shape} incompatible with input channels {cin} (need (Cout, {cin}, 3, 3))"
        )
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias {bias.shape} != ({cout},)")

    cols = _im2col(x.data)
    wmat = weight.data.reshape(cout, cin * 9)
    out = np.matmul(wmat, cols) + bias.data[None, :, None]
    out = out.reshape(b, cout, h, w)

    def bw(g):
        g2 = g.reshape(b, cout, h * w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im(np.matmul(wmat.T, g2), cin, h, w)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    return make_node(out, (x, weight, bias), bw, "conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for x of shape (B, Din)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def bw(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return make_node(out, (x, weight, bias), bw, "linear")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_node(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def dropout(x: Tensor, p: float, rng: RngStream | None, active: bool = True) -> Tensor:
    """Inverted dropout: zero each element with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not active or p == 0.0:
        return x
    if rng is None:
        raise ValueError("active dropout needs an RngStream")
    keep = rng.random(x.shape, dtype=np.float32) >= p
    scale = (keep / (1.0 - p)).astype(x.dtype)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared differences; ``target`` may be a Tensor or array."""
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != td.shape:
        raise ShapeError(f"mse_loss: shape mismatch {pred.shape} vs {td.shape}")
    diff = pred.data - td
    n = diff.size
    loss = np.asarray(np.mean(diff * diff), dtype=pred.dtype)
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)

    def bw(g):
        gp = (2.0 / n) * g * diff
        return (gp, -gp) if len(parents) == 2 else (gp,)

    return make_node(loss, parents, bw, "mse")
