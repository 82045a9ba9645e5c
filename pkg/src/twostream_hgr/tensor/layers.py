"""Layer primitives shared by both streams."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError, Tensor, _result


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def temporal_conv(x: Tensor, kernel: Tensor, stride_t: int = 1) -> Tensor:
    """Convolve along the time axis, independently per node.

    ``x`` is (C_in, T, J) or (B, C_in, T, J); ``kernel`` is (C_out, C_in, k_t).
    Zero padding keeps ``ceil(T / stride_t)`` output frames: ``k_t // 2`` in
    front and the remainder behind.
    """
    if stride_t < 1:
        raise ValueError("stride_t must be positive")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernel.ndim != 3:
        raise ShapeError(f"temporal_conv shapes: x {x.shape}, kernel {kernel.shape}")
    B, C, T, J = xd.shape
    if min(B, C, T, J) == 0:
        raise ShapeError("temporal_conv on a zero-extent input")
    O, Ck, k = kernel.shape
    if Ck != C:
        raise ShapeError(f"kernel expects {Ck} input channels, got {C}")

    T_out = -(-T // stride_t)
    pad_front = k // 2
    span = stride_t * (T_out - 1) + 1
    padded_len = max(T + k - 1, span + k - 1)
    xp = np.zeros((B, C, padded_len, J), dtype=xd.dtype)
    xp[:, :, pad_front:pad_front + T] = xd
    # cols[b, c, i, t, j] = xp[b, c, t * stride + i, j]
    cols = np.stack([xp[:, :, i:i + span:stride_t] for i in range(k)], axis=2)
    cols2 = cols.reshape(B, C * k, T_out * J)
    w2 = kernel.data.reshape(O, C * k)
    out = np.matmul(w2, cols2).reshape(B, O, T_out, J)

    def backward(g):
        g2 = g.reshape(B, O, T_out * J)
        gk = None
        gx = None
        if kernel.requires_grad:
            gk = np.tensordot(g2, cols2, axes=([0, 2], [0, 2])).reshape(O, C, k)
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(B, C, k, T_out, J)
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, :, i:i + span:stride_t] += gcols[:, :, i]
            gx = gxp[:, :, pad_front:pad_front + T]
            if squeeze:
                gx = gx[0]
        return gx, gk

    return _result(out[0] if squeeze else out, (x, kernel), backward, "temporal_conv")


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float64) -> "BatchNormState":
        return cls(
            scale=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            shift=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    @property
    def channels(self) -> int:
        return self.scale.shape[0]


def batch_norm(x: Tensor, state: BatchNormState, mode: str = "train", channel_axis: int = 1) -> Tensor:
    """Normalize each channel over every other axis.

    Train mode uses batch statistics and folds them into the running
    estimates (``running = momentum * running + (1 - momentum) * batch``);
    infer mode reads the running estimates and leaves them alone.
    """
    axis = channel_axis % x.ndim
    if x.shape[axis] != state.channels:
        raise ShapeError(f"batch_norm expects {state.channels} channels on axis {axis}, got {x.shape[axis]}")
    reduce_axes = tuple(a for a in range(x.ndim) if a != axis)
    bshape = [1] * x.ndim
    bshape[axis] = state.channels
    gamma = state.scale.data.reshape(bshape)
    beta = state.shift.data.reshape(bshape)

    if mode == "train":
        mu = x.data.mean(axis=reduce_axes, keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=reduce_axes, keepdims=True)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mu.reshape(-1)
        state.running_var = m * state.running_var + (1 - m) * var.reshape(-1)
    elif mode == "infer":
        mu = state.running_mean.reshape(bshape)
        var = state.running_var.reshape(bshape)
        centered = x.data - mu
    else:
        raise ValueError(f"unknown mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv_std
    out = xhat * gamma + beta
    n = x.data.size // state.channels

    def backward(g):
        g_scale = (g * xhat).sum(axis=reduce_axes)
        g_shift = g.sum(axis=reduce_axes)
        gxhat = g * gamma
        if mode == "train":
            gx = inv_std / n * (n * gxhat - gxhat.sum(axis=reduce_axes, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=reduce_axes, keepdims=True))
        else:
            gx = gxhat * inv_std
        return gx, g_scale, g_shift

    return _result(out, (x, state.scale, state.shift), backward, "batch_norm")


def dropout(x: Tensor, rate: float, mode: str = "train", rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1 / (1 - rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))

    def backward(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), backward, "dropout")


__all__ = [
    "BatchNormState",
    "batch_norm",
    "dropout",
    "glorot_uniform",
    "temporal_conv",
]
