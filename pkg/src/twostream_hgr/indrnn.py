"""Residual bidirectional IndRNN stream.

Sequences are laid out (B, T, D). Each hidden unit recurs only on itself:
``h_t = relu(W x_t + u * h_{t-1} + b)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import StreamModel
from .tensor.core import _result as _core_result
from .tensor import (
    BatchNormState,
    ShapeError,
    Tensor,
    as_tensor,
    batch_norm,
    concat,
    dropout,
    flip,
    glorot_uniform,
    matmul,
    softmax,
    transpose,
)


def indrnn_recurrence(pre: Tensor, u: Tensor, h0: Tensor | None = None) -> Tensor:
    """Run ``h_t = relu(pre_t + u * h_{t-1})`` over axis 1 of a (B, T, N) input."""
    B, T, N = pre.shape
    if u.shape != (N,):
        raise ShapeError(f"recurrent weights {u.shape} do not match {N} units")
    if h0 is None:
        h0 = Tensor(np.zeros((B, N), dtype=pre.dtype))
    elif h0.shape not in ((N,), (B, N)):
        raise ShapeError(f"initial state {h0.shape} does not match (B={B}, N={N})")
    h0_full = np.broadcast_to(h0.data, (B, N))

    z = np.empty_like(pre.data)
    h = np.empty_like(pre.data)
    prev = h0_full
    for t in range(T):
        z[:, t] = pre.data[:, t] + u.data * prev
        h[:, t] = np.maximum(z[:, t], 0.0)
        prev = h[:, t]

    def backward(g):
        g_pre = np.zeros_like(pre.data)
        g_u = np.zeros_like(u.data)
        carry = np.zeros((B, N), dtype=pre.dtype)
        for t in range(T - 1, -1, -1):
            gz = (g[:, t] + carry) * (z[:, t] > 0)
            g_pre[:, t] = gz
            prev = h[:, t - 1] if t > 0 else h0_full
            g_u += (gz * prev).sum(axis=0)
            carry = gz * u.data
        g_h0 = carry if h0.ndim == 2 else carry.sum(axis=0)
        return g_pre, g_u, g_h0

    return _core_result(h, (pre, u, h0), backward, "indrnn_recurrence")


@dataclass
class IndRnnLayerParams:
    W: Tensor       # (N, D_in)
    u: Tensor       # (N,)
    b: Tensor       # (N,)

    @property
    def units(self) -> int:
        return self.u.shape[0]


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected (T, D) or (B, T, D), got {x.shape}")
    return x, False


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear map expects width {W.shape[1]}, got {x.shape[-1]}")
    out = matmul(x, transpose(W))
    return out if b is None else out + b


def indrnn_forward(x: Tensor, layer: IndRnnLayerParams, h0: Tensor | None = None) -> Tensor:
    x, single = _batched(as_tensor(x))
    h = indrnn_recurrence(linear(x, layer.W, layer.b), layer.u, h0)
    return h.reshape(h.shape[1:]) if single else h


def bi_indrnn_forward(x: Tensor, fwd: IndRnnLayerParams, bwd: IndRnnLayerParams) -> Tensor:
    """Concatenate a forward pass and a time-reversed pass, per timestep."""
    x, single = _batched(as_tensor(x))
    if fwd.units != bwd.units:
        raise ShapeError("both directions must have the same number of units")
    h_fwd = indrnn_forward(x, fwd)
    h_bwd = flip(indrnn_forward(flip(x, 1), bwd), 1)
    out = concat([h_fwd, h_bwd], axis=-1)
    return out.reshape(out.shape[1:]) if single else out


@dataclass
class RbiBlockParams:
    bn: BatchNormState
    fwd: IndRnnLayerParams
    bwd: IndRnnLayerParams | None
    W_out: Tensor        # (width, width) per-timestep map after the recurrence
    b_out: Tensor
    residual: bool = True


def rbi_block_forward(x: Tensor, block: RbiBlockParams, mode: str = "infer",
                      rng: np.random.Generator | None = None, dropout_rate: float = 0.0) -> Tensor:
    """x + dropout(W_out . BiIndRNN(BN(x)))."""
    x, single = _batched(as_tensor(x))
    h = batch_norm(x, block.bn, mode, channel_axis=-1)
    h = bi_indrnn_forward(h, block.fwd, block.bwd) if block.bwd is not None else indrnn_forward(h, block.fwd)
    h = dropout(linear(h, block.W_out, block.b_out), dropout_rate, mode, rng)
    y = x + h if block.residual else h
    return y.reshape(y.shape[1:]) if single else y


@dataclass
class RbiConfig:
    num_classes: int
    input_width: int
    units: int = 512
    blocks: int = 6
    bidirectional: bool = True
    residual: bool = True
    dropout: float = 0.2
    seq_len: int = 20
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    dtype: str = "float64"
    seed: int = 0

    @property
    def width(self) -> int:
        return self.units * (2 if self.bidirectional else 1)


class RbiNetwork(StreamModel):
    kind = "rbi"

    def __init__(self, config: RbiConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        n, width, d_in = config.units, config.width, config.input_width
        self.W_in = self._param("proj.W", glorot_uniform(rng, (width, d_in), d_in, width))
        self.b_in = self._param("proj.b", np.zeros(width))

        def layer(prefix: str) -> IndRnnLayerParams:
            return IndRnnLayerParams(
                W=self._param(f"{prefix}.W", glorot_uniform(rng, (n, width), width, n)),
                u=self._param(f"{prefix}.u", rng.uniform(0.0, 1.0, n)),
                b=self._param(f"{prefix}.b", np.zeros(n)),
            )

        self.blocks: list[RbiBlockParams] = []
        for i in range(1, config.blocks + 1):
            p = f"block{i}"
            self.blocks.append(RbiBlockParams(
                bn=self._batch_norm(f"{p}.bn", width),
                fwd=layer(f"{p}.fwd"),
                bwd=layer(f"{p}.bwd") if config.bidirectional else None,
                W_out=self._param(f"{p}.W_out", glorot_uniform(rng, (width, width), width, width)),
                b_out=self._param(f"{p}.b_out", np.zeros(width)),
                residual=config.residual,
            ))
        self.fc_W = self._param("fc.W", glorot_uniform(rng, (config.num_classes, width), width, config.num_classes))
        self.fc_b = self._param("fc.b", np.zeros(config.num_classes))

    def recurrent_weights(self) -> list[Tensor]:
        return [layer.u for blk in self.blocks for layer in (blk.fwd, blk.bwd) if layer is not None]

    def features(self, x: Tensor, mode: str = "infer", rng: np.random.Generator | None = None) -> Tensor:
        """Block-stack output for every timestep, (B, T, width)."""
        h = linear(x, self.W_in, self.b_in)
        for blk in self.blocks:
            h = rbi_block_forward(h, blk, mode, rng, self.config.dropout)
        return h

    def logits(self, inputs, mode: str = "infer", rng: np.random.Generator | None = None) -> Tensor:
        """``inputs`` is a (B, T, 6J) array of coordinates followed by displacements."""
        x = as_tensor(np.asarray(inputs.data if isinstance(inputs, Tensor) else inputs, dtype=self.dtype))
        if x.ndim != 3 or x.shape[-1] != self.config.input_width:
            raise ShapeError(f"RBi input must be (B, T, {self.config.input_width}), got {x.shape}")
        last = self.features(x, mode, rng)[:, -1, :]
        return linear(last, self.fc_W, self.fc_b)


def rbi_forward(features, net: RbiNetwork, mode: str = "infer", rng: np.random.Generator | None = None) -> Tensor:
    return softmax(net.logits(features, mode, rng), axis=-1)


def recurrent_bound(seq_len: int) -> float:
    if seq_len < 1:
        raise ValueError("sequence length must be >= 1")
    return 2.0 ** (1.0 / seq_len)


def clamp_recurrent_weights(net: RbiNetwork, seq_len: int) -> None:
    """Clip every recurrent weight into [-2^(1/T), 2^(1/T)] in place."""
    bound = recurrent_bound(seq_len)
    for u in net.recurrent_weights():
        np.clip(u.data, -bound, bound, out=u.data)
