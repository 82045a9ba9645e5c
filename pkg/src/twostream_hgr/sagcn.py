"""Self-attention graph convolution stream.

Feature maps are laid out (B, C, T, J). A J x J matrix ``A`` is applied
along the joint axis with rows indexing the receiving joint:
``out[..., i] = sum_j A[i, j] * f[..., j]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import StreamModel
from .tensor import (
    BatchNormState,
    ShapeError,
    Tensor,
    as_tensor,
    batch_norm,
    dropout,
    glorot_uniform,
    matmul,
    relu,
    softmax,
    temporal_conv,
    transpose,
)

ROW_SUM_TOL = 1e-6


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected (C, T, J) or (B, C, T, J), got {x.shape}")
    return x, False


def channel_map(W: Tensor, f: Tensor) -> Tensor:
    """1x1 convolution: (O, C) weights applied to (B, C, T, J) features."""
    B, C, T, J = f.shape
    if W.shape[1] != C:
        raise ShapeError(f"channel map expects {W.shape[1]} channels, got {C}")
    return matmul(W, f.reshape(B, C, T * J)).reshape(B, W.shape[0], T, J)


def joint_mix(f: Tensor, A) -> Tensor:
    """Apply a (J, J) or per-sample (B, J, J) matrix along the joint axis."""
    A = as_tensor(A)
    B, C, T, J = f.shape
    if A.shape[-1] != J or A.shape[-2] != J:
        raise ShapeError(f"matrix {A.shape} does not match {J} joints")
    At = transpose(A, (0, 2, 1)) if A.ndim == 3 else transpose(A)
    return matmul(f.reshape(B, C * T, J), At).reshape(B, C, T, J)


def attention_map(f_in: Tensor, W_a: Tensor) -> Tensor:
    """Row-stochastic joint-to-joint attention from embedded features.

    Embeds with the 1x1 map ``W_a``, flattens channels and time so each joint
    is one column of a (C_e * T, J) matrix, takes the Gram matrix of those
    columns and softmaxes each row.
    """
    f, single = _batched(f_in)
    B, _, T, J = f.shape
    fa = channel_map(W_a, f).reshape(B, W_a.shape[0] * T, J)
    scores = matmul(transpose(fa, (0, 2, 1)), fa)
    A_g = softmax(scores, axis=-1)
    return A_g.reshape(J, J) if single else A_g


def sagcn_spatial(f_in: Tensor, adjacency, A_g: Tensor, W_k, W_g: Tensor) -> Tensor:
    """ReLU(sum_k W_k f A_k + W_g f A_g).

    ``adjacency`` holds the normalized partition matrices, shape (3, J, J) or
    per-sample (B, 3, J, J); ``W_k`` is a sequence of three (O, C) maps.
    """
    f, single = _batched(f_in)
    adjacency = np.asarray(adjacency.data if isinstance(adjacency, Tensor) else adjacency)
    J = f.shape[-1]
    if adjacency.shape[-1] != J or A_g.shape[-1] != J:
        raise ShapeError("joint count differs between features, adjacency and attention")
    total = None
    for k, W in enumerate(W_k):
        A = adjacency[..., k, :, :]
        term = joint_mix(channel_map(W, f), Tensor(A.astype(f.dtype, copy=False)))
        total = term if total is None else total + term
    total = total + joint_mix(channel_map(W_g, f), A_g)
    out = relu(total)
    return out.reshape(out.shape[1:]) if single else out


@dataclass
class SagcnConfig:
    num_classes: int
    channels: tuple = (64, 64, 128, 128, 256, 256)
    strides: tuple = (1, 1, 1, 2, 1, 1)
    in_channels: int = 3
    kernel_t: int = 9
    dropout: float = 0.5
    unit_shortcut: bool = True
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        if len(self.channels) != len(self.strides):
            raise ValueError("channels and strides must have equal length")


@dataclass
class SagcnUnitParams:
    W_a: Tensor
    W_k: list
    W_g: Tensor
    tcn: Tensor
    bn_spatial: BatchNormState
    bn_temporal: BatchNormState
    stride_t: int = 1
    shortcut: Tensor | None = None      # (C_out, C_in) projection, None for identity
    use_shortcut: bool = True

    @property
    def in_channels(self) -> int:
        return self.W_g.shape[1]

    @property
    def out_channels(self) -> int:
        return self.W_g.shape[0]


def sagcn_unit_forward(x: Tensor, unit: SagcnUnitParams, adjacency, mode: str = "infer",
                       rng: np.random.Generator | None = None, dropout_rate: float = 0.0,
                       attention_sink: list | None = None) -> Tensor:
    """spatial -> BN -> temporal conv -> BN, plus shortcut, ReLU, dropout."""
    x, single = _batched(x)
    if x.shape[1] != unit.in_channels:
        raise ShapeError(f"unit expects {unit.in_channels} channels, got {x.shape[1]}")
    A_g = attention_map(x, unit.W_a)
    row_sums = A_g.data.astype(np.float64).sum(axis=-1)
    if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
        raise FloatingPointError("attention rows do not sum to 1")
    if attention_sink is not None:
        attention_sink.append(A_g.data.copy())

    h = sagcn_spatial(x, adjacency, A_g, unit.W_k, unit.W_g)
    h = batch_norm(h, unit.bn_spatial, mode, channel_axis=1)
    h = temporal_conv(h, unit.tcn, unit.stride_t)
    h = batch_norm(h, unit.bn_temporal, mode, channel_axis=1)
    if unit.use_shortcut:
        res = x if unit.stride_t == 1 else x[:, :, ::unit.stride_t, :]
        if unit.shortcut is not None:
            res = channel_map(unit.shortcut, res)
        h = h + res
    y = dropout(relu(h), dropout_rate, mode, rng)
    return y.reshape(y.shape[1:]) if single else y


class SagcnNetwork(StreamModel):
    kind = "sagcn"

    def __init__(self, config: SagcnConfig):
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        self.units: list[SagcnUnitParams] = []
        c_in = config.in_channels
        k = config.kernel_t
        for i, (c_out, stride) in enumerate(zip(config.channels, config.strides), start=1):
            p = f"unit{i}"
            W_a = self._param(f"{p}.W_a", glorot_uniform(rng, (c_out, c_in), c_in, c_out))
            W_k = [self._param(f"{p}.W_{j}", glorot_uniform(rng, (c_out, c_in), c_in, c_out)) for j in range(3)]
            W_g = self._param(f"{p}.W_g", glorot_uniform(rng, (c_out, c_in), c_in, c_out))
            tcn = self._param(f"{p}.tcn", glorot_uniform(rng, (c_out, c_out, k), c_out * k, c_out * k))
            shortcut = None
            if config.unit_shortcut and (c_in != c_out or stride != 1):
                shortcut = self._param(f"{p}.shortcut", glorot_uniform(rng, (c_out, c_in), c_in, c_out))
            self.units.append(SagcnUnitParams(
                W_a=W_a, W_k=W_k, W_g=W_g, tcn=tcn,
                bn_spatial=self._batch_norm(f"{p}.bn_spatial", c_out),
                bn_temporal=self._batch_norm(f"{p}.bn_temporal", c_out),
                stride_t=stride, shortcut=shortcut, use_shortcut=config.unit_shortcut,
            ))
            c_in = c_out
        self.fc_W = self._param("fc.W", glorot_uniform(rng, (config.num_classes, c_in), c_in, config.num_classes))
        self.fc_b = self._param("fc.b", np.zeros(config.num_classes))

    def logits(self, inputs, mode: str = "infer", rng: np.random.Generator | None = None,
               attention_sink: list | None = None) -> Tensor:
        """``inputs`` is ``(coordinates, adjacency)``: (B, 3, T, J) and (3, J, J) or (B, 3, J, J)."""
        coords, adjacency = inputs
        x = as_tensor(np.asarray(coords.data if isinstance(coords, Tensor) else coords, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"SAGCN input must be (B, {self.config.in_channels}, T, J), got {x.shape}")
        h = x
        for unit in self.units:
            h = sagcn_unit_forward(h, unit, adjacency, mode, rng, self.config.dropout, attention_sink)
        pooled = h.mean(axis=(2, 3))
        return matmul(pooled, transpose(self.fc_W)) + self.fc_b


def sagcn_forward(coords, net: SagcnNetwork, adjacency, mode: str = "infer",
                  rng: np.random.Generator | None = None) -> Tensor:
    """Class probabilities, one row per sequence."""
    return softmax(net.logits((coords, adjacency), mode, rng), axis=-1)
