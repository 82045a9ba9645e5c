"""Parameter bookkeeping shared by the two stream networks."""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from .tensor import BatchNormState, Tensor, load_checkpoint, save_checkpoint, softmax, no_grad


class StreamModel:
    """A stream network: named trainable tensors plus batch-norm states."""

    kind = "abstract"

    def __init__(self, config):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self.bn: dict[str, BatchNormState] = {}

    # -- registration ------------------------------------------------------
    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _batch_norm(self, name: str, channels: int) -> BatchNormState:
        state = BatchNormState.create(channels, self.config.bn_momentum, self.config.bn_eps, self.dtype)
        state.scale.name = f"{name}.scale"
        state.shift.name = f"{name}.shift"
        self.bn[name] = state
        return state

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self.params)
        for name, state in self.bn.items():
            out[f"{name}.scale"] = state.scale
            out[f"{name}.shift"] = state.shift
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # -- state -------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.parameters().items()}
        for name, state in self.bn.items():
            out[f"{name}.running_mean"] = state.running_mean.copy()
            out[f"{name}.running_var"] = state.running_var.copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        expected = set(params) | {f"{n}.running_{s}" for n in self.bn for s in ("mean", "var")}
        missing = expected - set(arrays)
        if missing:
            raise KeyError(f"state is missing {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: stored shape {arr.shape}, model {p.shape}")
            p.data = arr.copy()
        for name, state in self.bn.items():
            state.running_mean = np.asarray(arrays[f"{name}.running_mean"], dtype=self.dtype).copy()
            state.running_var = np.asarray(arrays[f"{name}.running_var"], dtype=self.dtype).copy()

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = {"stream": self.kind, "config": json.dumps(dataclasses.asdict(self.config), sort_keys=True)}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.state_arrays(), meta)

    # -- inference -----------------------------------------------------------
    def logits(self, inputs, mode: str = "infer", rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def predict_proba(self, inputs) -> np.ndarray:
        with no_grad():
            return softmax(self.logits(inputs, mode="infer"), axis=-1).data
