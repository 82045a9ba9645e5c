"""Per-stream training, score fusion and evaluation reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import GestureBatch, iterate_batches
from .indrnn import RbiConfig, RbiNetwork, clamp_recurrent_weights
from .model import StreamModel
from .sagcn import SagcnConfig, SagcnNetwork
from .tensor import AdamState, NonFiniteError, adam_step, cross_entropy, load_checkpoint, no_grad

log = logging.getLogger(__name__)

STREAM_DEFAULTS = {
    "sagcn": {"lr": 2e-3, "dropout": 0.5},
    "rbi": {"lr": 2e-4, "dropout": 0.2},
}


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    stream: str = "sagcn"
    batch_size: int = 64
    lr: float | None = None
    dropout: float | None = None
    max_epochs: int = 300
    lr_decay: float = 0.1
    decay_policy: str = "plateau"           # plateau | literal
    plateau_patience: int = 10
    early_stop: int = 50
    min_lr: float = 0.0
    restore_best: bool = True
    seed: int = 0
    dtype: str = "float32"
    topology: str = "DHG22"
    center_wrist: bool = False
    # architecture
    channels: tuple = (64, 64, 128, 128, 256, 256)
    strides: tuple = (1, 1, 1, 2, 1, 1)
    kernel_t: int = 9
    unit_shortcut: bool = True
    units: int = 512
    blocks: int = 6
    bidirectional: bool = True
    residual: bool = True
    seq_len: int = 20

    def __post_init__(self):
        if self.stream not in STREAM_DEFAULTS:
            raise ValueError(f"unknown stream {self.stream!r}")
        if self.lr is None:
            self.lr = STREAM_DEFAULTS[self.stream]["lr"]
        if self.dropout is None:
            self.dropout = STREAM_DEFAULTS[self.stream]["dropout"]
        self.channels = tuple(int(c) for c in self.channels)
        self.strides = tuple(int(s) for s in self.strides)
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("lr, batch_size and max_epochs must be non-negative (batch_size positive)")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.decay_policy not in ("plateau", "literal"):
            raise ValueError(f"unknown decay policy {self.decay_policy!r}")


def _coerce(value: str, target):
    if isinstance(target, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float) or target is None:
        return float(value)
    if isinstance(target, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def read_key_values(path) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def train_config_from_mapping(values: dict[str, str], **overrides) -> TrainConfig:
    stream = overrides.get("stream") or values.get("stream", "sagcn")
    base = TrainConfig(stream=stream)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(value, getattr(base, key))
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kwargs)


def write_key_values(path, config: TrainConfig) -> None:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {' '.join(map(str, v)) if isinstance(v, tuple) else v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- models ------------------------------------------------------------------------

def build_model(config: TrainConfig, num_classes: int, num_joints: int) -> StreamModel:
    if config.stream == "sagcn":
        return SagcnNetwork(SagcnConfig(
            num_classes=num_classes, channels=config.channels, strides=config.strides,
            kernel_t=config.kernel_t, dropout=config.dropout, unit_shortcut=config.unit_shortcut,
            dtype=config.dtype, seed=config.seed,
        ))
    return RbiNetwork(RbiConfig(
        num_classes=num_classes, input_width=6 * num_joints, units=config.units, blocks=config.blocks,
        bidirectional=config.bidirectional, residual=config.residual, dropout=config.dropout,
        seq_len=config.seq_len, dtype=config.dtype, seed=config.seed,
    ))


def load_model(path) -> StreamModel:
    arrays, meta = load_checkpoint(path)
    cfg = json.loads(meta["config"])
    if meta["stream"] == "sagcn":
        model: StreamModel = SagcnNetwork(SagcnConfig(**cfg))
    elif meta["stream"] == "rbi":
        model = RbiNetwork(RbiConfig(**cfg))
    else:
        raise ValueError(f"{path}: unknown stream {meta['stream']!r}")
    model.load_state_arrays(arrays)
    return model


def stream_inputs(model: StreamModel, batch: GestureBatch):
    if model.kind == "sagcn":
        return batch.coordinates, batch.adjacency
    return batch.recurrent


def predict_proba(model: StreamModel, data: GestureBatch, batch_size: int = 64) -> np.ndarray:
    parts = [model.predict_proba(stream_inputs(model, b)) for b in iterate_batches(data, batch_size)]
    return np.concatenate(parts, axis=0)


def _loss_and_accuracy(model: StreamModel, data: GestureBatch, batch_size: int) -> tuple[float, float]:
    total, correct = 0.0, 0
    with no_grad():
        for b in iterate_batches(data, batch_size):
            logits = model.logits(stream_inputs(model, b), mode="infer")
            total += cross_entropy(logits, b.labels).item() * len(b)
            correct += int((np.argmax(logits.data, axis=1) == b.labels).sum())
    return total / len(data), correct / len(data)


# -- training -------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float
    lr: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0
    step_losses: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "train_acc", "val_acc", "lr"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.loss), repr(r.train_acc), repr(r.val_acc), repr(r.lr)])


def train_stream(model: StreamModel, splits: dict[str, GestureBatch], config: TrainConfig,
                 progress=None) -> tuple[StreamModel, TrainHistory]:
    """Minimize softmax cross-entropy with Adam on ``splits['train']``.

    Validation (``splits['val']``, falling back to the training split when
    absent or empty) drives learning-rate decay, early stopping and the
    retained best checkpoint.
    """
    if config.stream != model.kind:
        raise ValueError(f"config is for {config.stream!r} but model is {model.kind!r}")
    train = splits["train"]
    val = splits.get("val")
    if val is None or len(val) == 0:
        val = train
    rng = np.random.default_rng(config.seed)
    state = AdamState(lr=config.lr)
    params = model.parameters()
    history = TrainHistory()
    best_key = None
    best_acc = -1.0
    best_state = model.state_arrays()
    since_best = 0
    since_decay = 0

    for epoch in range(1, config.max_epochs + 1):
        running, seen = 0.0, 0
        for batch in iterate_batches(train, config.batch_size, rng):
            model.zero_grad()
            history.steps += 1
            try:
                logits = model.logits(stream_inputs(model, batch), mode="train", rng=rng)
                loss = cross_entropy(logits, batch.labels)
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError(history.steps)
                loss.backward()
                adam_step(params, {n: p.grad for n, p in params.items()}, state)
            except NonFiniteError as exc:
                raise DivergenceError(history.steps, str(exc)) from exc
            if model.kind == "rbi":
                clamp_recurrent_weights(model, model.config.seq_len)
            history.step_losses.append(value)
            running += value * len(batch)
            seen += len(batch)

        _, train_acc = _loss_and_accuracy(model, train, config.batch_size)
        val_loss, val_acc = _loss_and_accuracy(model, val, config.batch_size)
        history.records.append(EpochRecord(epoch, running / seen, train_acc, val_acc, state.lr))
        if progress is not None:
            progress(history.records[-1])

        key = (val_acc, -val_loss)
        improved = best_key is None or key > best_key
        acc_improved = val_acc > best_acc
        best_acc = max(best_acc, val_acc)
        if improved:
            best_key = key
            best_state = model.state_arrays()
            history.best_epoch = epoch
            since_best = 0
            since_decay = 0
        else:
            since_best += 1
            since_decay += 1

        if config.decay_policy == "literal":
            if acc_improved and epoch > 1:
                state.lr = max(state.lr * config.lr_decay, config.min_lr)
        elif since_decay >= config.plateau_patience:
            state.lr = max(state.lr * config.lr_decay, config.min_lr)
            since_decay = 0
        if since_best >= config.early_stop:
            log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break

    if config.restore_best and history.records:
        model.load_state_arrays(best_state)
    return model, history


# -- fusion and evaluation ---------------------------------------------------------------

def fuse_scores(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    v1, v2 = np.asarray(v1, dtype=np.float64), np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError(f"score shapes differ: {v1.shape} vs {v2.shape}")
    return v1 * v2


def fuse_and_classify(v1, v2) -> int:
    """argmax of the elementwise product; ties go to the lowest index."""
    v1, v2 = np.asarray(v1, dtype=np.float64), np.asarray(v2, dtype=np.float64)
    if v1.ndim != 1 or v1.shape != v2.shape:
        raise ValueError(f"need two score vectors of equal length, got {v1.shape} and {v2.shape}")
    if ((v1 < 0) | (v1 > 1) | (v2 < 0) | (v2 > 1)).any():
        raise ValueError("scores must lie in [0, 1]")
    return int(np.argmax(fuse_scores(v1, v2)))


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray            # rows: true class, columns: predicted
    predictions: np.ndarray
    labels: np.ndarray
    scores: list = field(default_factory=list)

    def confusion_csv(self, path, class_names: Sequence[str] | None = None) -> None:
        k = self.confusion.shape[0]
        names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *names])
            for name, row in zip(names, self.confusion):
                w.writerow([name, *row.tolist()])

    def scores_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh)
            k = self.confusion.shape[0]
            header = ["index", "label", "prediction"]
            for s in range(len(self.scores)):
                header += [f"s{s}_c{c}" for c in range(k)]
            w.writerow(header)
            for i in range(len(self.labels)):
                row = [i, int(self.labels[i]), int(self.predictions[i])]
                for s in self.scores:
                    row += [f"{v:.17g}" for v in s[i]]
                w.writerow(row)


def report_from_predictions(predictions, labels, num_classes: int, scores=()) -> EvalReport:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or labels.size == 0:
        raise ValueError("need equally many predictions and labels, at least one")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    counts = confusion.sum(axis=1)
    per_class = np.divide(np.diag(confusion), counts, out=np.zeros(num_classes), where=counts > 0)
    return EvalReport(
        accuracy=float(np.trace(confusion)) / float(confusion.sum()),
        per_class_accuracy=per_class,
        confusion=confusion,
        predictions=predictions,
        labels=labels,
        scores=list(scores),
    )


def evaluate(models: Sequence[StreamModel], test: GestureBatch, batch_size: int = 64) -> EvalReport:
    """Single-stream argmax, or fused argmax when given two streams."""
    if not 1 <= len(models) <= 2:
        raise ValueError("evaluate takes one or two stream models")
    if len(test) == 0:
        raise ValueError("empty test split")
    num_classes = models[0].config.num_classes
    for m in models:
        if m.config.num_classes != num_classes:
            raise ValueError("stream models disagree on the class count")
    if int(test.labels.max()) >= num_classes:
        raise ValueError(f"test labels reach {int(test.labels.max())} but models have {num_classes} classes")
    scores = [predict_proba(m, test, batch_size) for m in models]
    combined = scores[0] if len(scores) == 1 else fuse_scores(scores[0], scores[1])
    return report_from_predictions(np.argmax(combined, axis=1), test.labels, num_classes, scores)
