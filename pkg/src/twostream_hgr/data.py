"""Skeleton sequence I/O, frame sampling, features, splits and batches.

Sequence files (``.skl``) are plain text::

    J T label [subject] [finger_mode]
    x y z x y z ...        # T lines, 3*J numbers each, joint-major

``finger_mode`` is ``one`` or ``whole``. A dataset directory holds
``<root>/<split>/<class_id>/<sequence_id>.skl`` plus ``manifest.csv``.
"""
from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .skeleton import SkeletonTopology, sequence_adjacency

SEQ_LEN = 20
FINGER_MODES = ("one", "whole")


class SequenceFormatError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass
class SkeletonSequence:
    frames: np.ndarray                  # (T, J, 3)
    label: int
    subject: int | None = None
    finger_mode: str | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (T>=1, J, 3), got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("frames contain non-finite coordinates")
        if self.finger_mode is not None and self.finger_mode not in FINGER_MODES:
            raise ValueError(f"finger_mode must be one of {FINGER_MODES}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]


# -- file format ------------------------------------------------------------

def save_sequence(path, seq: SkeletonSequence) -> None:
    header = [str(seq.num_joints), str(seq.num_frames), str(seq.label)]
    if seq.subject is not None:
        header.append(str(seq.subject))
    if seq.finger_mode is not None:
        header.append(seq.finger_mode)
    lines = [" ".join(header)]
    for frame in seq.frames:
        lines.append(" ".join(f"{v:.17g}" for v in frame.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_sequence(path) -> SkeletonSequence:
    lines = [ln for ln in Path(path).read_text(encoding="ascii").splitlines()]
    if not lines:
        raise SequenceFormatError(path, 1, "empty file")
    head = lines[0].split()
    if not 3 <= len(head) <= 5:
        raise SequenceFormatError(path, 1, "header must be 'J T label [subject] [finger_mode]'")
    try:
        J, T, label = int(head[0]), int(head[1]), int(head[2])
    except ValueError:
        raise SequenceFormatError(path, 1, "J, T and label must be integers") from None
    if J < 1 or T < 1 or label < 0:
        raise SequenceFormatError(path, 1, "J and T must be positive, label non-negative")
    subject = finger_mode = None
    for tok in head[3:]:
        if tok in FINGER_MODES:
            finger_mode = tok
        else:
            try:
                subject = int(tok)
            except ValueError:
                raise SequenceFormatError(path, 1, f"unrecognized header field {tok!r}") from None

    body = lines[1:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != T:
        raise SequenceFormatError(path, min(len(body), T) + 2, f"expected {T} frame lines, found {len(body)}")
    frames = np.empty((T, J, 3))
    for t, line in enumerate(body):
        lineno = t + 2
        toks = line.split()
        if len(toks) != 3 * J:
            raise SequenceFormatError(path, lineno, f"expected {3 * J} values, got {len(toks)}")
        try:
            values = np.array([float(v) for v in toks])
        except ValueError:
            raise SequenceFormatError(path, lineno, "malformed number") from None
        if not np.isfinite(values).all():
            raise SequenceFormatError(path, lineno, "non-finite value")
        frames[t] = values.reshape(J, 3)
    return SkeletonSequence(frames, label, subject, finger_mode)


# -- sampling and features ------------------------------------------------------

def sample_indices(num_frames: int, target: int = SEQ_LEN) -> np.ndarray:
    """floor(i * T / target) for T >= target, else 0..T-1 then the last index repeated."""
    if num_frames < 1:
        raise ValueError("sequence has no frames")
    if num_frames >= target:
        return (np.arange(target) * num_frames) // target
    return np.concatenate([np.arange(num_frames), np.full(target - num_frames, num_frames - 1)])


def sample_frames(seq: SkeletonSequence, target: int = SEQ_LEN) -> SkeletonSequence:
    idx = sample_indices(seq.num_frames, target)
    return SkeletonSequence(seq.frames[idx], seq.label, seq.subject, seq.finger_mode)


def displacement_features(frames: np.ndarray) -> np.ndarray:
    """Frame-to-frame joint motion; the first frame's displacement is zero."""
    frames = np.asarray(frames, dtype=np.float64)
    deltas = np.zeros_like(frames)
    deltas[1:] = frames[1:] - frames[:-1]
    return deltas


def recurrent_features(frames: np.ndarray) -> np.ndarray:
    """(T, 6J): flattened coordinates followed by flattened displacements."""
    T = frames.shape[0]
    return np.concatenate([frames.reshape(T, -1), displacement_features(frames).reshape(T, -1)], axis=1)


def wrist_centered(frames: np.ndarray, wrist: int = 0) -> np.ndarray:
    return frames - frames[:, wrist:wrist + 1, :]


# -- batches ---------------------------------------------------------------------

@dataclass
class GestureBatch:
    coordinates: np.ndarray     # (B, 3, T, J)
    recurrent: np.ndarray       # (B, T, 6J)
    labels: np.ndarray          # (B,)
    adjacency: np.ndarray       # (B, 3, J, J) normalized partitions per sequence

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "GestureBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return GestureBatch(self.coordinates[idx], self.recurrent[idx], self.labels[idx], self.adjacency[idx])


def make_batch(sequences: Sequence[SkeletonSequence], topology: SkeletonTopology,
               target: int = SEQ_LEN, center_wrist: bool = False) -> GestureBatch:
    if not sequences:
        raise ValueError("cannot build an empty batch")
    sampled = []
    for seq in sequences:
        if seq.num_joints != topology.joint_count:
            raise ValueError(f"sequence has {seq.num_joints} joints, topology {topology.joint_count}")
        frames = seq.frames[sample_indices(seq.num_frames, target)]
        sampled.append(wrist_centered(frames) if center_wrist else frames)
    stacked = np.stack(sampled)                                  # (B, T, J, 3)
    return GestureBatch(
        coordinates=stacked.transpose(0, 3, 1, 2).copy(),
        recurrent=np.stack([recurrent_features(f) for f in sampled]),
        labels=np.array([s.label for s in sequences], dtype=np.int64),
        adjacency=np.stack([sequence_adjacency(topology, f) for f in sampled]),
    )


def iterate_batches(data: GestureBatch, batch_size: int,
                    rng: np.random.Generator | None = None) -> Iterator[GestureBatch]:
    """Yield slices of a prepared set, in order or in a permutation drawn from ``rng``."""
    order = np.arange(len(data)) if rng is None else rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        yield data.subset(order[start:start + batch_size])


# -- splits ----------------------------------------------------------------------

DHG_TOTAL, DHG_TRAIN = 2800, 1960
FPHA_TOTAL, FPHA_TRAIN = 1175, 600
VAL_FRACTION = 0.05


@dataclass
class SplitProtocol:
    kind: str                         # dhg_fixed_count | fpha_standard | synthetic_random
    seed: int = 0
    test_fraction: float = 0.2        # synthetic_random only

    def __post_init__(self):
        if self.kind not in ("dhg_fixed_count", "fpha_standard", "synthetic_random"):
            raise ValueError(f"unknown split protocol {self.kind!r}")


def validation_count(train_total: int) -> int:
    return math.floor(VAL_FRACTION * train_total)


def build_split(labels: Sequence[int], protocol: SplitProtocol) -> dict[str, list[int]]:
    """Partition sequence indices into train / val / test.

    Validation is always ``floor(0.05 * n)`` of the ``n`` training-pool
    indices, drawn with the protocol seed.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    rng = np.random.default_rng(protocol.seed)
    if protocol.kind == "synthetic_random":
        pool, test = [], []
        for c in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == c))
            n_test = int(round(protocol.test_fraction * len(members)))
            test += members[:n_test].tolist()
            pool += members[n_test:].tolist()
        pool = np.array(sorted(pool), dtype=np.int64)
    else:
        total, train = (DHG_TOTAL, DHG_TRAIN) if protocol.kind == "dhg_fixed_count" else (FPHA_TOTAL, FPHA_TRAIN)
        n_pool = train if n == total else int(round(n * train / total))
        perm = rng.permutation(n)
        pool, test = np.sort(perm[:n_pool]), perm[n_pool:].tolist()
    val_pos = rng.permutation(len(pool))[:validation_count(len(pool))]
    val_mask = np.zeros(len(pool), dtype=bool)
    val_mask[val_pos] = True
    splits = {
        "train": sorted(pool[~val_mask].tolist()),
        "val": sorted(pool[val_mask].tolist()),
        "test": sorted(int(i) for i in test),
    }
    classes = np.unique(labels)
    for name in ("train", "test"):
        present = set(labels[splits[name]].tolist())
        empty = [int(c) for c in classes if c not in present]
        if empty:
            warnings.warn(f"split {name!r} has no sequences of classes {empty}", stacklevel=2)
    return splits


# -- dataset directories --------------------------------------------------------------

SPLITS = ("train", "val", "test")


def save_dataset(root, splits: dict[str, Sequence[SkeletonSequence]], class_names: Sequence[str] | None = None) -> None:
    """Write every split under ``root`` and a manifest listing each sequence."""
    root = Path(root)
    rows = []
    for split in SPLITS:
        for i, seq in enumerate(splits.get(split, [])):
            rel = Path(split) / str(seq.label) / f"{split}_{i:05d}.skl"
            (root / rel.parent).mkdir(parents=True, exist_ok=True)
            save_sequence(root / rel, seq)
            rows.append((rel.stem, split, seq.label, rel.as_posix(), seq.num_frames))
    write_manifest(root / "manifest.csv", rows)
    if class_names is not None:
        (root / "classes.txt").write_text("\n".join(class_names) + "\n", encoding="ascii")


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence_id", "split", "class_id", "path", "frames"])
        w.writerows(rows)


def load_dataset(root) -> dict[str, list[SkeletonSequence]]:
    """Read ``<root>/<split>/<class_id>/*.skl`` in sorted path order."""
    root = Path(root)
    out: dict[str, list[SkeletonSequence]] = {}
    for split in SPLITS:
        files = sorted((root / split).glob("*/*.skl"))
        seqs = []
        for f in files:
            seq = load_sequence(f)
            if str(seq.label) != f.parent.name:
                raise SequenceFormatError(f, 1, f"label {seq.label} disagrees with directory {f.parent.name}")
            seqs.append(seq)
        out[split] = seqs
    return out


def load_class_names(root, num_classes: int) -> list[str]:
    path = Path(root) / "classes.txt"
    if path.exists():
        names = [ln.strip() for ln in path.read_text(encoding="ascii").splitlines() if ln.strip()]
        if len(names) == num_classes:
            return names
    return [str(i) for i in range(num_classes)]
