"""Procedural gesture families on a canonical hand, for desk-scale runs.

Per-sample variation (length, scale, offset, amplitude, tilt) is drawn from a
generator keyed on ``(seed, sample_index)`` only, so sample ``i`` of every
class shares it; noise is keyed on ``(seed, sample_index, class_index)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SkeletonSequence
from .skeleton import DatasetKind, SkeletonTopology, finger_chains

GENERATORS = (
    "swipe_left", "swipe_right", "swipe_up", "swipe_down",
    "rotation_cw", "rotation_ccw", "grab", "pinch",
)

SWIPE_DIRECTIONS = {
    "swipe_left": (-1.0, 0.0, 0.0),
    "swipe_right": (1.0, 0.0, 0.0),
    "swipe_up": (0.0, 1.0, 0.0),
    "swipe_down": (0.0, -1.0, 0.0),
}
SWIPE_DISTANCE = 1.0
ROTATION_ANGLE = np.pi / 2
CONTRACTION = 0.6


@dataclass
class SyntheticSpec:
    classes: tuple = GENERATORS
    noise: float = 0.02
    samples_per_class: int = 50
    seed: int = 0
    min_frames: int = 20
    max_frames: int = 50

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(self.classes) < 2:
            raise ValueError("a synthetic set needs at least two classes")
        unknown = [c for c in self.classes if c not in GENERATORS]
        if unknown:
            raise ValueError(f"unknown generator ids {unknown}; choose from {GENERATORS}")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ValueError("need 1 <= min_frames <= max_frames")


def canonical_hand(topology: SkeletonTopology) -> np.ndarray:
    """Open right hand in the x-y plane, wrist at the origin, fingers along +y."""
    chains = finger_chains(topology)
    pose = np.zeros((topology.joint_count, 3))
    if topology.kind is DatasetKind.DHG22:
        pose[1] = (0.0, 0.35, 0.02)
    base_x = (-0.38, -0.18, 0.0, 0.17, 0.32)
    base_y = (0.25, 0.55, 0.58, 0.55, 0.48)
    seg = (0.14, 0.16, 0.17, 0.16, 0.12)
    heading = (-0.9, -0.08, 0.0, 0.08, 0.18)          # radians off +y
    for f, chain in enumerate(chains):
        direction = np.array([np.sin(heading[f]), np.cos(heading[f]), 0.0])
        start = np.array([base_x[f], base_y[f], 0.0])
        for i, j in enumerate(chain):
            pose[j] = start + direction * seg[f] * i
            pose[j, 2] = 0.015 * i * i                 # slight curl out of plane
    return pose


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _trajectory(kind: str, base: np.ndarray, progress: np.ndarray, amplitude: float,
                topology: SkeletonTopology) -> np.ndarray:
    T = progress.shape[0]
    frames = np.repeat(base[None], T, axis=0)
    center = base.mean(axis=0)
    if kind in SWIPE_DIRECTIONS:
        step = np.array(SWIPE_DIRECTIONS[kind]) * SWIPE_DISTANCE * amplitude
        frames = frames + progress[:, None, None] * step
    elif kind in ("rotation_cw", "rotation_ccw"):
        sign = -1.0 if kind == "rotation_cw" else 1.0
        for t in range(T):
            R = _rot_z(sign * ROTATION_ANGLE * amplitude * progress[t])
            frames[t] = (base - center) @ R.T + center
    else:
        chains = finger_chains(topology)
        moving = [j for chain in (chains if kind == "grab" else chains[:2]) for j in chain]
        factor = 1.0 - CONTRACTION * min(amplitude, 1.4) * progress
        for j in moving:
            frames[:, j] = center + (base[j] - center) * factor[:, None]
    return frames


def generate_synthetic(spec: SyntheticSpec, topology: SkeletonTopology) -> list[SkeletonSequence]:
    """``samples_per_class`` sequences per class, ordered class by class."""
    if topology.kind not in (DatasetKind.DHG22, DatasetKind.FPHA21):
        raise ValueError("synthetic gestures need a built-in hand topology")
    hand = canonical_hand(topology)
    out: list[SkeletonSequence] = []
    for label, kind in enumerate(spec.classes):
        if kind not in GENERATORS:
            raise ValueError(f"unknown generator id {kind!r}")
        for i in range(spec.samples_per_class):
            prng = np.random.default_rng([spec.seed, i])
            T = int(prng.integers(spec.min_frames, spec.max_frames + 1))
            scale = prng.uniform(0.9, 1.1)
            offset = prng.uniform(-0.2, 0.2, size=3)
            amplitude = prng.uniform(0.8, 1.2)
            tilt = prng.uniform(-0.2, 0.2)
            base = (hand * scale) @ _rot_z(tilt).T + offset
            p = np.linspace(0.0, 1.0, T)
            progress = p * p * (3.0 - 2.0 * p)
            frames = _trajectory(kind, base, progress, amplitude, topology)
            if spec.noise > 0:
                nrng = np.random.default_rng([spec.seed, i, label])
                frames = frames + nrng.normal(0.0, spec.noise, size=frames.shape)
            out.append(SkeletonSequence(frames, label))
    return out
