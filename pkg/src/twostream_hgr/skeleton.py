"""Hand skeleton topologies and gravity-center partitioned adjacency."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Iterable

import numpy as np

ZERO_DEGREE_EPS = 1e-6


class DatasetKind(enum.Enum):
    DHG22 = "DHG22"
    FPHA21 = "FPHA21"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class SkeletonTopology:
    joint_count: int
    edges: frozenset
    kind: DatasetKind = DatasetKind.CUSTOM

    def __init__(self, joint_count: int, edges: Iterable[tuple[int, int]], kind: DatasetKind = DatasetKind.CUSTOM):
        edges = list(edges)
        if joint_count < 1:
            raise ValueError("joint_count must be positive")
        normalized = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if not (0 <= a < joint_count and 0 <= b < joint_count):
                raise ValueError(f"edge ({a}, {b}) outside [0, {joint_count})")
            if a == b:
                raise ValueError(f"self-loop at joint {a}")
            key = (min(a, b), max(a, b))
            if key in normalized:
                raise ValueError(f"duplicate edge {key}")
            normalized.add(key)
        object.__setattr__(self, "joint_count", joint_count)
        object.__setattr__(self, "edges", frozenset(normalized))
        object.__setattr__(self, "kind", kind)
        if not self._connected():
            raise ValueError("skeleton graph is not connected")

    def _connected(self) -> bool:
        nbrs = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            for n in nbrs[queue.popleft()]:
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
        return len(seen) == self.joint_count

    def neighbors(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.joint_count)]
        for a, b in sorted(self.edges):
            out[a].append(b)
            out[b].append(a)
        return out

    def binary_adjacency(self) -> np.ndarray:
        A = np.zeros((self.joint_count, self.joint_count))
        for a, b in self.edges:
            A[a, b] = A[b, a] = 1.0
        return A

    def permuted(self, perm: np.ndarray) -> "SkeletonTopology":
        """Relabel joints so old joint ``perm[i]`` becomes joint ``i``."""
        inv = np.argsort(perm)
        return SkeletonTopology(self.joint_count, [(int(inv[a]), int(inv[b])) for a, b in self.edges], DatasetKind.CUSTOM)


# DHG order: wrist, palm, then thumb/index/middle/ring/pinky as base, first, second, tip.
def _dhg_edges() -> list[tuple[int, int]]:
    edges = [(0, 1)]
    for f in range(5):
        base = 2 + 4 * f
        edges.append((1, base))
        edges += [(base + i, base + i + 1) for i in range(3)]
    return edges


# FPHA order: wrist, five MCPs (T, I, M, R, P), then PIP, DIP, TIP per finger.
def _fpha_edges() -> list[tuple[int, int]]:
    edges = []
    for f in range(5):
        chain = [1 + f, 6 + 3 * f, 7 + 3 * f, 8 + 3 * f]
        edges.append((0, chain[0]))
        edges += list(zip(chain[:-1], chain[1:]))
    return edges


def finger_chains(topology: SkeletonTopology) -> list[list[int]]:
    """Joint indices of each finger, base to tip, thumb first."""
    if topology.kind is DatasetKind.DHG22:
        return [[2 + 4 * f + i for i in range(4)] for f in range(5)]
    if topology.kind is DatasetKind.FPHA21:
        return [[1 + f, 6 + 3 * f, 7 + 3 * f, 8 + 3 * f] for f in range(5)]
    raise ValueError("finger chains are only defined for the built-in hand topologies")


def build_hand_topology(kind: DatasetKind | str) -> SkeletonTopology:
    kind = DatasetKind(kind)
    if kind is DatasetKind.DHG22:
        return SkeletonTopology(22, _dhg_edges(), kind)
    if kind is DatasetKind.FPHA21:
        return SkeletonTopology(21, _fpha_edges(), kind)
    raise ValueError("Custom topologies are built directly with SkeletonTopology(...)")


def _as_pose(pose) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.ndim != 2 or pose.shape[1] != 3 or pose.shape[0] < 1:
        raise ValueError(f"pose must be J x 3 with J >= 1, got {pose.shape}")
    if not np.isfinite(pose).all():
        raise ValueError("pose contains non-finite coordinates")
    return pose


def gravity_center(pose) -> np.ndarray:
    """Mean of the joint coordinates."""
    return _as_pose(pose).mean(axis=0)


@dataclass(frozen=True)
class PartitionedAdjacency:
    matrices: np.ndarray               # (3, J, J): root, centripetal, centrifugal
    normalized: np.ndarray | None = None

    @property
    def joint_count(self) -> int:
        return self.matrices.shape[-1]


def partition_adjacency(topology: SkeletonTopology, pose) -> PartitionedAdjacency:
    """Split each joint's neighbors by distance to the pose's gravity center.

    Row ``r`` of the centripetal matrix marks neighbors strictly closer to the
    center than ``r``; every other neighbor (ties included) goes to the
    centrifugal matrix.
    """
    pose = _as_pose(pose)
    J = topology.joint_count
    if pose.shape[0] != J:
        raise ValueError(f"pose has {pose.shape[0]} joints, topology {J}")
    dist = np.linalg.norm(pose - pose.mean(axis=0), axis=1)
    A = np.zeros((3, J, J))
    A[0] = np.eye(J)
    for a, b in topology.edges:
        for root, nbr in ((a, b), (b, a)):
            group = 1 if dist[nbr] < dist[root] else 2
            A[group, root, nbr] = 1.0
    return PartitionedAdjacency(A)


def normalize_adjacency(part: PartitionedAdjacency) -> PartitionedAdjacency:
    """Fill in ``L^-1/2 A L^-1/2`` per group, L the diagonal of row sums.

    Rows with zero sum get ``ZERO_DEGREE_EPS`` in place of the zero so every
    entry stays finite.
    """
    A = np.asarray(part.matrices, dtype=np.float64)
    if (A < 0).any():
        raise ValueError("adjacency matrices must be non-negative")
    deg = A.sum(axis=-1)
    deg = np.where(deg > 0, deg, ZERO_DEGREE_EPS)
    inv_sqrt = 1.0 / np.sqrt(deg)
    normalized = inv_sqrt[..., :, None] * A * inv_sqrt[..., None, :]
    return PartitionedAdjacency(part.matrices, normalized)


def sequence_adjacency(topology: SkeletonTopology, frames: np.ndarray) -> np.ndarray:
    """Normalized (3, J, J) adjacency from the temporal mean pose of ``frames`` (T x J x 3)."""
    mean_pose = np.asarray(frames, dtype=np.float64).mean(axis=0)
    return normalize_adjacency(partition_adjacency(topology, mean_pose)).normalized


def export_matrix_csv(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        for row in matrix:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
