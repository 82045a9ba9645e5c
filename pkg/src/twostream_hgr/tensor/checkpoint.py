"""Plain-text container of named tensors.

Layout::

    # twostream-checkpoint 1
    # key = value              (zero or more metadata lines)
    name d1 d2 ...             (header: tensor name then its extents)
    v1 v2 v3 ...               (row-major values on one line)
    name2 ...

A scalar tensor has a header with no extents. Values are written with 17
significant digits, which round-trips IEEE doubles exactly.
"""
from __future__ import annotations

import os
from typing import Mapping

import numpy as np

MAGIC = "# twostream-checkpoint 1"


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray],
                    meta: Mapping[str, str] | None = None) -> None:
    lines = [MAGIC]
    for key, value in (meta or {}).items():
        if "\n" in str(value) or "=" in key:
            raise ValueError(f"metadata entry {key!r} cannot be stored")
        lines.append(f"# {key} = {value}")
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(" ".join([name, *map(str, arr.shape)]))
        lines.append(" ".join(f"{v:.17g}" for v in arr.reshape(-1)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, value = lines[i][1:].partition("=")
        if not sep:
            raise ValueError(f"{path}:{i + 1}: malformed metadata line")
        meta[key.strip()] = value.strip()
        i += 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        header = lines[i].split()
        name, shape = header[0], tuple(int(s) for s in header[1:])
        if i + 1 >= len(lines):
            raise ValueError(f"{path}:{i + 1}: header without values")
        values = np.array(lines[i + 1].split(), dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ValueError(f"{path}:{i + 2}: expected {int(np.prod(shape))} values for {name}, got {values.size}")
        tensors[name] = values.reshape(shape)
        i += 2
    return tensors, meta
