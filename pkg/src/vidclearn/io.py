"""Atomic file writes and the raw video file format."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_video(path, video: np.ndarray) -> None:
    """Little-endian float32, ``[C, T, H, W]`` row-major, no header."""
    atomic_write_bytes(path, np.ascontiguousarray(video, dtype="<f4").tobytes())


def read_video(path, dims) -> np.ndarray:
    shape = tuple(int(d) for d in dims)
    raw = Path(path).read_bytes()
    expected = 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {shape}, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
