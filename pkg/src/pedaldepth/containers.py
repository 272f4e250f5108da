"""Binary cache containers for features and frame-aligned target curves.

Two little-endian formats share one layout style:

``PDFE`` (features, one file per piece)
    magic ``PDFE`` | version u32 | T u32 | F u32 | frame_rate u32,
    followed by a row-major ``[T, F]`` float32 payload.

``PDGT`` (targets / ground-truth curves)
    magic ``PDGT`` | version u32 | T u32 | C u32 | frame_rate u32 | K u32,
    followed by a row-major ``[T, C]`` float32 payload and K float32
    trailing scalars.  A piece-level depth curve is ``C=1, K=0``; a
    segment-level target set stores its curves as channels plus scalars.

All writes are atomic (temp file in the same directory, then rename), so a
killed run never leaves a truncated file that a later stage would accept.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import DataError

FEATURE_MAGIC = b"PDFE"
TARGET_MAGIC = b"PDGT"
CONTAINER_VERSION = 1


def write_bytes_atomic(path: str, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename in one directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def save_features(path: str, values: np.ndarray, frame_rate: int = 100) -> None:
    """Serialize a [T, F] feature matrix into a PDFE file."""
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {values.shape}")
    t, f = values.shape
    header = FEATURE_MAGIC + struct.pack("<4I", CONTAINER_VERSION, t, f, frame_rate)
    write_bytes_atomic(path, header + values.tobytes())


def load_features(path: str) -> tuple[np.ndarray, int]:
    """Read a PDFE file; returns (values [T, F] float32, frame_rate)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a PDFE feature cache")
    version, t, f, frame_rate = struct.unpack("<4I", raw[4:20])
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported PDFE version {version}")
    expected = 20 + 4 * t * f
    if len(raw) != expected:
        raise DataError(f"{path}: truncated PDFE payload ({len(raw)} != {expected} bytes)")
    values = np.frombuffer(raw, dtype="<f4", offset=20).reshape(t, f)
    return values.copy(), frame_rate


def save_curves(
    path: str,
    values: np.ndarray,
    scalars: tuple[float, ...] = (),
    frame_rate: int = 100,
) -> None:
    """Serialize [T] or [T, C] curve data plus trailing scalars into a PDGT file."""
    values = np.asarray(values, dtype="<f4")
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2:
        raise DataError(f"curve data must be 1-D or 2-D, got shape {values.shape}")
    values = np.ascontiguousarray(values)
    t, c = values.shape
    header = TARGET_MAGIC + struct.pack(
        "<5I", CONTAINER_VERSION, t, c, frame_rate, len(scalars)
    )
    tail = np.asarray(scalars, dtype="<f4").tobytes()
    write_bytes_atomic(path, header + values.tobytes() + tail)


def load_curves(path: str) -> tuple[np.ndarray, tuple[float, ...], int]:
    """Read a PDGT file; returns (values [T, C] float32, scalars, frame_rate)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 24 or raw[:4] != TARGET_MAGIC:
        raise DataError(f"{path}: not a PDGT target cache")
    version, t, c, frame_rate, k = struct.unpack("<5I", raw[4:24])
    if version != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported PDGT version {version}")
    expected = 24 + 4 * (t * c + k)
    if len(raw) != expected:
        raise DataError(f"{path}: truncated PDGT payload ({len(raw)} != {expected} bytes)")
    values = np.frombuffer(raw, dtype="<f4", offset=24, count=t * c).reshape(t, c)
    scalars = tuple(
        float(x) for x in np.frombuffer(raw, dtype="<f4", offset=24 + 4 * t * c, count=k)
    )
    return values.copy(), scalars, frame_rate
