"""Supervision targets: frame depth, soft onset/offset labels, global depth.

Pedal onsets are rising edges of the depth curve through the on/off
threshold and offsets are falling edges; frame 0 compares against an
implicit preceding 0, so a segment that starts with the pedal already down
counts an onset at its first frame.  Each event becomes a triangular soft
label of height 1 centered on the event frame.  The global target is the
mean depth over the segment's valid frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .containers import load_curves, save_curves
from .errors import DataError

# CC >= 64 counts as pedal on; 63.5/127 is that split in normalized units.
TAU_ON = 63.5 / 127.0
SOFT_LABEL_HALF_WIDTH = 2


@dataclass(frozen=True)
class PedalEvent:
    frame: int
    kind: Literal["onset", "offset"]


@dataclass(frozen=True)
class TargetSet:
    """All four supervision targets for one 500-frame segment."""

    depth: np.ndarray
    onset: np.ndarray
    offset: np.ndarray
    global_depth: float
    valid_frames: int


def detect_events(depth: np.ndarray, tau_on: float = TAU_ON) -> list[PedalEvent]:
    """Find threshold crossings; frame 0 is compared against an implicit 0."""
    depth = np.asarray(depth, dtype=np.float64)
    prev = np.concatenate([[0.0], depth[:-1]])
    onsets = np.nonzero((prev < tau_on) & (depth >= tau_on))[0]
    offsets = np.nonzero((prev >= tau_on) & (depth < tau_on))[0]
    events = [PedalEvent(int(f), "onset") for f in onsets]
    events += [PedalEvent(int(f), "offset") for f in offsets]
    events.sort(key=lambda e: e.frame)
    return events


def soften(
    events: list[PedalEvent],
    n_frames: int,
    half_width: int = SOFT_LABEL_HALF_WIDTH,
    kind: str | None = None,
) -> np.ndarray:
    """Render events as triangular bumps, combined by pointwise max.

    A bump at frame e has value 1 - |t - e| / (half_width + 1) for
    |t - e| <= half_width; bumps crossing the segment edge are truncated.
    """
    label = np.zeros(n_frames, dtype=np.float64)
    for event in events:
        if kind is not None and event.kind != kind:
            continue
        if not 0 <= event.frame < n_frames:
            raise DataError(f"event frame {event.frame} outside segment of {n_frames} frames")
        lo = max(0, event.frame - half_width)
        hi = min(n_frames - 1, event.frame + half_width)
        for t in range(lo, hi + 1):
            label[t] = max(label[t], 1.0 - abs(t - event.frame) / (half_width + 1))
    return label


def build_targets(
    depth_segment: np.ndarray,
    valid_frames: int | None = None,
    tau_on: float = TAU_ON,
    half_width: int = SOFT_LABEL_HALF_WIDTH,
) -> TargetSet:
    """Build the four targets for one segment's depth values.

    ``depth_segment`` holds the full (possibly zero-padded) window; events
    are detected on the valid prefix only, and soft labels are truncated at
    the valid boundary so padding stays exactly zero.
    """
    depth = np.asarray(depth_segment, dtype=np.float64)
    n_frames = depth.shape[0]
    if valid_frames is None:
        valid_frames = n_frames
    if not 0 < valid_frames <= n_frames:
        raise DataError(f"valid_frames {valid_frames} out of range for window {n_frames}")
    if np.any((depth < 0) | (depth > 1)):
        raise DataError("depth values must lie in [0, 1]")

    events = detect_events(depth[:valid_frames], tau_on)
    onset = np.zeros(n_frames)
    offset = np.zeros(n_frames)
    onset[:valid_frames] = soften(events, valid_frames, half_width, kind="onset")
    offset[:valid_frames] = soften(events, valid_frames, half_width, kind="offset")
    return TargetSet(
        depth=depth.copy(),
        onset=onset,
        offset=offset,
        global_depth=float(depth[:valid_frames].mean()),
        valid_frames=int(valid_frames),
    )


def save_target_set(path: str, targets: TargetSet, frame_rate: int = 100) -> None:
    """Cache a TargetSet as a PDGT file: four channels plus the global scalar.

    Channels are [depth, onset, offset, validity mask]; the trailing scalar
    is the global depth.
    """
    n = targets.depth.shape[0]
    mask = np.zeros(n)
    mask[: targets.valid_frames] = 1.0
    channels = np.stack([targets.depth, targets.onset, targets.offset, mask], axis=1)
    save_curves(path, channels, scalars=(targets.global_depth,), frame_rate=frame_rate)


def load_target_set(path: str) -> TargetSet:
    values, scalars, _rate = load_curves(path)
    if values.shape[1] != 4 or len(scalars) != 1:
        raise DataError(f"{path}: not a 4-channel target-set cache")
    valid = int(values[:, 3].sum())
    return TargetSet(
        depth=values[:, 0].astype(np.float64),
        onset=values[:, 1].astype(np.float64),
        offset=values[:, 2].astype(np.float64),
        global_depth=scalars[0],
        valid_frames=valid,
    )
