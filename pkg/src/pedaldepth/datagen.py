"""Small synthetic MIDI corpora with known, diverse pedaling gestures.

Each generated piece pairs a stream of random notes with a CC64 curve drawn
from one gesture family: full legato changes, half-pedal wandering, rapid
flutter, ramps, stepped levels, or a constant hold.  The exact gesture
parameters ride along as a sidecar record so tests can assert against the
curve that was actually generated.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .containers import write_bytes_atomic, write_text_atomic
from .errors import DataError
from .midiio import MidiPerformance, NoteEvent, serialize_smf

GESTURE_KINDS = (
    "legato_full_change",
    "half_pedal",
    "flutter",
    "ramp",
    "step",
    "constant",
)


@dataclass(frozen=True)
class GestureSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GESTURE_KINDS:
            raise DataError(f"unknown gesture kind '{self.kind}' (have {GESTURE_KINDS})")


def gesture_cc_events(
    spec: GestureSpec, duration_s: float, rng: np.random.Generator
) -> list[tuple[float, int]]:
    """CC64 event list (time_s, value 0-127) realizing one gesture."""
    p = spec.params
    events: list[tuple[float, int]] = []

    if spec.kind == "constant":
        value = int(p.get("depth_cc", rng.choice([0, 70, 85, 100, 127])))
        events.append((0.0, value))

    elif spec.kind == "step":
        levels = p.get("levels")
        hold = float(p.get("hold_s", rng.uniform(1.0, 2.0)))
        t = 0.0
        while t < duration_s:
            if levels is not None:
                value = int(levels[len(events) % len(levels)])
            else:
                value = int(rng.choice([0, 0, 70, 85, 100, 115, 127]))
            events.append((round(t, 4), value))
            t += hold

    elif spec.kind == "ramp":
        lo = int(p.get("lo_cc", 0))
        hi = int(p.get("hi_cc", 127))
        period = float(p.get("period_s", rng.uniform(3.0, 6.0)))
        rate_hz = float(p.get("event_rate_hz", 50.0))
        n_events = int(duration_s * rate_hz)
        for k in range(n_events):
            t = k / rate_hz
            phase = (t % period) / period  # rising sawtooth, then snap back
            value = int(round(lo + (hi - lo) * phase))
            events.append((round(t, 4), value))

    elif spec.kind == "half_pedal":
        lo = int(p.get("lo_cc", 48))
        hi = int(p.get("hi_cc", 80))
        rate_hz = float(p.get("event_rate_hz", 25.0))
        sigma = float(p.get("walk_sigma", 6.0))
        value = float(rng.integers(lo, hi + 1))
        n_events = int(duration_s * rate_hz)
        for k in range(n_events):
            value = float(np.clip(value + rng.normal(0.0, sigma), lo, hi))
            events.append((round(k / rate_hz, 4), int(round(value))))

    elif spec.kind == "flutter":
        rate_hz = float(p.get("rate_hz", rng.uniform(3.0, 6.0)))
        high = int(p.get("high_cc", 112))
        low = int(p.get("low_cc", 8))
        half_period = 1.0 / (2.0 * rate_hz)
        k = 0
        while (t := k * half_period) < duration_s:
            events.append((round(t, 4), high if k % 2 == 0 else low))
            k += 1

    elif spec.kind == "legato_full_change":
        dip_every = float(p.get("change_every_s", rng.uniform(1.0, 2.0)))
        dip_len = float(p.get("dip_s", 0.08))
        events.append((0.0, 127))
        t = dip_every
        while t < duration_s - dip_len:
            events.append((round(t, 4), 0))
            events.append((round(t + dip_len, 4), 127))
            t += dip_every

    return events


def random_notes(
    duration_s: float,
    rng: np.random.Generator,
    rate_hz: float = 3.0,
    pitch_range: tuple[int, int] = (36, 90),
) -> list[NoteEvent]:
    """Quasi-regular random notes so the audio always carries pedal cues."""
    notes = []
    t = float(rng.uniform(0.0, 0.2))
    while t < duration_s - 0.1:
        pitch = int(rng.integers(pitch_range[0], pitch_range[1] + 1))
        velocity = int(rng.integers(45, 106))
        length = float(rng.uniform(0.15, 0.7))
        notes.append(
            NoteEvent(
                onset_s=round(t, 4),
                offset_s=round(min(t + length, duration_s), 4),
                pitch=pitch,
                velocity=velocity,
            )
        )
        t += float(rng.exponential(1.0 / rate_hz) + 0.05)
    return notes


def generate_piece(
    spec: GestureSpec,
    duration_s: float,
    rng: np.random.Generator,
    note_rate_hz: float = 3.0,
) -> MidiPerformance:
    """One performance: random notes plus the gesture's CC64 curve."""
    if duration_s <= 0:
        raise DataError(f"piece duration must be positive, got {duration_s}")
    notes = random_notes(duration_s, rng, rate_hz=note_rate_hz)
    cc64 = gesture_cc_events(spec, duration_s, rng)
    return MidiPerformance(notes=notes, cc64_events=cc64, duration_s=duration_s)


def generate_corpus(
    n_pieces: int,
    seed: int = 0,
    duration_s: float = 15.0,
    gestures: tuple[str, ...] = GESTURE_KINDS,
    note_rate_hz: float = 3.0,
) -> list[tuple[str, MidiPerformance, GestureSpec]]:
    """Deterministic corpus: piece i cycles through the gesture kinds."""
    if n_pieces < 1:
        raise DataError(f"n_pieces must be >= 1, got {n_pieces}")
    corpus = []
    for i in range(n_pieces):
        rng = np.random.default_rng([seed, i])
        spec = GestureSpec(kind=gestures[i % len(gestures)])
        perf = generate_piece(spec, duration_s, rng, note_rate_hz=note_rate_hz)
        corpus.append((f"piece{i:03d}", perf, spec))
    return corpus


def write_corpus(
    out_dir: str,
    corpus: list[tuple[str, MidiPerformance, GestureSpec]],
) -> None:
    """Write each piece as an SMF plus one gestures.json sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    sidecar = {}
    for piece_id, perf, spec in corpus:
        write_bytes_atomic(os.path.join(out_dir, f"{piece_id}.mid"), serialize_smf(perf))
        sidecar[piece_id] = {
            "kind": spec.kind,
            "params": spec.params,
            "n_notes": len(perf.notes),
            "n_cc64_events": len(perf.cc64_events),
            "duration_s": perf.duration_s,
        }
    write_text_atomic(
        os.path.join(out_dir, "gestures.json"), json.dumps(sidecar, indent=2, sort_keys=True)
    )


def split_pieces(
    piece_ids: list[str],
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
) -> dict[str, str]:
    """Deterministic piece-level train/val/test split."""
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DataError(f"split fractions must sum to 1, got {fractions}")
    ids = sorted(piece_ids)
    order = np.random.default_rng([seed, 0x5B117]).permutation(len(ids))
    n_train = max(1, int(round(fractions[0] * len(ids))))
    n_val = max(1, int(round(fractions[1] * len(ids)))) if len(ids) > 2 else 0
    split = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split[ids[idx]] = "train"
        elif rank < n_train + n_val:
            split[ids[idx]] = "val"
        else:
            split[ids[idx]] = "test"
    if "test" not in split.values() and len(ids) > 1:
        last = ids[int(order[-1])]
        split[last] = "test"
    return split
