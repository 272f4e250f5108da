"""Synthetic dataset generation: toy piano renderer and parametric room reverb.

The renderer is an additive toy instrument, not a physical model: each note
is a sum of eight harmonics with an exponential decay while held, and a
release decay whose time constant follows the sustain pedal — 0.1 s with
the pedal up, rising continuously to 2.0 s at full depth.  That makes
pedal depth audible in the release tails, which is all the robustness
experiments need.

Rooms are realized by an 8-line feedback delay network with a Householder
feedback matrix.  Per-line attenuation is set from the target decay time
(g = 10^(-3 d / RT60)), line lengths scale with the room size, and a
separate feedback-comb echo unit plus pre-delay and wet gain complete the
parameter set.  A dry room bypasses everything and returns its input
unchanged.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .containers import write_bytes_atomic, write_text_atomic
from .errors import DataError
from .midiio import MidiPerformance, cc64_to_frames, serialize_smf
from .targets import TAU_ON

SPEED_OF_SOUND = 343.0
N_FDN_LINES = 8
_LINE_SPREADS = np.array([1.00, 1.09, 1.23, 1.31, 1.47, 1.59, 1.73, 1.87])

RELEASE_TAU_UP = 0.1
RELEASE_TAU_FULL = 2.0
RENDER_TAIL_S = 3.0
PEAK_NORM = 0.9
STEREO_DECORRELATION_S = 0.0006

# Two toy timbres standing in for the two instrument presets: they differ
# in harmonic rolloff and natural (key-held) decay.
TIMBRE_PRESETS = {
    "bright_grand": {"rolloff": 0.72, "hold_tau_s": 2.6},
    "warm_grand": {"rolloff": 0.55, "hold_tau_s": 3.2},
}


@dataclass(frozen=True)
class RoomConfig:
    """One acoustic condition: reverb, size, pre-delay, and echo settings."""

    name: str
    label: str = ""
    mix_db: float | None = None
    duration_s: float | None = None
    size_m: float | None = None
    predelay_s: float = 0.0
    delay_mix: float = 0.0
    delay_amount_s: float = 0.0
    delay_feedback: float = 0.0
    piano_model: str = "bright_grand"

    def __post_init__(self):
        if self.duration_s is not None and self.duration_s < 0:
            raise DataError(f"{self.name}: reverb duration must be >= 0")
        if not 0 <= self.delay_mix < 1 or not 0 <= self.delay_feedback < 1:
            raise DataError(f"{self.name}: delay mix/feedback must lie in [0, 1)")
        if self.piano_model not in TIMBRE_PRESETS:
            raise DataError(
                f"{self.name}: unknown piano model '{self.piano_model}' "
                f"(have {sorted(TIMBRE_PRESETS)})"
            )

    @property
    def is_dry(self) -> bool:
        return self.mix_db is None or self.duration_s is None or self.duration_s == 0


def default_rooms() -> list[RoomConfig]:
    """The four stock acoustic conditions, dry through concert hall."""
    return [
        RoomConfig(name="R1", label="dry room", piano_model="bright_grand"),
        RoomConfig(
            name="R2", label="clean studio", mix_db=10.0, duration_s=0.4, size_m=12.0,
            predelay_s=0.0, delay_mix=0.06, delay_amount_s=0.060, delay_feedback=0.0,
            piano_model="bright_grand",
        ),
        RoomConfig(
            name="R3", label="concert hall", mix_db=50.0, duration_s=4.0, size_m=50.0,
            predelay_s=0.01, delay_mix=0.15, delay_amount_s=0.060, delay_feedback=0.05,
            piano_model="bright_grand",
        ),
        RoomConfig(
            name="R4", label="church", mix_db=10.0, duration_s=2.5, size_m=18.0,
            predelay_s=0.0, delay_mix=0.25, delay_amount_s=0.030, delay_feedback=0.0,
            piano_model="warm_grand",
        ),
    ]


def _parse_field(raw, unit_scale: dict[str, float]):
    """Parse values like '+10dB', '0.4s', '60ms', '12m', '6%', or '-'."""
    if raw is None or raw == "-" or raw == "":
        return None
    if isinstance(raw, (int, float)):
        return float(raw)
    text = str(raw).strip().lower().replace(" ", "")
    for suffix in sorted(unit_scale, key=len, reverse=True):
        if suffix and text.endswith(suffix):
            return float(text[: -len(suffix)]) * unit_scale[suffix]
    return float(text)


def room_from_dict(data: dict) -> RoomConfig:
    """Build a RoomConfig from a dict using the room-file field names."""
    return RoomConfig(
        name=data["name"],
        label=data.get("label", ""),
        mix_db=_parse_field(data.get("mix"), {"db": 1.0}),
        duration_s=_parse_field(data.get("dur"), {"s": 1.0, "ms": 1e-3}),
        size_m=_parse_field(data.get("size"), {"m": 1.0}),
        predelay_s=_parse_field(data.get("pred"), {"s": 1.0, "ms": 1e-3}) or 0.0,
        delay_mix=_parse_field(data.get("dmix"), {"%": 0.01}) or 0.0,
        delay_amount_s=_parse_field(data.get("damt"), {"s": 1.0, "ms": 1e-3}) or 0.0,
        delay_feedback=_parse_field(data.get("dfb"), {"%": 0.01}) or 0.0,
        piano_model=data.get("piano_model", "bright_grand"),
    )


def room_to_dict(room: RoomConfig) -> dict:
    return {
        "name": room.name,
        "label": room.label,
        "mix": None if room.mix_db is None else f"{room.mix_db:+g}dB",
        "dur": None if room.duration_s is None else f"{room.duration_s:g}s",
        "size": None if room.size_m is None else f"{room.size_m:g}m",
        "pred": f"{room.predelay_s:g}s",
        "dmix": f"{room.delay_mix * 100:g}%",
        "damt": f"{room.delay_amount_s * 1000:g}ms",
        "dfb": f"{room.delay_feedback * 100:g}%",
        "piano_model": room.piano_model,
    }


def load_rooms(path: str) -> list[RoomConfig]:
    with open(path) as fh:
        data = json.load(fh)
    rooms = [room_from_dict(entry) for entry in data["rooms"]]
    if len({r.name for r in rooms}) != len(rooms):
        raise DataError(f"{path}: duplicate room names")
    return rooms


def write_rooms(path: str, rooms: list[RoomConfig]) -> None:
    write_text_atomic(path, json.dumps({"rooms": [room_to_dict(r) for r in rooms]}, indent=2))


def release_time_constant(depth: np.ndarray) -> np.ndarray:
    """Release decay tau as a function of pedal depth.

    0.1 s below the on threshold, then rising linearly to 2.0 s at full
    depth; continuous at the threshold.
    """
    depth = np.asarray(depth, dtype=np.float64)
    scale = (depth - TAU_ON) / (1.0 - TAU_ON)
    return np.where(
        depth < TAU_ON,
        RELEASE_TAU_UP,
        RELEASE_TAU_UP + (RELEASE_TAU_FULL - RELEASE_TAU_UP) * scale,
    )


def toy_piano_render(
    perf: MidiPerformance,
    sample_rate: int = 44_100,
    preset: str = "bright_grand",
) -> np.ndarray:
    """Additive 8-harmonic rendering of a performance, peak-normalized to 0.9.

    Returns mono float samples covering the performance plus a fixed 3 s
    tail.  A zero-duration performance yields an empty array; a performance
    with no notes yields silence.
    """
    if preset not in TIMBRE_PRESETS:
        raise DataError(f"unknown timbre preset '{preset}'")
    timbre = TIMBRE_PRESETS[preset]
    if perf.duration_s <= 0:
        return np.zeros(0)
    n_total = int(math.ceil((perf.duration_s + RENDER_TAIL_S) * sample_rate))
    out = np.zeros(n_total)
    if not perf.notes:
        return out

    # Pedal-dependent release rate, integrated once over the whole timeline:
    # the attenuation between note-off and t is exp(-(R[t] - R[t_off])).
    frame_rate = 1000  # 1 ms resolution for the control curve
    depth = cc64_to_frames(perf, int(math.ceil(n_total / sample_rate * frame_rate)) + 1, frame_rate).values
    sample_depth = depth[np.minimum((np.arange(n_total) * frame_rate) // sample_rate, len(depth) - 1)]
    rate = 1.0 / release_time_constant(sample_depth)
    integral = np.concatenate([[0.0], np.cumsum(rate) / sample_rate])

    hold_tau = timbre["hold_tau_s"]
    rolloff = timbre["rolloff"]
    cutoff_nats = math.log(1e4)  # render until the release reaches -80 dB

    for note in perf.notes:
        n_on = int(round(note.onset_s * sample_rate))
        n_off = min(int(round(note.offset_s * sample_rate)), n_total - 1)
        if n_on >= n_total or n_off <= n_on:
            continue
        # End of the audible release: first sample where the integral has
        # grown by cutoff_nats since note-off.
        n_end = int(np.searchsorted(integral, integral[n_off] + cutoff_nats))
        n_end = min(max(n_end, n_off + 1), n_total)

        t = (np.arange(n_on, n_end) - n_on) / sample_rate
        # hold decay runs while the key is down and freezes at note-off,
        # so the post-off decay constant is exactly the pedal-driven one
        envelope = np.exp(-np.minimum(t, (n_off - n_on) / sample_rate) / hold_tau)
        release = np.exp(-(integral[n_off:n_end] - integral[n_off]))
        envelope[n_off - n_on :] *= release

        f0 = 440.0 * 2.0 ** ((note.pitch - 69) / 12.0)
        gains = np.array([rolloff ** (h - 1) for h in range(1, 9)])
        audible = np.array([f0 * h < 0.45 * sample_rate for h in range(1, 9)])
        gains = gains * audible
        if gains.sum() == 0:
            continue
        gains = gains / gains.sum() * (note.velocity / 127.0)
        wave = np.zeros_like(t)
        for h, gain in enumerate(gains, start=1):
            if gain > 0:
                wave += gain * np.sin(2.0 * math.pi * f0 * h * t)
        out[n_on:n_end] += wave * envelope

    peak = np.abs(out).max()
    if peak > 0:
        out *= PEAK_NORM / peak
    return out


def stereoize(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    """Duplicate mono audio to two channels with a small decorrelating delay."""
    shift = max(1, int(round(STEREO_DECORRELATION_S * sample_rate)))
    right = np.concatenate([np.zeros(shift), samples])[: len(samples)]
    return np.stack([samples, right], axis=1)


def echo_comb(x: np.ndarray, delay_s: float, feedback: float, sample_rate: int) -> np.ndarray:
    """Feedback comb echo path e[n] = x[n-D] + fb * e[n-D] (no dry term).

    With zero feedback the impulse response is a single repeat at the delay.
    """
    d = int(round(delay_s * sample_rate))
    if d < 1:
        raise DataError(f"echo delay must be at least one sample, got {delay_s} s")
    n = len(x)
    e = np.zeros(n)
    delayed = np.concatenate([np.zeros(d), x])[:n]
    e[:d] = delayed[:d]
    for start in range(d, n, d):
        end = min(start + d, n)
        e[start:end] = delayed[start:end] + feedback * e[start - d : end - d]
    return e


def _fdn_delays(room: RoomConfig, sample_rate: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x0F4D])
    jitter = 1.0 + 0.02 * rng.uniform(-1.0, 1.0, N_FDN_LINES)
    base_s = (room.size_m or 10.0) / SPEED_OF_SOUND
    delays = np.round(base_s * _LINE_SPREADS * jitter * sample_rate).astype(np.int64)
    delays = np.maximum(delays, 32)
    # keep lengths distinct so modes do not stack
    for i in range(1, len(delays)):
        while delays[i] <= delays[i - 1]:
            delays[i] += 1
    return delays


def fdn_reverb_tail(
    x: np.ndarray, room: RoomConfig, sample_rate: int, seed: int = 0
) -> np.ndarray:
    """Wet-only FDN output for mono input, same length as the input.

    Per-line gain 10^(-3 d_i / (fs * RT60)) gives the configured RT60; the
    Householder feedback matrix (I - 2/N) keeps the loop lossless apart
    from those gains.
    """
    if room.duration_s is None or room.duration_s <= 0:
        raise DataError(f"{room.name}: cannot run the FDN without a reverb duration")
    n = len(x)
    delays = _fdn_delays(room, sample_rate, seed)
    gains = np.power(10.0, -3.0 * delays / sample_rate / room.duration_s)
    max_delay = int(delays.max())
    block = int(delays.min())

    in_gain = 1.0 / math.sqrt(N_FDN_LINES)
    out_signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(N_FDN_LINES)])
    out_gain = out_signs / math.sqrt(N_FDN_LINES)

    lines = np.zeros((N_FDN_LINES, max_delay + n))
    wet = np.zeros(n)
    offsets = max_delay - delays  # line i's value at time t lives at lines[i, max_delay + t]
    for start in range(0, n, block):
        end = min(start + block, n)
        reads = np.empty((N_FDN_LINES, end - start))
        for i in range(N_FDN_LINES):
            lo = offsets[i] + start
            reads[i] = lines[i, lo : lo + (end - start)]
        reads *= gains[:, None]
        wet[start:end] = out_gain @ reads
        mixed = reads - (2.0 / N_FDN_LINES) * reads.sum(axis=0)
        lines[:, max_delay + start : max_delay + end] = mixed + in_gain * x[start:end]
    return wet


def reverb(
    samples: np.ndarray, room: RoomConfig, sample_rate: int, seed: int = 0
) -> np.ndarray:
    """Apply a room to mono [N] or stereo [N, 2] audio.

    Output = dry + wet_gain * pre-delayed FDN tail + delay_mix * echo, then
    a uniform rescale if the peak would exceed 0.99.  A dry room returns the
    input unchanged.
    """
    if room.is_dry:
        return samples
    mono = samples.ndim == 1
    x = samples[:, None] if mono else samples
    n = x.shape[0]
    predelay = int(round(room.predelay_s * sample_rate))
    wet_gain = 10.0 ** (room.mix_db / 20.0)

    out = np.empty_like(x, dtype=np.float64)
    for ch in range(x.shape[1]):
        channel = x[:, ch].astype(np.float64)
        wet = fdn_reverb_tail(channel, room, sample_rate, seed)
        if predelay > 0:
            wet = np.concatenate([np.zeros(predelay), wet])[:n]
        y = channel + wet_gain * wet
        if room.delay_mix > 0 and room.delay_amount_s > 0:
            y = y + room.delay_mix * echo_comb(
                channel, room.delay_amount_s, room.delay_feedback, sample_rate
            )
        out[:, ch] = y

    peak = np.abs(out).max()
    if peak > 0.99:
        out *= 0.99 / peak
    return out[:, 0] if mono else out


def room_impulse_response(
    room: RoomConfig, sample_rate: int, length_s: float | None = None, seed: int = 0
) -> np.ndarray:
    """Wet-path impulse response (pre-delay + FDN, no dry or echo path)."""
    if room.is_dry:
        raise DataError(f"{room.name}: a dry room has no reverb impulse response")
    if length_s is None:
        length_s = room.predelay_s + 0.8 * room.duration_s + 0.4
    n = int(round(length_s * sample_rate))
    impulse = np.zeros(n)
    impulse[0] = 1.0
    wet = fdn_reverb_tail(impulse, room, sample_rate, seed)
    predelay = int(round(room.predelay_s * sample_rate))
    if predelay > 0:
        wet = np.concatenate([np.zeros(predelay), wet])[:n]
    return wet


def schroeder_rt60(ir: np.ndarray, sample_rate: int, fit_db: tuple[float, float] = (-5.0, -25.0)) -> float:
    """RT60 from backward-integrated impulse-response energy.

    Fits a line to the Schroeder curve between the two dB levels and
    extrapolates to -60 dB.
    """
    energy = np.asarray(ir, dtype=np.float64) ** 2
    if energy.sum() <= 0:
        raise DataError("impulse response has no energy")
    edc = np.cumsum(energy[::-1])[::-1]
    db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_db
    mask = (db <= hi) & (db >= lo)
    if mask.sum() < 8:
        raise DataError("impulse response too short for the requested fit range")
    t = np.nonzero(mask)[0] / sample_rate
    slope, _ = np.polyfit(t, db[mask], 1)
    if slope >= 0:
        raise DataError("Schroeder curve is not decaying")
    return -60.0 / slope


def render_performance(
    perf: MidiPerformance, room: RoomConfig, sample_rate: int = 44_100, seed: int = 0
) -> np.ndarray:
    """Full render chain for one (performance, room) pair: stereo float samples."""
    mono = toy_piano_render(perf, sample_rate, preset=room.piano_model)
    if mono.size == 0:
        return np.zeros((0, 2))
    stereo = stereoize(mono, sample_rate)
    return reverb(stereo, room, sample_rate, seed)


def render_dataset(
    perfs: list[tuple[str, MidiPerformance]],
    rooms: list[RoomConfig],
    split: dict[str, str],
    out_dir: str,
    sample_rate: int = 44_100,
    seed: int = 0,
) -> list[dict]:
    """Render the performance x room grid and write audio, MIDI, and manifest.

    The split is piece-level: every room version of a piece shares the
    piece's split, so held-out musical content never leaks across rooms.
    """
    missing = [piece_id for piece_id, _ in perfs if piece_id not in split]
    if missing:
        raise DataError(f"split is missing pieces: {', '.join(missing)}")
    for value in split.values():
        if value not in ("train", "val", "test"):
            raise DataError(f"invalid split value '{value}'")

    from .features import save_wav  # local import to avoid a cycle at module load

    audio_dir = os.path.join(out_dir, "audio")
    midi_dir = os.path.join(out_dir, "midi")
    os.makedirs(audio_dir, exist_ok=True)
    os.makedirs(midi_dir, exist_ok=True)

    room_seeds = {room.name: seed + idx for idx, room in enumerate(rooms)}
    rows = []
    for piece_id, perf in perfs:
        midi_path = os.path.join(midi_dir, f"{piece_id}.mid")
        write_bytes_atomic(midi_path, serialize_smf(perf))
        dry_cache: dict[str, np.ndarray] = {}
        for room in rooms:
            if room.piano_model not in dry_cache:
                dry_cache[room.piano_model] = toy_piano_render(
                    perf, sample_rate, preset=room.piano_model
                )
            mono = dry_cache[room.piano_model]
            if mono.size == 0:
                raise DataError(f"{piece_id}: performance renders to empty audio")
            wet = reverb(stereoize(mono, sample_rate), room, sample_rate, room_seeds[room.name])
            audio_path = os.path.join(audio_dir, f"{piece_id}__{room.name}.wav")
            save_wav(audio_path, wet, sample_rate)
            rows.append(
                {
                    "piece_id": piece_id,
                    "room": room.name,
                    "split": split[piece_id],
                    "audio_path": audio_path,
                    "midi_path": midi_path,
                }
            )
    return rows


MANIFEST_FIELDS = ["piece_id", "room", "split", "audio_path", "midi_path"]


def write_manifest(path: str, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_FIELDS)
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in MANIFEST_FIELDS})
    write_text_atomic(path, buf.getvalue())


def load_manifest(path: str) -> list[dict]:
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        if set(MANIFEST_FIELDS) - set(row):
            raise DataError(f"{path}: manifest is missing required columns")
    return rows
