"""Standard MIDI File parsing and the CC64 sustain controller curve.

Reads SMF formats 0 and 1 with a metrical division, applies the tempo map,
pairs note-on/note-off events (velocity-0 note-on counts as note-off), and
keeps the CC64 event stream exactly as it appears in the file.  The depth
curve sampler holds the most recent controller value at each 10 ms frame
boundary and normalizes to [0, 1] by dividing by 127.

CC66 (sostenuto) and CC67 (una corda) are parsed and discarded; only the
sustain pedal matters here.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MidiParseError

DEFAULT_TEMPO_US = 500_000  # microseconds per quarter note
WRITE_DIVISION = 480


@dataclass(frozen=True)
class NoteEvent:
    onset_s: float
    offset_s: float
    pitch: int
    velocity: int


@dataclass
class MidiPerformance:
    """Notes plus the time-ordered CC64 stream of one performance."""

    notes: list[NoteEvent] = field(default_factory=list)
    cc64_events: list[tuple[float, int]] = field(default_factory=list)
    duration_s: float = 0.0


@dataclass(frozen=True)
class DepthCurve:
    """Frame-wise pedal depth in [0, 1] at 100 fps."""

    values: np.ndarray
    frame_rate: int = 100


class _Reader:
    """Byte cursor that reports its offset in parse errors."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MidiParseError(f"unexpected end of data reading {n} bytes", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def read_u8(self) -> int:
        return self.read(1)[0]

    def read_varint(self) -> int:
        value = 0
        for _ in range(4):
            b = self.read_u8()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", self.pos)


def parse_smf(data: bytes) -> MidiPerformance:
    """Parse SMF format 0 or 1 bytes into a MidiPerformance."""
    reader = _Reader(data)
    if reader.read(4) != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    header_len = struct.unpack(">I", reader.read(4))[0]
    if header_len < 6:
        raise MidiParseError(f"header chunk too short ({header_len} bytes)", reader.pos)
    fmt, n_tracks, division = struct.unpack(">HHH", reader.read(6))
    reader.read(header_len - 6)
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE division is not supported", 12)
    if division == 0:
        raise MidiParseError("division of zero ticks per quarter", 12)

    # (tick, track_idx, event_idx) orders simultaneous events by file order.
    tempo_changes: list[tuple[int, int, int, int]] = []
    notes_raw: list[tuple[int, int, int, str, int, int]] = []  # +kind, pitch, velocity
    cc64_raw: list[tuple[int, int, int, int]] = []
    end_ticks = 0

    for track_idx in range(n_tracks):
        chunk_start = reader.pos
        chunk_type = reader.read(4)
        chunk_len = struct.unpack(">I", reader.read(4))[0]
        if chunk_type != b"MTrk":
            raise MidiParseError(f"expected MTrk chunk, got {chunk_type!r}", chunk_start)
        track = _Reader(data[reader.pos : reader.pos + chunk_len])
        if len(track.data) < chunk_len:
            raise MidiParseError("track chunk extends past end of file", reader.pos)
        reader.pos += chunk_len

        tick = 0
        running_status = 0
        event_idx = 0
        while track.pos < len(track.data):
            tick += track.read_varint()
            status = track.read_u8()
            if status < 0x80:
                if running_status == 0:
                    raise MidiParseError("data byte without running status", chunk_start + 8 + track.pos)
                track.pos -= 1
                status = running_status
            if status == 0xFF:
                meta_type = track.read_u8()
                length = track.read_varint()
                payload = track.read(length)
                if meta_type == 0x51:
                    if length != 3:
                        raise MidiParseError("malformed set-tempo event", chunk_start + 8 + track.pos)
                    tempo = int.from_bytes(payload, "big")
                    tempo_changes.append((tick, track_idx, event_idx, tempo))
                running_status = 0
            elif status in (0xF0, 0xF7):
                length = track.read_varint()
                track.read(length)
                running_status = 0
            else:
                running_status = status
                kind = status & 0xF0
                if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
                    d1, d2 = track.read_u8(), track.read_u8()
                elif kind in (0xC0, 0xD0):
                    d1, d2 = track.read_u8(), 0
                else:
                    raise MidiParseError(f"unknown status byte 0x{status:02x}", chunk_start + 8 + track.pos)
                if d1 > 127 or d2 > 127:
                    raise MidiParseError("data byte out of range", chunk_start + 8 + track.pos)
                if kind == 0x90 and d2 > 0:
                    notes_raw.append((tick, track_idx, event_idx, "on", d1, d2))
                elif kind == 0x80 or (kind == 0x90 and d2 == 0):
                    notes_raw.append((tick, track_idx, event_idx, "off", d1, d2))
                elif kind == 0xB0 and d1 == 64:
                    cc64_raw.append((tick, track_idx, event_idx, d2))
            event_idx += 1
        end_ticks = max(end_ticks, tick)

    to_seconds = _tempo_map(tempo_changes, division)

    # Pair note-on with the earliest open note of the same pitch (FIFO).
    notes: list[NoteEvent] = []
    open_notes: dict[int, list[tuple[int, int]]] = {}
    for tick, _track, _idx, kind, pitch, velocity in sorted(notes_raw, key=lambda e: e[:3]):
        if kind == "on":
            open_notes.setdefault(pitch, []).append((tick, velocity))
        else:
            stack = open_notes.get(pitch)
            if stack:
                on_tick, on_vel = stack.pop(0)
                notes.append(NoteEvent(to_seconds(on_tick), to_seconds(tick), pitch, on_vel))
    for pitch, stack in open_notes.items():
        for on_tick, on_vel in stack:  # close dangling notes at end of track
            notes.append(NoteEvent(to_seconds(on_tick), to_seconds(end_ticks), pitch, on_vel))
    notes.sort(key=lambda n: (n.onset_s, n.pitch))

    cc64 = [(to_seconds(tick), value) for tick, _t, _i, value in sorted(cc64_raw, key=lambda e: e[:3])]
    duration = to_seconds(end_ticks)
    if notes:
        duration = max(duration, max(n.offset_s for n in notes))
    if cc64:
        duration = max(duration, cc64[-1][0])
    return MidiPerformance(notes=notes, cc64_events=cc64, duration_s=duration)


def _tempo_map(tempo_changes: list[tuple[int, int, int, int]], division: int):
    """Piecewise-linear tick -> seconds conversion from set-tempo events."""
    changes: list[tuple[int, int]] = [(0, DEFAULT_TEMPO_US)]
    for tick, _track, _idx, tempo in sorted(tempo_changes, key=lambda e: e[:3]):
        if tick == changes[-1][0]:
            changes[-1] = (tick, tempo)
        else:
            changes.append((tick, tempo))

    boundaries = [0.0]
    for i in range(1, len(changes)):
        dt_ticks = changes[i][0] - changes[i - 1][0]
        boundaries.append(boundaries[-1] + dt_ticks * changes[i - 1][1] / (division * 1e6))

    change_ticks = [c[0] for c in changes]

    def to_seconds(tick: int) -> float:
        idx = bisect.bisect_right(change_ticks, tick) - 1
        return boundaries[idx] + (tick - changes[idx][0]) * changes[idx][1] / (division * 1e6)

    return to_seconds


def serialize_smf(perf: MidiPerformance, division: int = WRITE_DIVISION) -> bytes:
    """Write a MidiPerformance as a format-0 SMF at the default tempo.

    Times are quantized to the tick grid, so a parse -> serialize -> parse
    round trip reproduces every event within one tick.
    """
    ticks_per_second = division * 1e6 / DEFAULT_TEMPO_US

    events: list[tuple[int, int, bytes]] = []  # (tick, sort_rank, payload)
    events.append((0, 0, bytes([0xFF, 0x51, 0x03]) + DEFAULT_TEMPO_US.to_bytes(3, "big")))
    for time_s, value in perf.cc64_events:
        tick = round(time_s * ticks_per_second)
        events.append((tick, 1, bytes([0xB0, 64, value & 0x7F])))
    for note in perf.notes:
        on_tick = round(note.onset_s * ticks_per_second)
        off_tick = max(on_tick + 1, round(note.offset_s * ticks_per_second))
        events.append((on_tick, 2, bytes([0x90, note.pitch & 0x7F, note.velocity & 0x7F])))
        events.append((off_tick, 2, bytes([0x80, note.pitch & 0x7F, 0x40])))
    end_tick = max(
        [round(perf.duration_s * ticks_per_second)] + [tick for tick, _r, _p in events]
    )
    events.sort(key=lambda e: (e[0], e[1]))

    body = bytearray()
    prev_tick = 0
    for tick, _rank, payload in events:
        body += _varint(tick - prev_tick)
        body += payload
        prev_tick = tick
    body += _varint(end_tick - prev_tick) + bytes([0xFF, 0x2F, 0x00])

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, division)
    return header + b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def _varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def cc64_to_frames(perf: MidiPerformance, n_frames: int, frame_rate: int = 100) -> DepthCurve:
    """Sample the CC64 stream onto the frame grid by zero-order hold.

    Frame t takes the most recent event value at or before t / frame_rate
    seconds, divided by 127; before the first event the pedal is up (0).
    """
    if n_frames < 1:
        raise ValueError(f"frame count must be >= 1, got {n_frames}")
    values = np.zeros(n_frames, dtype=np.float64)
    if perf.cc64_events:
        times = np.array([t for t, _v in perf.cc64_events])
        levels = np.array([v / 127.0 for _t, v in perf.cc64_events])
        frame_times = np.arange(n_frames) / frame_rate
        idx = np.searchsorted(times, frame_times, side="right") - 1
        has_event = idx >= 0
        values[has_event] = levels[idx[has_event]]
    return DepthCurve(values=values, frame_rate=frame_rate)
