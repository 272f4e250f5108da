import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pedaldepth.errors import MidiParseError
from pedaldepth.midiio import (
    DepthCurve,
    MidiPerformance,
    NoteEvent,
    cc64_to_frames,
    parse_smf,
    serialize_smf,
)


def smf_bytes(track_events: bytes, division: int = 480, fmt: int = 0) -> bytes:
    """Hand-assemble a one-track SMF for fixtures."""
    track = track_events + bytes([0x00, 0xFF, 0x2F, 0x00])
    return (
        b"MThd"
        + struct.pack(">IHHH", 6, fmt, 1, division)
        + b"MTrk"
        + struct.pack(">I", len(track))
        + track
    )


def zero_order_hold_oracle(events, t_seconds):
    """Linear-scan oracle: the last event at or before t wins, else 0."""
    value = 0.0
    for time_s, v in events:
        if time_s <= t_seconds:
            value = v / 127.0
    return value


class TestParse:
    def test_single_cc64_event(self):
        # delta 0, CC64=127 on channel 0; tempo defaults to 500000 us/quarter
        track = bytes([0x00, 0xB0, 64, 127])
        perf = parse_smf(smf_bytes(track, division=480))
        assert perf.cc64_events == [(0.0, 127)]
        assert perf.notes == []

    def test_empty_track(self):
        perf = parse_smf(smf_bytes(b""))
        assert perf.notes == [] and perf.cc64_events == [] and perf.duration_s == 0.0

    def test_tempo_change_piecewise_integration(self):
        # tempo 500000 at 0, 250000 at tick 240, CC64 event at tick 480
        track = (
            bytes([0x00, 0xFF, 0x51, 0x03]) + (500000).to_bytes(3, "big")
            + bytes([0x81, 0x70, 0xFF, 0x51, 0x03]) + (250000).to_bytes(3, "big")  # delta 240
            + bytes([0x81, 0x70, 0xB0, 64, 100])  # delta 240 -> tick 480
        )
        perf = parse_smf(smf_bytes(track, division=480))
        # oracle: 240 ticks at 500000/480 us + 240 ticks at 250000/480 us
        expected = 240 * 500000 / (480 * 1e6) + 240 * 250000 / (480 * 1e6)
        assert expected == 0.375
        assert perf.cc64_events == [(0.375, 100)]

    def test_note_on_velocity_zero_is_note_off(self):
        track = bytes([0x00, 0x90, 60, 80, 0x60, 0x90, 60, 0])  # delta 96 apart
        perf = parse_smf(smf_bytes(track, division=480))
        assert len(perf.notes) == 1
        note = perf.notes[0]
        assert note.pitch == 60 and note.velocity == 80
        assert note.onset_s == 0.0 and abs(note.offset_s - 0.1) < 1e-12

    def test_running_status(self):
        track = bytes([0x00, 0xB0, 64, 10, 0x10, 64, 20])  # second event reuses 0xB0
        perf = parse_smf(smf_bytes(track, division=480))
        assert [v for _t, v in perf.cc64_events] == [10, 20]

    def test_other_pedals_parsed_but_ignored(self):
        track = bytes([0x00, 0xB0, 66, 127, 0x00, 0xB0, 67, 127, 0x00, 0xB0, 64, 5])
        perf = parse_smf(smf_bytes(track))
        assert [v for _t, v in perf.cc64_events] == [5]

    def test_malformed_header_offset(self):
        with pytest.raises(MidiParseError) as err:
            parse_smf(b"XXhd" + b"\x00" * 20)
        assert err.value.offset == 0

    def test_truncated_track_reports_offset(self):
        good = smf_bytes(bytes([0x00, 0xB0, 64, 127]))
        with pytest.raises(MidiParseError) as err:
            parse_smf(good[:-3])
        assert err.value.offset > 0

    def test_smpte_division_rejected(self):
        data = b"MThd" + struct.pack(">IHHH", 6, 0, 1, 0xE250) + b"MTrk" + struct.pack(">I", 4) + bytes([0, 0xFF, 0x2F, 0])
        with pytest.raises(MidiParseError) as err:
            parse_smf(data)
        assert "SMPTE" in str(err.value)

    def test_format_2_rejected(self):
        with pytest.raises(MidiParseError):
            parse_smf(smf_bytes(b"", fmt=2))


class TestRoundTrip:
    @given(st.data())
    def test_roundtrip_within_one_tick(self, data):
        n_notes = data.draw(st.integers(0, 8))
        n_cc = data.draw(st.integers(0, 12))
        notes = []
        for _ in range(n_notes):
            onset = data.draw(st.floats(0, 8, allow_nan=False, width=32))
            length = data.draw(st.floats(0.05, 2, allow_nan=False, width=32))
            notes.append(
                NoteEvent(
                    onset_s=round(onset, 3),
                    offset_s=round(onset + length, 3),
                    pitch=data.draw(st.integers(21, 108)),
                    velocity=data.draw(st.integers(1, 127)),
                )
            )
        times = sorted(round(data.draw(st.floats(0, 9, allow_nan=False, width=32)), 3) for _ in range(n_cc))
        cc = [(t, data.draw(st.integers(0, 127))) for t in times]
        perf = MidiPerformance(notes=notes, cc64_events=cc, duration_s=10.0)

        reparsed = parse_smf(serialize_smf(perf))
        tick_s = 1.0 / 960.0  # division 480 at 500000 us/quarter

        assert len(reparsed.cc64_events) == len(cc)
        for (t0, v0), (t1, v1) in zip(sorted(cc), reparsed.cc64_events):
            assert v0 == v1 and abs(t0 - t1) <= tick_s

        assert len(reparsed.notes) == len(notes)
        for orig, new in zip(sorted(notes, key=lambda n: (n.onset_s, n.pitch)), reparsed.notes):
            assert orig.pitch == new.pitch and orig.velocity == new.velocity
            assert abs(orig.onset_s - new.onset_s) <= tick_s
            assert abs(orig.offset_s - new.offset_s) <= tick_s

    def test_double_roundtrip_is_exact(self):
        perf = MidiPerformance(
            notes=[NoteEvent(0.25, 1.5, 60, 90), NoteEvent(0.5, 0.875, 72, 40)],
            cc64_events=[(0.0, 127), (1.0, 64), (1.0, 63), (2.0, 0)],
            duration_s=3.0,
        )
        once = parse_smf(serialize_smf(perf))
        twice = parse_smf(serialize_smf(once))
        assert once == twice


class TestCc64ToFrames:
    def test_no_events_is_all_zero(self):
        curve = cc64_to_frames(MidiPerformance(duration_s=5.0), 500)
        assert curve.values.shape == (500,)
        assert not curve.values.any()

    def test_full_press_held(self):
        perf = MidiPerformance(cc64_events=[(0.0, 127)], duration_s=1.0)
        assert (cc64_to_frames(perf, 100).values == 1.0).all()

    def test_event_between_frames(self):
        perf = MidiPerformance(cc64_events=[(1.234, 64)], duration_s=5.0)
        values = cc64_to_frames(perf, 500).values
        assert not values[:124].any()
        assert np.allclose(values[124:], 64 / 127)
        # dense-grid oracle at a few frame times
        for frame in (0, 123, 124, 200, 499):
            assert values[frame] == zero_order_hold_oracle(perf.cc64_events, frame / 100)

    def test_duplicate_event_invariance(self):
        base = MidiPerformance(cc64_events=[(0.5, 80), (1.0, 30)], duration_s=2.0)
        dup = MidiPerformance(cc64_events=[(0.5, 80), (0.5, 80), (1.0, 30)], duration_s=2.0)
        assert np.array_equal(cc64_to_frames(base, 200).values, cc64_to_frames(dup, 200).values)

    def test_simultaneous_events_last_wins(self):
        perf = MidiPerformance(cc64_events=[(1.0, 90), (1.0, 20)], duration_s=2.0)
        values = cc64_to_frames(perf, 200).values
        assert values[100] == 20 / 127

    @given(st.lists(st.tuples(st.floats(0, 4.9, allow_nan=False), st.integers(0, 127)), max_size=20))
    def test_range_property(self, raw_events):
        events = sorted((round(t, 3), v) for t, v in raw_events)
        perf = MidiPerformance(cc64_events=events, duration_s=5.0)
        values = cc64_to_frames(perf, 500).values
        scaled = values * 127
        assert np.allclose(scaled, np.round(scaled))
        assert ((values >= 0) & (values <= 1)).all()
