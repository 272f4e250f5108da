import numpy as np
import pytest
from hypothesis import given, strategies as st

from pedaldepth import containers
from pedaldepth.errors import DataError
from pedaldepth.features import (
    HOP_LENGTH,
    LOG_EPS,
    N_FEATURES,
    N_MELS,
    SAMPLE_RATE,
    WINDOW_LENGTH,
    AudioClip,
    FeatureMatrix,
    build_features,
    log_mel,
    mel_filterbank,
    mfcc,
    resample,
    segment,
    stft,
    _hann_window,
)


def naive_dct2_ortho(x: np.ndarray) -> np.ndarray:
    """O(n^2) orthonormal DCT-II used as the MFCC oracle."""
    n = len(x)
    out = np.zeros(n)
    for k in range(n):
        scale = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
        out[k] = scale * sum(x[m] * np.cos(np.pi * (2 * m + 1) * k / (2 * n)) for m in range(n))
    return out


class TestResample:
    def test_dc_preserved(self):
        clip = AudioClip(samples=np.full(44100, 0.5), sample_rate=44100)
        out = resample(clip, 16000)
        assert len(out.samples) == 16000
        interior = out.samples[200:-200]
        assert np.abs(interior - 0.5).max() < 1e-3

    def test_sine_rms_preserved(self):
        t = np.arange(44100) / 44100
        clip = AudioClip(samples=np.sin(2 * np.pi * 440 * t), sample_rate=44100)
        out = resample(clip, 16000)
        rms_in = 1.0 / np.sqrt(2)  # analytic RMS of a unit sine
        rms_out = np.sqrt(np.mean(out.samples**2))
        assert abs(rms_out - rms_in) / rms_in < 0.01

    def test_same_rate_passthrough(self):
        samples = np.random.default_rng(0).uniform(-1, 1, 1000)
        clip = AudioClip(samples=samples, sample_rate=16000)
        out = resample(clip, 16000)
        assert out.samples is samples

    def test_output_length_rule(self):
        for n in (44100, 44101, 12345):
            clip = AudioClip(samples=np.zeros(n), sample_rate=44100)
            assert len(resample(clip, 16000).samples) == round(n * 16000 / 44100)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            resample(AudioClip(samples=np.zeros(0), sample_rate=44100), 16000)

    def test_nonfinite_rejected(self):
        bad = np.array([0.0, np.nan, 0.0])
        with pytest.raises(DataError):
            resample(AudioClip(samples=bad, sample_rate=44100), 16000)


class TestStft:
    def test_one_second_gives_101_frames(self):
        clip = AudioClip(samples=np.random.default_rng(0).normal(0, 0.1, 16000), sample_rate=16000)
        assert stft(clip).shape == (101, WINDOW_LENGTH // 2 + 1)

    def test_dc_energy_confined_to_window_main_lobe(self):
        # the periodic Hann window's DFT has support {-1, 0, 1} exactly, so a
        # constant signal puts |X[1]| = |X[0]|/2 and nothing at bins >= 2
        clip = AudioClip(samples=np.full(16000, 0.25), sample_rate=16000)
        spec = np.abs(stft(clip))
        interior = spec[20:-20]
        assert (interior[:, 2:].max(axis=1) < 1e-6 * interior[:, 0]).all()
        assert np.allclose(interior[:, 1], interior[:, 0] / 2, rtol=1e-9)

    def test_parseval_against_time_domain_oracle(self):
        x = np.random.default_rng(7).normal(0, 0.3, 16000)
        clip = AudioClip(samples=x, sample_rate=16000)
        spec = stft(clip)
        # oracle: windowed frame energy summed directly in the time domain
        window = _hann_window(WINDOW_LENGTH)
        padded = np.pad(x, WINDOW_LENGTH // 2, mode="reflect")
        oracle = 0.0
        for t in range(spec.shape[0]):
            frame = padded[t * HOP_LENGTH : t * HOP_LENGTH + WINDOW_LENGTH] * window
            oracle += np.sum(frame**2)
        mag2 = np.abs(spec) ** 2
        spectral = (mag2[:, 0].sum() + mag2[:, -1].sum() + 2 * mag2[:, 1:-1].sum()) / WINDOW_LENGTH
        assert abs(spectral - oracle) / oracle < 1e-4

    def test_linearity(self):
        x = np.random.default_rng(3).normal(0, 0.2, 8000)
        a = 0.37
        s1 = stft(AudioClip(samples=a * x, sample_rate=16000))
        s2 = a * stft(AudioClip(samples=x, sample_rate=16000))
        denom = np.abs(s2).max()
        assert np.abs(s1 - s2).max() / denom < 1e-9

    def test_wrong_rate_rejected(self):
        with pytest.raises(DataError):
            stft(AudioClip(samples=np.zeros(1000), sample_rate=44100))


class TestLogMel:
    def test_zero_spectrogram_hits_log_floor(self):
        out = log_mel(np.zeros((5, WINDOW_LENGTH // 2 + 1)))
        assert np.allclose(out, np.log(LOG_EPS))
        assert abs(np.log(LOG_EPS) - (-23.0259)) < 1e-4

    def test_single_bin_impulse_lights_covering_bands(self):
        fb = mel_filterbank()
        for k in (50, 100, 400, 900):
            support = set(np.nonzero(fb[:, k] > 0)[0])
            assert 1 <= len(support) <= 2
            spec = np.zeros((1, WINDOW_LENGTH // 2 + 1))
            spec[0, k] = 1.0
            out = log_mel(spec)[0]
            lit = set(np.nonzero(out > np.log(LOG_EPS))[0])
            assert lit == support

    def test_filterbank_rows_positive_finite_support(self):
        fb = mel_filterbank()
        assert fb.shape == (N_MELS, WINDOW_LENGTH // 2 + 1)
        assert (fb >= 0).all()
        assert ((fb > 0).sum(axis=1) >= 1).all()
        response = fb @ np.ones(WINDOW_LENGTH // 2 + 1)
        assert (response > 0).all()

    def test_negative_power_rejected(self):
        spec = np.zeros((2, WINDOW_LENGTH // 2 + 1))
        spec[1, 3] = -1e-6
        with pytest.raises(DataError):
            log_mel(spec)


class TestMfcc:
    def test_constant_row(self):
        out = mfcc(np.full((1, N_MELS), 3.0))
        assert abs(out[0, 0] - 3.0 * np.sqrt(N_MELS)) < 1e-9
        assert np.abs(out[0, 1:]).max() < 1e-9

    def test_cosine_basis_row(self):
        k = 7
        m = np.arange(N_MELS)
        basis = np.cos(np.pi * (2 * m + 1) * k / (2 * N_MELS))
        out = mfcc(basis[None, :])
        expected = np.zeros(20)
        expected[k] = np.sqrt(N_MELS / 2.0)  # orthonormal basis norm
        assert np.abs(out[0] - expected).max() < 1e-9

    def test_roundtrip_against_naive_dct_oracle(self, rng):
        row = rng.normal(0, 2.0, N_MELS)
        oracle = naive_dct2_ortho(row)
        import scipy.fft

        full = scipy.fft.dct(row, type=2, norm="ortho")
        assert np.abs(full - oracle).max() < 1e-9
        recon = scipy.fft.idct(full, type=2, norm="ortho")
        assert np.abs(recon - row).max() < 1e-9
        assert np.abs(mfcc(row[None, :])[0] - oracle[:20]).max() < 1e-9


class TestBuildFeatures:
    def test_five_second_clip_shape(self):
        t = np.arange(5 * SAMPLE_RATE) / SAMPLE_RATE
        clip = AudioClip(samples=0.5 * np.sin(2 * np.pi * 440 * t), sample_rate=SAMPLE_RATE)
        matrix = build_features(clip)
        assert matrix.values.shape == (501, N_FEATURES)
        assert matrix.frame_rate == 100

    def test_silence_floor_composition(self):
        clip = AudioClip(samples=np.zeros(SAMPLE_RATE), sample_rate=SAMPLE_RATE)
        matrix = build_features(clip)
        floor = np.log(LOG_EPS)
        assert np.allclose(matrix.values[:, :N_MELS], floor, atol=1e-4)
        assert np.allclose(matrix.values[:, N_MELS], floor * np.sqrt(N_MELS), rtol=1e-6)
        assert np.abs(matrix.values[:, N_MELS + 1 :]).max() < 1e-3

    def test_column_layout_matches_suboperations(self):
        x = np.random.default_rng(11).normal(0, 0.1, SAMPLE_RATE)
        clip = AudioClip(samples=x, sample_rate=SAMPLE_RATE)
        matrix = build_features(clip)
        power = np.abs(stft(clip)) ** 2
        mel = log_mel(power)
        assert np.array_equal(matrix.values[:, :N_MELS], mel.astype(np.float32))
        assert np.array_equal(matrix.values[:, N_MELS:], mfcc(mel).astype(np.float32))

    def test_determinism_bit_identical(self):
        x = np.random.default_rng(5).normal(0, 0.1, 12345)
        a = build_features(AudioClip(samples=x.copy(), sample_rate=44100))
        b = build_features(AudioClip(samples=x.copy(), sample_rate=44100))
        assert a.values.tobytes() == b.values.tobytes()

    @given(st.integers(min_value=1600, max_value=64000))
    def test_frame_rate_identity(self, n_samples):
        clip = AudioClip(samples=np.zeros(n_samples), sample_rate=SAMPLE_RATE)
        frames = build_features(clip).n_frames
        assert abs(frames - (100 * n_samples / SAMPLE_RATE + 1)) <= 1


class TestSegment:
    def _matrix(self, t):
        values = np.arange(t * N_FEATURES, dtype=np.float32).reshape(t, N_FEATURES)
        return FeatureMatrix(values=values)

    def test_1250_hop_500(self):
        segs = segment(self._matrix(1250), "p", window=500, hop=500)
        assert [s.start_frame for s in segs] == [0, 500, 1000]
        assert [s.valid_frames for s in segs] == [500, 500, 250]
        assert np.all(segs[-1].values[250:] == 0)

    def test_exact_fit(self):
        segs = segment(self._matrix(500), "p", window=500, hop=500)
        assert len(segs) == 1 and segs[0].valid_frames == 500

    def test_1000_hop_250(self):
        segs = segment(self._matrix(1000), "p", window=500, hop=250)
        assert [s.start_frame for s in segs] == [0, 250, 500]
        assert all(s.valid_frames == 500 for s in segs)

    def test_bad_args_rejected(self):
        with pytest.raises(DataError):
            segment(self._matrix(100), "p", window=0, hop=10)
        with pytest.raises(DataError):
            segment(self._matrix(100), "p", window=500, hop=0)

    @given(
        st.integers(min_value=1, max_value=1700),
        st.integers(min_value=1, max_value=500),
    )
    def test_coverage_property(self, t, hop):
        segs = segment(self._matrix(t), "p", window=500, hop=hop)
        covered = np.zeros(t, dtype=bool)
        for seg in segs:
            covered[seg.start_frame : seg.start_frame + seg.valid_frames] = True
            padded = seg.values[seg.valid_frames :]
            assert np.all(padded == 0)
        assert covered.all()


class TestFeatureCache:
    def test_pdfe_roundtrip(self, tmp_path):
        values = np.random.default_rng(0).normal(0, 1, (77, N_FEATURES)).astype(np.float32)
        path = str(tmp_path / "x.pdfe")
        containers.save_features(path, values)
        loaded, rate = containers.load_features(path)
        assert rate == 100
        assert loaded.tobytes() == values.tobytes()
        with open(path, "rb") as fh:
            assert fh.read(4) == b"PDFE"

    def test_truncated_rejected(self, tmp_path):
        path = str(tmp_path / "x.pdfe")
        containers.save_features(path, np.zeros((10, N_FEATURES), dtype=np.float32))
        with open(path, "rb") as fh:
            raw = fh.read()
        with open(path, "wb") as fh:
            fh.write(raw[:-8])
        with pytest.raises(DataError):
            containers.load_features(path)
