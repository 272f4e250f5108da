"""Audio front end: WAV loading, resampling, STFT, log-mel, MFCC, segmentation.

The pipeline turns arbitrary-rate WAV audio into the model input
representation: 16 kHz mono, Hann-window STFT (2048-sample window,
160-sample hop, reflect center padding, 100 frames/s), a 229-band log-mel
spectrogram, and 20 MFCCs from an orthonormal DCT-II over the mel bands.
Per frame the two are concatenated into 249 columns.  Whole-piece matrices
are then cut into 500-frame segments by a sliding window; the final partial
segment is zero-padded and carries its valid frame count.

Everything here is a pure function of its inputs, so batch extraction can
run on parallel workers without shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

from .containers import write_bytes_atomic
from .errors import DataError

SAMPLE_RATE = 16_000
WINDOW_LENGTH = 2048
HOP_LENGTH = 160
FRAME_RATE = SAMPLE_RATE // HOP_LENGTH  # 100 frames per second
N_MELS = 229
N_MFCC = 20
N_FEATURES = N_MELS + N_MFCC  # 249
MEL_FMIN = 20.0
MEL_FMAX = 8000.0
LOG_EPS = 1e-10
SEGMENT_FRAMES = 500


@dataclass(frozen=True)
class AudioClip:
    """Mono audio with a sample rate. Samples are finite, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise DataError(f"AudioClip is mono; got shape {self.samples.shape}")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    """[T, 249] float32 matrix: columns 0-228 log-mel bands, 229-248 MFCCs."""

    values: np.ndarray
    frame_rate: int = FRAME_RATE

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != N_FEATURES:
            raise DataError(
                f"feature matrix must have {N_FEATURES} columns, got shape {self.values.shape}"
            )

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureSegment:
    """One zero-padded [500, 249] window of a piece's feature matrix."""

    values: np.ndarray
    valid_frames: int
    source_id: str
    start_frame: int

    def __post_init__(self):
        if not (0 < self.valid_frames <= self.values.shape[0]):
            raise DataError(
                f"valid_frames {self.valid_frames} out of range for window {self.values.shape[0]}"
            )


def load_wav(path: str) -> AudioClip:
    """Read a RIFF WAV (PCM16 or float32, mono or stereo) and mix down to mono."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        raise DataError(f"{path}: cannot read WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise DataError(f"{path}: empty WAV file")
    if not np.all(np.isfinite(samples)):
        raise DataError(f"{path}: WAV contains non-finite samples")
    return AudioClip(samples=samples, sample_rate=int(rate))


def save_wav(path: str, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] (mono [N] or stereo [N, 2]) as 16-bit PCM."""
    clipped = np.clip(samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    import io

    buf = io.BytesIO()
    scipy.io.wavfile.write(buf, sample_rate, pcm)
    write_bytes_atomic(path, buf.getvalue())


def resample(audio: AudioClip, dst_rate: int) -> AudioClip:
    """Band-limited resampling (polyphase windowed-sinc, Kaiser window).

    Output length is round(n * dst_rate / src_rate); the filter cutoff sits
    at the lower of the two Nyquist frequencies.  Same-rate input passes
    through untouched.
    """
    if dst_rate <= 0:
        raise DataError(f"destination rate must be positive, got {dst_rate}")
    if audio.samples.size == 0:
        raise DataError("cannot resample empty audio")
    if not np.all(np.isfinite(audio.samples)):
        raise DataError("cannot resample non-finite audio")
    if audio.sample_rate == dst_rate:
        return audio
    g = math.gcd(dst_rate, audio.sample_rate)
    up, down = dst_rate // g, audio.sample_rate // g
    out = scipy.signal.resample_poly(audio.samples, up, down, window=("kaiser", 5.0))
    target_len = round(len(audio.samples) * dst_rate / audio.sample_rate)
    out = out[:target_len]
    return AudioClip(samples=out, sample_rate=dst_rate)


@lru_cache(maxsize=4)
def _hann_window(length: int) -> np.ndarray:
    return scipy.signal.get_window("hann", length, fftbins=True)


def stft(audio: AudioClip, window_length: int = WINDOW_LENGTH, hop: int = HOP_LENGTH) -> np.ndarray:
    """Complex STFT [T, window//2 + 1] with reflect center padding.

    Frame t is centered on sample t*hop, so T = 1 + floor(n / hop) and the
    frame rate at 16 kHz with hop 160 is exactly 100 fps.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise DataError(
            f"stft expects {SAMPLE_RATE} Hz input, got {audio.sample_rate} Hz; resample first"
        )
    x = np.asarray(audio.samples, dtype=np.float64)
    if x.size == 0:
        raise DataError("cannot compute STFT of empty audio")
    pad = window_length // 2
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + len(x) // hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_length)[::hop][:n_frames]
    return scipy.fft.rfft(frames * _hann_window(window_length), axis=1)


@lru_cache(maxsize=4)
def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = WINDOW_LENGTH,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = MEL_FMIN,
    fmax: float = MEL_FMAX,
) -> np.ndarray:
    """[n_mels, n_fft//2 + 1] triangular filterbank on the Slaney mel scale.

    Filters are area-normalized (2 / bandwidth), every filter has positive
    weight on at least one FFT bin.
    """
    def hz_to_mel(f):
        f = np.asarray(f, dtype=np.float64)
        linear = f / (200.0 / 3.0)
        log_region = f >= 1000.0
        out = np.where(
            log_region,
            15.0 + np.log(np.maximum(f, 1e-12) / 1000.0) / (np.log(6.4) / 27.0),
            linear,
        )
        return out

    def mel_to_hz(m):
        m = np.asarray(m, dtype=np.float64)
        out = np.where(
            m >= 15.0,
            1000.0 * np.exp((m - 15.0) * (np.log(6.4) / 27.0)),
            m * (200.0 / 3.0),
        )
        return out

    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    fft_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)

    weights = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        lower, center, upper = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (fft_freqs - lower) / (center - lower)
        falling = (upper - fft_freqs) / (upper - center)
        weights[i] = np.maximum(0.0, np.minimum(rising, falling))
        weights[i] *= 2.0 / (upper - lower)  # Slaney area normalization
    return weights


def log_mel(power_spec: np.ndarray) -> np.ndarray:
    """Apply the mel filterbank to a [T, 1025] power spectrogram, then ln(x + 1e-10)."""
    power_spec = np.asarray(power_spec, dtype=np.float64)
    if np.any(power_spec < 0):
        raise DataError("power spectrogram must be nonnegative")
    mel_power = power_spec @ mel_filterbank().T
    return np.log(mel_power + LOG_EPS)


def mfcc(log_mel_spec: np.ndarray, n_coeffs: int = N_MFCC) -> np.ndarray:
    """First ``n_coeffs`` coefficients of an orthonormal DCT-II over the mel axis."""
    if not np.all(np.isfinite(log_mel_spec)):
        raise DataError("log-mel input to MFCC must be finite")
    return scipy.fft.dct(np.asarray(log_mel_spec, dtype=np.float64), type=2, axis=-1, norm="ortho")[
        ..., :n_coeffs
    ]


def build_features(audio: AudioClip) -> FeatureMatrix:
    """Full front end: resample to 16 kHz, STFT, [log-mel | MFCC] concatenation."""
    clip = resample(audio, SAMPLE_RATE)
    spec = stft(clip)
    power = np.abs(spec) ** 2
    mel = log_mel(power)
    coeffs = mfcc(mel)
    values = np.concatenate([mel, coeffs], axis=1).astype(np.float32)
    return FeatureMatrix(values=values)


def segment(
    features: FeatureMatrix,
    source_id: str = "",
    window: int = SEGMENT_FRAMES,
    hop: int = SEGMENT_FRAMES,
) -> list[FeatureSegment]:
    """Cut a feature matrix into zero-padded windows at offsets 0, hop, 2*hop, ...

    Full windows are emitted while they fit; if frames remain uncovered, the
    tail is emitted as a partial segment with ``valid_frames`` set.  With
    hop <= window the union of valid regions covers [0, T) exactly.
    """
    if window <= 0 or hop <= 0:
        raise DataError(f"window and hop must be positive, got window={window} hop={hop}")
    values = features.values
    t = values.shape[0]
    if t < 1:
        raise DataError("cannot segment an empty feature matrix")

    segments = []
    covered = 0
    k = 0
    while True:
        start = k * hop
        if start + window <= t:
            segments.append(
                FeatureSegment(
                    values=values[start : start + window],
                    valid_frames=window,
                    source_id=source_id,
                    start_frame=start,
                )
            )
            covered = start + window
            k += 1
            continue
        if start < t and covered < t:
            valid = t - start
            padded = np.zeros((window, values.shape[1]), dtype=values.dtype)
            padded[:valid] = values[start:]
            segments.append(
                FeatureSegment(
                    values=padded,
                    valid_frames=valid,
                    source_id=source_id,
                    start_frame=start,
                )
            )
            covered = t
            k += 1
            continue
        break
    return segments
