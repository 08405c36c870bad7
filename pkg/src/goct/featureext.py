"""Beat-aligned log-Mel spectrogram extraction.

The hop is musical, not fixed: one frame per 1/48 beat, so a song of
n beats always yields a (48*n, 80) matrix regardless of BPM.  Frames
are 512 samples centered at round(t*sr) with reflection padding, Hann
window (periodic), power spectrum, HTK-Mel projection, log floor 1e-10.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from goct.chartcore.tempo import TempoMap, times_at_beats
from goct.errors import FormatError, ValidationError

SAMPLE_RATE = 22050
N_FFT = 512
N_MELS = 80
FRAMES_PER_BEAT = 48
LOG_FLOOR = float(np.log(1e-10))

FEAT_MAGIC = b"GOCTFEAT"
FEAT_VERSION = 1


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray  # mono float32, [-1, 1]
    sample_rate: int


@dataclass(frozen=True)
class BeatSpectrogram:
    frames: np.ndarray  # (48 * n_beats, 80) float32
    n_beats: int


def validate_audio(audio: AudioBuffer) -> None:
    x = np.asarray(audio.samples)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("audio must be a non-empty 1-D sample array")
    if audio.sample_rate <= 0:
        raise ValidationError(f"sample_rate must be positive, got {audio.sample_rate}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("audio contains non-finite samples")
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if peak > 1.0 + 1e-6:
        raise ValidationError(f"audio amplitude {peak} exceeds [-1, 1]")


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft: int = N_FFT, n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular HTK-Mel filterbank, shape (n_mels, n_fft//2 + 1)."""
    if sample_rate <= 0:
        raise ValidationError("sample_rate must be positive")
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins, dtype=np.float64) * sample_rate / n_fft
    mel_pts = np.linspace(0.0, float(_hz_to_mel(sample_rate / 2.0)), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)

    fb = np.zeros((n_mels, n_bins), dtype=np.float64)
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (fft_freqs - lo) / (ctr - lo)
        falling = (hi - fft_freqs) / (hi - ctr)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.sum(axis=1) <= 0.0):
        raise ValidationError(
            f"{n_mels} Mel bins exceed the frequency resolution of a {n_fft}-point FFT at {sample_rate} Hz"
        )
    return fb


def filter_center_freqs(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    mel_pts = np.linspace(0.0, float(_hz_to_mel(sample_rate / 2.0)), n_mels + 2)
    return _mel_to_hz(mel_pts)[1:-1]


def beat_frame_times(tempo: TempoMap, n_beats: int) -> np.ndarray:
    """Frame times in seconds: entry k sits at beat k/48."""
    if n_beats < 1:
        raise ValidationError(f"n_beats must be >= 1, got {n_beats}")
    beats = np.arange(FRAMES_PER_BEAT * n_beats, dtype=np.float64) / FRAMES_PER_BEAT
    return times_at_beats(tempo, beats) / 1000.0


def extract(audio: AudioBuffer, tempo: TempoMap, n_beats: int) -> BeatSpectrogram:
    """Beat-aligned log-Mel spectrogram, shape (48 * n_beats, 80)."""
    validate_audio(audio)
    if n_beats <= 0:
        raise ValidationError(f"n_beats must be positive, got {n_beats}")
    x = np.asarray(audio.samples, dtype=np.float64)
    sr = audio.sample_rate
    half = N_FFT // 2

    times = beat_frame_times(tempo, n_beats)
    centers = np.rint(times * sr).astype(np.int64)
    if centers.min() < 0:
        raise ValidationError("frame centers precede the audio origin")

    # One reflection pad covering every frame; np.pad repeats the
    # reflection when audio is shorter than the chart needs.
    left = half
    right = max(0, int(centers.max()) + half - x.size)
    if x.size == 1:
        padded = np.full(left + x.size + right, x[0], dtype=np.float64)
    else:
        padded = np.pad(x, (left, right), mode="reflect")

    starts = centers - half + left
    frames = padded[starts[:, None] + np.arange(N_FFT)[None, :]]
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(N_FFT) / N_FFT)
    spectrum = np.fft.rfft(frames * window[None, :], n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank(N_FFT, N_MELS, sr).T
    out = np.log(np.maximum(mel, 1e-10)).astype(np.float32)
    return BeatSpectrogram(frames=out, n_beats=n_beats)


def slice_frames(frames: np.ndarray, lo_row: int, hi_row: int) -> np.ndarray:
    """Rows [lo_row, hi_row); rows outside the matrix are silence (log floor)."""
    out = np.full((hi_row - lo_row, frames.shape[1]), LOG_FLOOR, dtype=np.float32)
    src_lo = max(lo_row, 0)
    src_hi = min(hi_row, frames.shape[0])
    if src_lo < src_hi:
        out[src_lo - lo_row : src_hi - lo_row] = frames[src_lo:src_hi]
    return out


def window_frames(spec: BeatSpectrogram, start_beat: int, n_beats: int) -> np.ndarray:
    """Rows for beats [start_beat, start_beat + n_beats); out-of-range beats are silence."""
    return slice_frames(spec.frames, start_beat * FRAMES_PER_BEAT, (start_beat + n_beats) * FRAMES_PER_BEAT)


# ---------------------------------------------------------------------------
# WAV ingest

def read_wav(data: bytes) -> tuple[np.ndarray, int]:
    """Parse a PCM WAV file: returns (samples as (n, channels) float64, rate).

    Supports 16-bit integer and 32-bit float encodings, 1-2 channels.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"truncated {cid.decode('ascii', 'replace').strip()!r} chunk")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError("fmt chunk: too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            raw = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if raw is None:
        raise FormatError("missing data chunk")

    code, channels, rate, _byte_rate, _block, bits = fmt
    if channels not in (1, 2):
        raise FormatError(f"fmt chunk: {channels} channels unsupported (need 1 or 2)")
    if code == 1 and bits == 16:
        samples = np.frombuffer(raw[: len(raw) - len(raw) % (2 * channels)], dtype="<i2")
        x = samples.astype(np.float64) / 32768.0
    elif code == 3 and bits == 32:
        samples = np.frombuffer(raw[: len(raw) - len(raw) % (4 * channels)], dtype="<f4")
        x = samples.astype(np.float64)
    else:
        raise FormatError(f"fmt chunk: unsupported encoding (format code {code}, {bits}-bit)")
    if x.size == 0:
        raise FormatError("data chunk: no samples")
    return x.reshape(-1, channels), int(rate)


def downmix_and_resample(samples: np.ndarray, rate: int, target_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Channel mean, then linear-interpolation resample to target_rate."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("expected a non-empty (n,) or (n, channels) sample array")
    if rate <= 0 or target_rate <= 0:
        raise ValidationError("sample rates must be positive")
    if rate != target_rate:
        n_out = int(round(x.size * target_rate / rate))
        src_pos = np.arange(n_out, dtype=np.float64) * (rate / target_rate)
        x = np.interp(src_pos, np.arange(x.size, dtype=np.float64), x)
    buf = AudioBuffer(samples=np.clip(x, -1.0, 1.0).astype(np.float32), sample_rate=target_rate)
    validate_audio(buf)
    return buf


def load_wav(path) -> AudioBuffer:
    with open(path, "rb") as fh:
        samples, rate = read_wav(fh.read())
    return downmix_and_resample(samples, rate)


# ---------------------------------------------------------------------------
# Feature file format

def write_features(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValidationError("feature matrix must be 2-D")
    n_frames, n_mels = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<III", FEAT_VERSION, n_frames, n_mels))
        fh.write(frames.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(FEAT_MAGIC) + 12:
        raise FormatError("feature file truncated")
    if data[: len(FEAT_MAGIC)] != FEAT_MAGIC:
        raise FormatError("bad magic; not a feature file")
    version, n_frames, n_mels = struct.unpack_from("<III", data, len(FEAT_MAGIC))
    if version != FEAT_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    body = data[len(FEAT_MAGIC) + 12 :]
    expected = 4 * n_frames * n_mels
    if len(body) != expected:
        raise FormatError(f"feature payload is {len(body)} bytes, header implies {expected}")
    return np.frombuffer(body, dtype="<f4").reshape(n_frames, n_mels).copy()


def compute_normalization(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-Mel-bin mean and std over rows; std floored to avoid division blowups."""
    mean = frames.mean(axis=0, dtype=np.float64)
    std = frames.std(axis=0, dtype=np.float64)
    std = np.maximum(std, 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)


def apply_normalization(frames: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((frames - mean[None, :]) / std[None, :]).astype(np.float32)
