"""Shared fixtures and synthesis helpers for the test suite."""
from __future__ import annotations

import io
import os
import wave

import numpy as np
import pytest

from goct.chartcore import (
    Chart,
    ChartEvent,
    ONSET,
    RELEASE,
    TICKS_PER_BEAT,
    TempoMap,
    TimingSection,
    make_chart,
    time_at_beat,
)
from goct.featureext import AudioBuffer
from goct.nnmodel import ModelConfig


# ---------------------------------------------------------------- tempo maps


def constant_tempo(bpm: float = 120.0, start_ms: float = 0.0) -> TempoMap:
    return TempoMap(sections=(TimingSection(start_ms, bpm),))


def random_tempo_map(rng: np.random.Generator, max_sections: int = 4) -> TempoMap:
    """Multi-section map whose section boundaries sit on integer beats."""
    n = int(rng.integers(1, max_sections + 1))
    start = float(rng.uniform(0.0, 2000.0))
    bpm = float(rng.uniform(40.0, 260.0))
    sections = [TimingSection(start, bpm)]
    t = start
    for _ in range(n - 1):
        beats = int(rng.integers(1, 64))
        t += beats * 60000.0 / sections[-1].bpm
        bpm = float(rng.uniform(40.0, 260.0))
        sections.append(TimingSection(t, bpm))
    return TempoMap(sections=tuple(sections))


# -------------------------------------------------------------- chart synth


def random_chart(
    rng: np.random.Generator,
    n_beats: int | None = None,
    tempo: TempoMap | None = None,
    max_events_per_beat: int = 25,
    difficulty: float | None = None,
) -> Chart:
    """Random chart honoring the per-column onset/release grammar."""
    if n_beats is None:
        n_beats = int(rng.integers(1, 17))
    if tempo is None:
        tempo = random_tempo_map(rng)
    if difficulty is None:
        difficulty = float(rng.uniform(0.0, 12.0))
    n_ticks = n_beats * TICKS_PER_BEAT
    density = float(rng.uniform(0.0, 0.15))
    events: list[ChartEvent] = []
    open_hold = [False] * 4
    counts: dict[int, int] = {}
    for tick in range(n_ticks):
        beat = tick // TICKS_PER_BEAT
        for col in range(4):
            if rng.random() >= density:
                continue
            if counts.get(beat, 0) >= max_events_per_beat:
                continue
            if open_hold[col]:
                kind = RELEASE if rng.random() < 0.7 else ONSET
            else:
                kind = ONSET
            open_hold[col] = kind == ONSET
            events.append(ChartEvent(tick, col, kind))
            counts[beat] = counts.get(beat, 0) + 1
    return make_chart(tempo, difficulty, events, n_beats=n_beats)


def beat_tap_events(n_beats: int, ticks_in_beat=(0,), column: int = 0) -> list[ChartEvent]:
    """Tap `column` at the given tick offsets of every beat."""
    return [
        ChartEvent(TICKS_PER_BEAT * b + t, column, ONSET)
        for b in range(n_beats)
        for t in ticks_in_beat
    ]


# -------------------------------------------------------------- audio synth


def click_audio(tempo: TempoMap, n_beats: int, rate: int = 22050) -> AudioBuffer:
    """Click track: a short 1 kHz burst at every integer beat time."""
    dur_s = time_at_beat(tempo, float(n_beats)) / 1000.0
    n = int(round(dur_s * rate)) + rate // 10
    x = np.zeros(n, dtype=np.float64)
    burst_n = int(0.010 * rate)
    t = np.arange(burst_n) / rate
    burst = 0.8 * np.sin(2 * np.pi * 1000.0 * t) * np.exp(-t / 0.003)
    for b in range(n_beats):
        s = int(round(time_at_beat(tempo, float(b)) / 1000.0 * rate))
        if s < 0:
            continue
        e = min(s + burst_n, n)
        x[s:e] += burst[: e - s]
    return AudioBuffer(samples=x.astype(np.float32), sample_rate=rate)


def wav_bytes(samples: np.ndarray, rate: int = 22050) -> bytes:
    """16-bit PCM WAV file; samples may be (n,) mono or (n, 2) stereo."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    pcm = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(x.shape[1])
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())
    return buf.getvalue()


def write_wav(path, samples: np.ndarray, rate: int = 22050) -> None:
    with open(path, "wb") as f:
        f.write(wav_bytes(samples, rate))


# ------------------------------------------------------------- disk corpora


def build_corpus(root, n_songs: int = 3, n_beats: int = 8, difficulties=(1.0, 3.0)):
    """Tiny on-disk corpus: one click wav + one cchart per difficulty per song.

    Song i plays at 90 + 30*i BPM; the last two songs land in valid/test so a
    3-song corpus populates every split. Returns (manifest rows, manifest path).
    """
    from goct.chartcore import serialize_cchart
    from goct.datasetpipe import ManifestRow, write_manifest

    rows = []
    for i in range(n_songs):
        tempo = constant_tempo(bpm=90.0 + 30.0 * i)
        audio = click_audio(tempo, n_beats)
        wav = os.path.join(root, f"song{i}.wav")
        write_wav(wav, audio.samples, audio.sample_rate)
        if i < max(n_songs - 2, 1):
            split = "train"
        else:
            split = "valid" if i == n_songs - 2 else "test"
        for j, diff in enumerate(difficulties):
            events = beat_tap_events(n_beats)
            if j:
                events += beat_tap_events(n_beats, ticks_in_beat=(24,), column=1)
            chart = make_chart(tempo, diff, events, n_beats=n_beats)
            path = os.path.join(root, f"song{i}.d{j}.cchart")
            with open(path, "w") as fh:
                fh.write(serialize_cchart(chart))
            rows.append(ManifestRow(f"song{i}", wav, path, diff, split))
    manifest = os.path.join(root, "manifest.tsv")
    write_manifest(manifest, rows)
    return rows, manifest


# ------------------------------------------------------------------ fixtures


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        n_layers=1,
        d_model=8,
        n_heads=1,
        d_ff=16,
        token_embed_dim=6,
        difficulty_embed_dim=2,
        dropout=0.0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260819)
