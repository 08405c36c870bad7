"""Piecewise-constant-BPM tempo maps and the beat <-> time bijection.

A tempo map is an ordered list of timing sections.  Beat 0 sits at the start
of the first section; within a section, time advances at 60000/bpm ms per
beat.  Everything downstream (the 1/48-beat tick grid, beat-aligned feature
frames, quantization of imported charts) is defined through `time_at_beat`
and its inverse `beat_at_time`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from goct.errors import ValidationError

# A tempo change is "on-beat" when it lands within this many beats of an
# integer beat of the preceding timing.  Loose enough to absorb float noise
# in community files, tight enough to catch genuine off-beat points.
OFFBEAT_TOLERANCE_BEATS = 1e-4


@dataclass(frozen=True)
class TimingSection:
    """One constant-BPM span, starting at `start_ms`."""

    start_ms: float
    bpm: float


@dataclass(frozen=True)
class TempoMap:
    sections: tuple[TimingSection, ...]

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))

    @property
    def start_ms(self) -> float:
        return self.sections[0].start_ms


def validate_tempo_map(tempo: TempoMap) -> None:
    """Raise ValidationError unless `tempo` satisfies its invariants."""
    if not isinstance(tempo, TempoMap):
        raise ValidationError(f"expected TempoMap, got {type(tempo).__name__}")
    if len(tempo.sections) == 0:
        raise ValidationError("tempo map has no sections")
    prev_start = None
    for i, sec in enumerate(tempo.sections):
        if not math.isfinite(sec.start_ms) or sec.start_ms < 0:
            raise ValidationError(f"section {i}: start_ms must be finite and >= 0, got {sec.start_ms}")
        if not math.isfinite(sec.bpm) or sec.bpm <= 0:
            raise ValidationError(f"section {i}: bpm must be finite and > 0, got {sec.bpm}")
        if prev_start is not None and sec.start_ms <= prev_start:
            raise ValidationError(
                f"section {i}: start_ms {sec.start_ms} not strictly after previous {prev_start}"
            )
        prev_start = sec.start_ms
    return None


def _section_start_beats(tempo: TempoMap) -> list[float]:
    """Beat position of each section boundary, accumulated left to right."""
    beats = [0.0]
    secs = tempo.sections
    for i in range(1, len(secs)):
        span_ms = secs[i].start_ms - secs[i - 1].start_ms
        beats.append(beats[i - 1] + span_ms * secs[i - 1].bpm / 60000.0)
    return beats


def time_at_beat(tempo: TempoMap, beat: float) -> float:
    """Milliseconds at which `beat` occurs (beat >= 0)."""
    validate_tempo_map(tempo)
    if not math.isfinite(beat) or beat < 0:
        raise ValidationError(f"beat must be finite and >= 0, got {beat}")
    starts = _section_start_beats(tempo)
    # Last section whose start beat is <= beat.
    i = len(starts) - 1
    while i > 0 and starts[i] > beat:
        i -= 1
    sec = tempo.sections[i]
    return sec.start_ms + (beat - starts[i]) * 60000.0 / sec.bpm


def beat_at_time(tempo: TempoMap, t_ms: float) -> float:
    """Inverse of `time_at_beat`; errors for times before the first section."""
    validate_tempo_map(tempo)
    if not math.isfinite(t_ms):
        raise ValidationError(f"t_ms must be finite, got {t_ms}")
    if t_ms < tempo.sections[0].start_ms:
        raise ValidationError(
            f"t_ms {t_ms} is before the first timing section at {tempo.sections[0].start_ms}"
        )
    starts = _section_start_beats(tempo)
    i = len(tempo.sections) - 1
    while i > 0 and tempo.sections[i].start_ms > t_ms:
        i -= 1
    sec = tempo.sections[i]
    return starts[i] + (t_ms - sec.start_ms) * sec.bpm / 60000.0


def times_at_beats(tempo: TempoMap, beats: np.ndarray) -> np.ndarray:
    """Vectorized `time_at_beat` for a sorted or unsorted array of beats >= 0."""
    validate_tempo_map(tempo)
    beats = np.asarray(beats, dtype=np.float64)
    if beats.size and (not np.all(np.isfinite(beats)) or beats.min() < 0):
        raise ValidationError("beats must be finite and >= 0")
    starts = np.asarray(_section_start_beats(tempo))
    start_ms = np.asarray([s.start_ms for s in tempo.sections])
    ms_per_beat = np.asarray([60000.0 / s.bpm for s in tempo.sections])
    idx = np.clip(np.searchsorted(starts, beats, side="right") - 1, 0, len(starts) - 1)
    return start_ms[idx] + (beats - starts[idx]) * ms_per_beat[idx]


def detect_offbeat_tempo_changes(tempo: TempoMap) -> list[int]:
    """Indices of sections that start at a non-integral beat of the preceding timing."""
    validate_tempo_map(tempo)
    starts = _section_start_beats(tempo)
    offbeat = []
    for i in range(1, len(starts)):
        b = starts[i]
        if abs(b - round(b)) > OFFBEAT_TOLERANCE_BEATS:
            offbeat.append(i)
    return offbeat
