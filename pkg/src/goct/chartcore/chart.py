"""Chart event model on the 1/48-beat tick grid.

Events live on a global integer tick grid (48 ticks per beat) across four
columns.  Per column there are two event kinds: an onset (key press) and a
release (end of a hold).  A tap is an onset with no matching release before
the next onset on that column; a hold is an onset..release pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from goct.chartcore.tempo import TempoMap, validate_tempo_map
from goct.errors import ValidationError

TICKS_PER_BEAT = 48
N_COLUMNS = 4

ONSET = "onset"
RELEASE = "release"


@dataclass(frozen=True, order=True)
class ChartEvent:
    tick: int
    column: int
    kind: str  # ONSET or RELEASE


@dataclass(frozen=True)
class Chart:
    tempo: TempoMap
    difficulty: float
    events: tuple[ChartEvent, ...]
    n_beats: int

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))


def min_beats_for(events) -> int:
    """Smallest n_beats whose tick range covers all events."""
    max_tick = max((e.tick for e in events), default=-1)
    if max_tick < 0:
        return 0
    return max_tick // TICKS_PER_BEAT + 1


def validate_chart(chart: Chart) -> None:
    """The single validator every importer and constructor funnels through.

    Checks tempo validity, field ranges, event ordering, the tick bound
    48 * n_beats, and per-column onset/release well-formedness.
    """
    if not isinstance(chart, Chart):
        raise ValidationError(f"expected Chart, got {type(chart).__name__}")
    validate_tempo_map(chart.tempo)
    if not math.isfinite(chart.difficulty) or chart.difficulty < 0:
        raise ValidationError(f"difficulty must be finite and >= 0, got {chart.difficulty}")
    if not isinstance(chart.n_beats, int) or chart.n_beats < 0:
        raise ValidationError(f"n_beats must be a non-negative integer, got {chart.n_beats!r}")

    tick_limit = TICKS_PER_BEAT * chart.n_beats
    prev_key = None
    col_state = [None] * N_COLUMNS  # last kind seen per column
    col_last_tick = [-1] * N_COLUMNS
    for i, ev in enumerate(chart.events):
        if not isinstance(ev.tick, int) or ev.tick < 0:
            raise ValidationError(f"event {i}: tick must be a non-negative integer, got {ev.tick!r}")
        if ev.tick >= tick_limit:
            raise ValidationError(
                f"event {i}: tick {ev.tick} outside chart length ({chart.n_beats} beats = {tick_limit} ticks)"
            )
        if not (0 <= ev.column < N_COLUMNS):
            raise ValidationError(f"event {i}: column {ev.column} out of range [0, {N_COLUMNS})")
        if ev.kind not in (ONSET, RELEASE):
            raise ValidationError(f"event {i}: unknown kind {ev.kind!r}")
        key = (ev.tick, ev.column)
        if prev_key is not None and key <= prev_key:
            if key == prev_key:
                raise ValidationError(f"event {i}: duplicate event at tick {ev.tick} column {ev.column}")
            raise ValidationError(f"event {i}: events not sorted by (tick, column)")
        prev_key = key
        c = ev.column
        if ev.tick == col_last_tick[c]:
            raise ValidationError(f"event {i}: column {c} has two events at tick {ev.tick}")
        col_last_tick[c] = ev.tick
        if ev.kind == RELEASE and col_state[c] != ONSET:
            raise ValidationError(f"event {i}: release at tick {ev.tick} column {c} without an open onset")
        col_state[c] = ev.kind
    return None


def make_chart(tempo, difficulty, events, n_beats=None) -> Chart:
    """Build and validate a Chart; n_beats defaults to the minimal cover."""
    events = tuple(sorted(events, key=lambda e: (e.tick, e.column)))
    if n_beats is None:
        n_beats = min_beats_for(events)
    chart = Chart(tempo=tempo, difficulty=float(difficulty), events=events, n_beats=int(n_beats))
    validate_chart(chart)
    return chart


def occupied_ticks(chart: Chart) -> list[int]:
    """Sorted distinct ticks that carry at least one event."""
    return sorted({e.tick for e in chart.events})


def events_per_beat(chart: Chart) -> dict[int, int]:
    """Event count per beat window [k, k+1), counting each per-column event."""
    counts: dict[int, int] = {}
    for ev in chart.events:
        k = ev.tick // TICKS_PER_BEAT
        counts[k] = counts.get(k, 0) + 1
    return counts
