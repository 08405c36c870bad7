"""Importer for `.sm` simfiles (dance-single, #BPMS + #NOTES).

Measures are 4 beats; row r of an n-row measure sits at beat offset 4r/n.
Only rows landing on the 1/48-beat grid can be represented: a chart is
rejected when an off-grid row actually carries an event, while off-grid
padding rows (all `0`/`M`) are harmless and skipped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from goct.chartcore.chart import ONSET, RELEASE, TICKS_PER_BEAT, ChartEvent, make_chart
from goct.chartcore.osu import ImportResult
from goct.chartcore.tempo import TempoMap, TimingSection
from goct.errors import ParseError, ValidationError

BEATS_PER_MEASURE = 4
_NOTE_CHARS = {"1": ONSET, "2": ONSET, "4": ONSET, "3": RELEASE}
_IGNORED_CHARS = {"0", "M"}


@dataclass(frozen=True)
class RejectedChart:
    index: int
    meter: float
    reason: str


@dataclass(frozen=True)
class SmImport:
    charts: tuple[ImportResult, ...]
    rejected: tuple[RejectedChart, ...]


def _tags_of(text: str) -> list[tuple[str, str]]:
    # #KEY:VALUE; pairs, where VALUE may span lines (note data does).
    return [(m.group(1).upper(), m.group(2)) for m in re.finditer(r"#([^:;]+):([^;]*);", text)]


def _tempo_from_bpms(bpms_value: str, offset_s: float) -> TempoMap:
    pairs = []
    for item in bpms_value.replace("\n", "").split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ParseError(f"malformed #BPMS entry {item!r}")
        beat_s, bpm_s = item.split("=", 1)
        try:
            pairs.append((float(beat_s), float(bpm_s)))
        except ValueError:
            raise ParseError(f"malformed #BPMS entry {item!r}") from None
    if not pairs:
        raise ParseError("#BPMS is empty")
    pairs.sort()
    if abs(pairs[0][0]) > 1e-9:
        raise ParseError(f"#BPMS must start at beat 0, starts at beat {pairs[0][0]}")

    beat0_ms = -1000.0 * offset_s
    if beat0_ms < 0:
        raise ParseError(
            f"#OFFSET {offset_s} places beat 0 at {beat0_ms} ms; negative beat-zero times are unsupported"
        )
    sections = []
    t = beat0_ms
    for i, (beat, bpm) in enumerate(pairs):
        if i > 0:
            prev_beat, prev_bpm = pairs[i - 1]
            t += (beat - prev_beat) * 60000.0 / prev_bpm
        sections.append(TimingSection(start_ms=t, bpm=bpm))
    return TempoMap(sections=tuple(sections))


def _parse_notes_block(value: str):
    """Split one #NOTES value into (steps_type, meter, measures)."""
    fields = value.split(":")
    if len(fields) < 6:
        raise ParseError(f"#NOTES block has {len(fields)} fields, expected 6")
    steps_type = fields[0].strip()
    meter_text = fields[3].strip()
    note_data = fields[5]
    measures = []
    for chunk in note_data.split(","):
        rows = [r.strip() for r in chunk.split("\n")]
        rows = [r for r in rows if r and not r.startswith("//")]
        measures.append(rows)
    return steps_type, meter_text, measures


def _chart_events(measures, warnings):
    events = []
    for m_idx, rows in enumerate(measures):
        n = len(rows)
        if n == 0:
            continue
        for r_idx, row in enumerate(rows):
            carried = [ch for ch in row if ch in _NOTE_CHARS]
            unknown = [ch for ch in row if ch not in _NOTE_CHARS and ch not in _IGNORED_CHARS]
            if unknown:
                warnings.append(
                    f"measure {m_idx} row {r_idx}: unsupported note characters {sorted(set(unknown))}"
                )
            # 4r/n beats * 48 ticks must be integral: 192 r / n.
            num = BEATS_PER_MEASURE * TICKS_PER_BEAT * r_idx
            if num % n != 0:
                if carried:
                    raise ValidationError(
                        f"measure {m_idx} row {r_idx} of {n} does not sit on the 1/48-beat grid"
                    )
                continue
            tick = m_idx * BEATS_PER_MEASURE * TICKS_PER_BEAT + num // n
            if len(row) != 4:
                raise ValidationError(
                    f"measure {m_idx} row {r_idx}: {len(row)} columns, expected 4"
                )
            for col, ch in enumerate(row):
                kind = _NOTE_CHARS.get(ch)
                if kind is not None:
                    events.append(ChartEvent(tick=tick, column=col, kind=kind))
    return events


def import_sm(text: str) -> SmImport:
    """Parse every dance-single chart of a simfile; off-grid charts are rejected."""
    tags = _tags_of(text)
    bpms_value = None
    offset_s = 0.0
    notes_blocks = []
    for key, value in tags:
        if key == "BPMS":
            bpms_value = value
        elif key == "OFFSET":
            try:
                offset_s = float(value.strip())
            except ValueError:
                raise ParseError(f"malformed #OFFSET {value!r}") from None
        elif key == "NOTES":
            notes_blocks.append(value)
    if bpms_value is None:
        raise ParseError("missing #BPMS tag")
    tempo = _tempo_from_bpms(bpms_value, offset_s)

    results = []
    rejected = []
    for index, block in enumerate(notes_blocks):
        steps_type, meter_text, measures = _parse_notes_block(block)
        if steps_type != "dance-single":
            rejected.append(RejectedChart(index=index, meter=0.0, reason=f"steps type {steps_type!r}"))
            continue
        try:
            meter = float(meter_text)
        except ValueError:
            rejected.append(RejectedChart(index=index, meter=0.0, reason=f"non-numeric meter {meter_text!r}"))
            continue
        warnings: list[str] = []
        try:
            events = _chart_events(measures, warnings)
            n_beats = len(measures) * BEATS_PER_MEASURE
            chart = make_chart(tempo, meter, events, n_beats=n_beats)
        except ValidationError as e:
            rejected.append(RejectedChart(index=index, meter=meter, reason=str(e)))
            continue
        results.append(
            ImportResult(chart=chart, warnings=tuple(warnings), max_quantization_error_ms=0.0)
        )
    return SmImport(charts=tuple(results), rejected=tuple(rejected))
