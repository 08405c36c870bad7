"""Importer for `.osu` mania charts (uninherited timing points + hit objects).

Event times in `.osu` files are integer milliseconds, so they rarely sit
exactly on the 1/48-beat grid; each event is snapped to the nearest tick and
the quantization error is tracked.  Errors above `QUANT_WARN_MS` produce
warnings on the result rather than hard failures, since community files carry
millisecond rounding by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from goct.chartcore.chart import (
    N_COLUMNS,
    ONSET,
    RELEASE,
    TICKS_PER_BEAT,
    Chart,
    ChartEvent,
    make_chart,
)
from goct.chartcore.tempo import TempoMap, TimingSection, beat_at_time, time_at_beat
from goct.errors import ImportRejection, ParseError

QUANT_WARN_MS = 2.0


@dataclass(frozen=True)
class ImportResult:
    chart: Chart
    warnings: tuple[str, ...]
    max_quantization_error_ms: float


def _sections_of(text: str) -> dict[str, list[tuple[int, str]]]:
    """Split an .osu file into sections; values keep (line_no, line)."""
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for no, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections.setdefault(current, [])
            continue
        if current is not None:
            sections[current].append((no, line))
    return sections


def _key_values(rows) -> dict[str, str]:
    out = {}
    for _, line in rows:
        if ":" in line:
            k, v = line.split(":", 1)
            out[k.strip()] = v.strip()
    return out


def _column_of(x: int, keys: int = N_COLUMNS) -> int:
    return min(keys - 1, max(0, x * keys // 512))


def _quantize(tempo: TempoMap, t_ms: float, line: int):
    if t_ms < tempo.sections[0].start_ms:
        raise ParseError(
            f"hit object at {t_ms} ms precedes the first timing point "
            f"({tempo.sections[0].start_ms} ms)",
            line=line,
        )
    beat = beat_at_time(tempo, t_ms)
    tick = int(round(beat * TICKS_PER_BEAT))
    err = abs(time_at_beat(tempo, tick / TICKS_PER_BEAT) - t_ms)
    return tick, err


def import_osu(text: str, difficulty: float = 0.0) -> ImportResult:
    """Parse a 4-key mania `.osu` chart into the canonical event model.

    The star rating is not stored in `.osu` files, so `difficulty` comes from
    the caller (normally a manifest column).
    """
    sections = _sections_of(text)

    general = _key_values(sections.get("General", []))
    mode = int(float(general.get("Mode", "0")))
    if mode != 3:
        raise ImportRejection("not_mania", f"Mode is {mode}, expected 3 (mania)")

    diff_section = _key_values(sections.get("Difficulty", []))
    if "CircleSize" not in diff_section:
        raise ParseError("missing CircleSize in [Difficulty] section")
    keys = int(float(diff_section["CircleSize"]))
    if keys != N_COLUMNS:
        raise ImportRejection("not_4k", f"key count is {keys}, expected {N_COLUMNS}")

    timing_sections = []
    for no, line in sections.get("TimingPoints", []):
        fields = line.split(",")
        if len(fields) < 2:
            raise ParseError(f"malformed timing point {line!r}", line=no)
        t = float(fields[0])
        beat_length = float(fields[1])
        uninherited = True
        if len(fields) >= 7:
            uninherited = fields[6].strip() == "1"
        elif beat_length < 0:
            uninherited = False
        if not uninherited:
            continue  # inherited points carry slider velocity, not tempo
        if beat_length <= 0:
            raise ParseError(f"uninherited timing point with beatLength {beat_length}", line=no)
        timing_sections.append(TimingSection(start_ms=t, bpm=60000.0 / beat_length))
    if not timing_sections:
        raise ParseError("no uninherited timing points found")
    timing_sections.sort(key=lambda s: s.start_ms)
    tempo = TempoMap(sections=tuple(timing_sections))

    warnings: list[str] = []
    events: list[ChartEvent] = []
    max_err = 0.0
    for no, line in sections.get("HitObjects", []):
        fields = line.split(",")
        if len(fields) < 5:
            raise ParseError(f"malformed hit object {line!r}", line=no)
        x = int(float(fields[0]))
        t = float(fields[2])
        obj_type = int(fields[3])
        col = _column_of(x, keys)
        if obj_type & 128:  # mania hold: objectParams is "endTime:hitSample"
            if len(fields) < 6:
                raise ParseError(f"hold object missing endTime: {line!r}", line=no)
            end_t = float(fields[5].split(":", 1)[0])
            start_tick, err_a = _quantize(tempo, t, no)
            end_tick, err_b = _quantize(tempo, end_t, no)
            max_err = max(max_err, err_a, err_b)
            for err in (err_a, err_b):
                if err > QUANT_WARN_MS:
                    warnings.append(f"line {no}: hold snapped with {err:.3f} ms error")
            if end_tick <= start_tick:
                warnings.append(f"line {no}: hold shorter than one tick, kept as tap")
                events.append(ChartEvent(tick=start_tick, column=col, kind=ONSET))
            else:
                events.append(ChartEvent(tick=start_tick, column=col, kind=ONSET))
                events.append(ChartEvent(tick=end_tick, column=col, kind=RELEASE))
        elif obj_type & 1:  # circle = tap
            tick, err = _quantize(tempo, t, no)
            max_err = max(max_err, err)
            if err > QUANT_WARN_MS:
                warnings.append(f"line {no}: tap snapped with {err:.3f} ms error")
            events.append(ChartEvent(tick=tick, column=col, kind=ONSET))
        else:
            warnings.append(f"line {no}: skipped hit object of type {obj_type}")

    chart = make_chart(tempo, difficulty, events)
    return ImportResult(chart=chart, warnings=tuple(warnings), max_quantization_error_ms=max_err)
