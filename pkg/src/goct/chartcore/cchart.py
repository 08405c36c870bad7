"""Canonical `.cchart` text format.

UTF-8, LF line endings.  Line 1 is the header `#cchart v1`; after it, `#`
starts a comment and blank lines are ignored.  Header fields come in a fixed
order (`keys 4`, `difficulty <real>`, optional `beats <int>`, one or more
ascending `timing <start_ms> <bpm>` lines), followed by `note <column> <tick>`
and `hold <column> <start_tick> <end_tick>` event lines.

The `beats` line pins the chart length so that trailing empty beats survive a
round trip; when absent, the length is the smallest beat count covering all
events.  Serialization is deterministic: events sorted, reals written as the
shortest decimal that round-trips.
"""

from __future__ import annotations

from goct.chartcore.chart import (
    N_COLUMNS,
    ONSET,
    RELEASE,
    Chart,
    ChartEvent,
    make_chart,
    validate_chart,
)
from goct.chartcore.tempo import TempoMap, TimingSection
from goct.errors import ParseError, ValidationError

HEADER = "#cchart v1"


def _fmt_real(x: float) -> str:
    s = repr(float(x))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def serialize_cchart(chart: Chart) -> str:
    """Deterministic canonical text for a valid Chart."""
    validate_chart(chart)
    lines = [HEADER, f"keys {N_COLUMNS}", f"difficulty {_fmt_real(chart.difficulty)}"]
    lines.append(f"beats {chart.n_beats}")
    for sec in chart.tempo.sections:
        lines.append(f"timing {_fmt_real(sec.start_ms)} {_fmt_real(sec.bpm)}")

    # Pair each release with its open onset to recover note/hold lines.
    open_onset = [None] * N_COLUMNS
    entries = []  # (start_tick, column, line_text)
    for ev in chart.events:
        c = ev.column
        if ev.kind == ONSET:
            if open_onset[c] is not None:
                t = open_onset[c]
                entries.append((t, c, f"note {c} {t}"))
            open_onset[c] = ev.tick
        else:
            t = open_onset[c]
            entries.append((t, c, f"hold {c} {t} {ev.tick}"))
            open_onset[c] = None
    for c, t in enumerate(open_onset):
        if t is not None:
            entries.append((t, c, f"note {c} {t}"))
    entries.sort(key=lambda e: (e[0], e[1]))
    lines.extend(text for _, _, text in entries)
    return "\n".join(lines) + "\n"


def _strip(line: str) -> str:
    cut = line.find("#")
    if cut >= 0:
        line = line[:cut]
    return line.strip()


class _Reader:
    def __init__(self, text: str):
        self.rows = []  # (line_no, fields)
        for no, raw in enumerate(text.split("\n"), start=1):
            if no == 1:
                continue  # header handled separately
            stripped = _strip(raw)
            if stripped:
                self.rows.append((no, stripped.split()))
        self.pos = 0

    def peek(self):
        return self.rows[self.pos] if self.pos < len(self.rows) else (None, None)

    def next(self):
        row = self.rows[self.pos]
        self.pos += 1
        return row


def _parse_int(token: str, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {token!r}", line=line) from None


def _parse_real(token: str, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{what} must be a number, got {token!r}", line=line) from None


def _expect(fields, n, line, usage):
    if len(fields) != n:
        raise ParseError(f"expected `{usage}`", line=line, column=len(" ".join(fields[:n])) + 1)


def parse_cchart(text: str) -> Chart:
    first = text.split("\n", 1)[0].strip()
    if first != HEADER:
        raise ParseError(f"missing `{HEADER}` header", line=1, column=1)
    rd = _Reader(text)

    line, fields = rd.peek()
    if fields is None or fields[0] != "keys":
        raise ParseError("expected `keys 4` after the header", line=line)
    rd.next()
    _expect(fields, 2, line, "keys 4")
    keys = _parse_int(fields[1], line, "key count")
    if keys != N_COLUMNS:
        raise ParseError(f"unsupported key count {keys}, only {N_COLUMNS} supported", line=line)

    line, fields = rd.peek()
    if fields is None or fields[0] != "difficulty":
        raise ParseError("expected `difficulty <real>`", line=line)
    rd.next()
    _expect(fields, 2, line, "difficulty <real>")
    difficulty = _parse_real(fields[1], line, "difficulty")

    n_beats = None
    line, fields = rd.peek()
    if fields is not None and fields[0] == "beats":
        rd.next()
        _expect(fields, 2, line, "beats <int>")
        n_beats = _parse_int(fields[1], line, "beat count")
        if n_beats < 0:
            raise ParseError(f"beat count must be >= 0, got {n_beats}", line=line)

    sections = []
    while True:
        line, fields = rd.peek()
        if fields is None or fields[0] != "timing":
            break
        rd.next()
        _expect(fields, 3, line, "timing <start_ms> <bpm>")
        start_ms = _parse_real(fields[1], line, "start_ms")
        bpm = _parse_real(fields[2], line, "bpm")
        sections.append(TimingSection(start_ms=start_ms, bpm=bpm))
    if not sections:
        raise ParseError("at least one `timing` line is required", line=line)

    events = []
    seen = {}  # (column, tick) -> line, for duplicate diagnostics
    def add(tick, column, kind, line):
        key = (column, tick)
        if key in seen:
            raise ParseError(
                f"column {column} already has an event at tick {tick} (line {seen[key]})", line=line
            )
        seen[key] = line
        events.append(ChartEvent(tick=tick, column=column, kind=kind))

    while True:
        line, fields = rd.peek()
        if fields is None:
            break
        rd.next()
        if fields[0] == "note":
            _expect(fields, 3, line, "note <column> <tick>")
            col = _parse_int(fields[1], line, "column")
            tick = _parse_int(fields[2], line, "tick")
            if not (0 <= col < N_COLUMNS):
                raise ParseError(f"column {col} out of range [0, {N_COLUMNS})", line=line)
            add(tick, col, ONSET, line)
        elif fields[0] == "hold":
            _expect(fields, 4, line, "hold <column> <start_tick> <end_tick>")
            col = _parse_int(fields[1], line, "column")
            start = _parse_int(fields[2], line, "start_tick")
            end = _parse_int(fields[3], line, "end_tick")
            if not (0 <= col < N_COLUMNS):
                raise ParseError(f"column {col} out of range [0, {N_COLUMNS})", line=line)
            if not start < end:
                raise ParseError(f"hold start {start} must be before end {end}", line=line)
            add(start, col, ONSET, line)
            add(end, col, RELEASE, line)
        else:
            raise ParseError(f"unknown directive {fields[0]!r}", line=line, column=1)

    try:
        return make_chart(
            TempoMap(sections=tuple(sections)), difficulty, events, n_beats=n_beats
        )
    except ValidationError as e:
        raise ParseError(str(e)) from e
