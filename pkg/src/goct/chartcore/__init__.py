"""Chart data model, tempo maps, and chart-format IO."""

from goct.chartcore.chart import (
    N_COLUMNS,
    ONSET,
    RELEASE,
    TICKS_PER_BEAT,
    Chart,
    ChartEvent,
    events_per_beat,
    make_chart,
    min_beats_for,
    occupied_ticks,
    validate_chart,
)
from goct.chartcore.cchart import parse_cchart, serialize_cchart
from goct.chartcore.osu import ImportResult, import_osu
from goct.chartcore.sm import RejectedChart, SmImport, import_sm
from goct.chartcore.tempo import (
    OFFBEAT_TOLERANCE_BEATS,
    TempoMap,
    TimingSection,
    beat_at_time,
    detect_offbeat_tempo_changes,
    time_at_beat,
    times_at_beats,
    validate_tempo_map,
)

__all__ = [
    "N_COLUMNS",
    "ONSET",
    "RELEASE",
    "TICKS_PER_BEAT",
    "Chart",
    "ChartEvent",
    "events_per_beat",
    "make_chart",
    "min_beats_for",
    "occupied_ticks",
    "validate_chart",
    "parse_cchart",
    "serialize_cchart",
    "ImportResult",
    "import_osu",
    "RejectedChart",
    "SmImport",
    "import_sm",
    "OFFBEAT_TOLERANCE_BEATS",
    "TempoMap",
    "TimingSection",
    "beat_at_time",
    "detect_offbeat_tempo_changes",
    "time_at_beat",
    "times_at_beats",
    "validate_tempo_map",
]
