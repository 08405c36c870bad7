"""Corpus pipeline: filtering, song-level splits, shard construction, stats.

A shard holds one record per beat of each kept chart (beats 0..n-2: a
window needs two target beats).  Records reference per-song feature
files rather than embedding frames.  Aligned shard lines are
`song_id<TAB>beat<TAB>difficulty<TAB>ctx:...<TAB>tgt:...`; unaligned
shards append `off:<ticks>` with the window's start offset on the
shifted 1/48 grid.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from goct.chartcore.chart import Chart, TICKS_PER_BEAT, events_per_beat, occupied_ticks
from goct.chartcore.cchart import parse_cchart
from goct.chartcore.tempo import detect_offbeat_tempo_changes
from goct.errors import FormatError, ParseError, ValidationError
from goct.evalkit import beat_group_of
from goct.featureext import (
    apply_normalization,
    compute_normalization,
    extract,
    load_wav,
    read_features,
    slice_frames,
    write_features,
)
from goct.nnmodel.config import CONTEXT_LEN, ENCODER_BEATS
from goct.nnmodel.train import TrainSample
from goct.tokencodec import (
    ACTION_MAX,
    ACTION_MIN,
    EOS,
    context_slice,
    tick_actions,
    window_tokens_at,
)

SPLITS = ("train", "valid", "test")
MAX_EVENTS_PER_BEAT = 25
WINDOW_BEATS = 2
STATS_GROUPS = ("8th", "16th", "12th", "32nd", "24th")  # reported frequency groups

MANIFEST_HEADER = "song_id\taudio\tchart\tdifficulty\tsplit"


def _fmt_real(x: float) -> str:
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class ManifestRow:
    song_id: str
    audio: str
    chart: str
    difficulty: float
    split: str = "train"


def validate_manifest(rows) -> None:
    split_of: dict[str, str] = {}
    for row in rows:
        if row.split not in SPLITS:
            raise ValidationError(f"unknown split {row.split!r} for song {row.song_id}")
        if "\t" in row.song_id or "\t" in row.audio or "\t" in row.chart:
            raise ValidationError(f"tab character in manifest fields of song {row.song_id}")
        seen = split_of.setdefault(row.song_id, row.split)
        if seen != row.split:
            raise ValidationError(f"song {row.song_id} appears in splits {seen} and {row.split}")


def write_manifest(path, rows) -> None:
    validate_manifest(rows)
    lines = [MANIFEST_HEADER]
    for r in rows:
        lines.append(f"{r.song_id}\t{r.audio}\t{r.chart}\t{_fmt_real(r.difficulty)}\t{r.split}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRow]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ParseError("manifest must start with the header line", line=1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(f"expected 5 tab-separated fields, got {len(parts)}", line=lineno)
        try:
            difficulty = float(parts[3])
        except ValueError:
            raise ParseError(f"bad difficulty {parts[3]!r}", line=lineno) from None
        rows.append(ManifestRow(parts[0], parts[1], parts[2], difficulty, parts[4]))
    validate_manifest(rows)
    return rows


# ---------------------------------------------------------------------------
# Filtering (density and tempo rules; key count is enforced at import)

@dataclass(frozen=True)
class FilterRejection:
    index: int
    reason: str  # machine-readable: "offbeat_tempo" | "density"
    detail: str


@dataclass(frozen=True)
class FilterResult:
    kept: tuple
    rejected: tuple


def filter_charts(charts) -> FilterResult:
    kept = []
    rejected = []
    for i, chart in enumerate(charts):
        offbeat = detect_offbeat_tempo_changes(chart.tempo)
        if offbeat:
            rejected.append(
                FilterRejection(index=i, reason="offbeat_tempo", detail=f"timing sections {offbeat} start off-beat")
            )
            continue
        dense = {k: n for k, n in events_per_beat(chart).items() if n > MAX_EVENTS_PER_BEAT}
        if dense:
            beat, count = min(dense.items())
            rejected.append(
                FilterRejection(index=i, reason="density", detail=f"beat {beat} has {count} events (cap {MAX_EVENTS_PER_BEAT})")
            )
            continue
        kept.append(chart)
    return FilterResult(kept=tuple(kept), rejected=tuple(rejected))


def split_by_song(rows, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> list[ManifestRow]:
    """Assign whole songs to train/valid/test by seeded shuffle."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValidationError(f"ratios must be 3 non-negative numbers, got {ratios}")
    songs = sorted({r.song_id for r in rows})
    rng = np.random.default_rng(seed)
    order = [songs[i] for i in rng.permutation(len(songs))]
    total = sum(ratios)
    n = len(order)
    n_train = int(round(n * ratios[0] / total))
    n_valid = int(round(n * ratios[1] / total))
    n_valid = min(n_valid, n - n_train)
    assignment = {}
    for i, song in enumerate(order):
        if i < n_train:
            assignment[song] = "train"
        elif i < n_train + n_valid:
            assignment[song] = "valid"
        else:
            assignment[song] = "test"
    return [replace(r, split=assignment[r.song_id]) for r in rows]


# ---------------------------------------------------------------------------
# Sample records and shard files

@dataclass(frozen=True)
class ShardRecord:
    song_id: str
    beat: int
    difficulty: float
    context: tuple
    target: tuple
    offset: int = 0  # window start offset in ticks, 0 when beat-aligned


def _strip_time_only(tokens) -> tuple:
    return tuple(t for t in tokens if not ACTION_MIN <= t <= ACTION_MAX)


def _context_tokens(actions, beat: int, offset: int, time_only: bool) -> tuple:
    """Tail of the token stream before this window, walking same-parity windows back."""
    collected: list[int] = []
    p = beat - WINDOW_BEATS
    while p >= 0 and len(collected) < CONTEXT_LEN:
        toks = window_tokens_at(actions, p * TICKS_PER_BEAT + offset)
        if time_only:
            toks = _strip_time_only(toks)
        collected = list(toks) + collected
        p -= WINDOW_BEATS
    return tuple(context_slice(collected, CONTEXT_LEN))


def records_for_chart(chart: Chart, song_id: str, *, time_only=False, offsets=None) -> list[ShardRecord]:
    """One record per beat b in [0, n_beats-2]; `offsets` gives per-record start ticks."""
    n = max(chart.n_beats - 1, 0)
    if offsets is None:
        offsets = [0] * n
    if len(offsets) != n:
        raise ValidationError(f"need {n} offsets, got {len(offsets)}")
    actions = tick_actions(chart)
    records = []
    for b in range(n):
        off = int(offsets[b])
        if not 0 <= off < TICKS_PER_BEAT:
            raise ValidationError(f"offset {off} outside [0, {TICKS_PER_BEAT})")
        target = window_tokens_at(actions, b * TICKS_PER_BEAT + off)[1:]  # SEP excluded
        if time_only:
            target = _strip_time_only(target)
        records.append(
            ShardRecord(
                song_id=song_id,
                beat=b,
                difficulty=chart.difficulty,
                context=_context_tokens(actions, b, off, time_only),
                target=tuple(target) + (EOS,),
                offset=off,
            )
        )
    return records


def format_shard_line(rec: ShardRecord, *, with_offset: bool) -> str:
    ctx = " ".join(str(t) for t in rec.context)
    tgt = " ".join(str(t) for t in rec.target)
    line = f"{rec.song_id}\t{rec.beat}\t{_fmt_real(rec.difficulty)}\tctx:{ctx}\ttgt:{tgt}"
    if with_offset:
        line += f"\toff:{rec.offset}"
    return line


def parse_shard_line(line: str, lineno: int = 0) -> ShardRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) not in (5, 6):
        raise ParseError(f"expected 5 or 6 fields, got {len(parts)}", line=lineno)
    if not parts[3].startswith("ctx:") or not parts[4].startswith("tgt:"):
        raise ParseError("fields 4/5 must be ctx:/tgt:", line=lineno)
    offset = 0
    if len(parts) == 6:
        if not parts[5].startswith("off:"):
            raise ParseError("field 6 must be off:<ticks>", line=lineno)
        offset = int(parts[5][4:])
    try:
        context = tuple(int(t) for t in parts[3][4:].split())
        target = tuple(int(t) for t in parts[4][4:].split()) if parts[4][4:] else ()
        return ShardRecord(
            song_id=parts[0],
            beat=int(parts[1]),
            difficulty=float(parts[2]),
            context=context,
            target=target,
            offset=offset,
        )
    except ValueError:
        raise ParseError("malformed numeric field", line=lineno) from None


def write_shard(path, records, *, with_offset: bool) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(format_shard_line(rec, with_offset=with_offset) + "\n")


def read_shard(path) -> list[ShardRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_shard_line(line, lineno))
    return records


# ---------------------------------------------------------------------------
# Build

@dataclass
class BuildReport:
    shard_paths: dict
    counts: dict
    normalization_path: str = ""
    errors: list = field(default_factory=list)


def _load_song_charts(rows):
    """Group manifest rows by song preserving order; parse charts."""
    by_song: dict[str, list] = {}
    order = []
    for row in rows:
        if row.song_id not in by_song:
            order.append(row.song_id)
        by_song[row.song_id] = by_song.get(row.song_id, []) + [row]
    return order, by_song


def _song_feature_path(out_dir, song_id: str) -> str:
    return os.path.join(out_dir, "features", f"{song_id}.feat")


def _build_features(out_dir, song_id, rows, charts, errors, *, overwrite=False) -> bool:
    """Extract and write one song's features from its first chart's tempo."""
    path = _song_feature_path(out_dir, song_id)
    if os.path.exists(path) and not overwrite:
        return True
    first_chart = charts[rows[0].chart]
    n_beats = max(charts[r.chart].n_beats for r in rows)
    try:
        audio = load_wav(rows[0].audio)
        spec = extract(audio, first_chart.tempo, max(n_beats, 1))
        write_features(path, spec.frames)
        return True
    except (OSError, FormatError, ValidationError) as e:
        errors.append((song_id, rows[0].audio, str(e)))
        return False


def _build_records(rows_by_song, song_order, charts, out_dir, *, time_only, rng, errors):
    """Records per split, plus per-chart feature consistency checks."""
    by_split: dict[str, list] = {s: [] for s in SPLITS}
    for song_id in song_order:
        rows = rows_by_song[song_id]
        feat_path = _song_feature_path(out_dir, song_id)
        if not os.path.exists(feat_path):
            continue  # feature build already recorded the error
        n_frames = read_features(feat_path).shape[0]
        ref_tempo = charts[rows[0].chart].tempo
        for row in rows:
            chart = charts[row.chart]
            if chart.tempo != ref_tempo:
                errors.append((song_id, row.chart, "tempo map differs from the song's feature tempo"))
                continue
            if chart.n_beats * TICKS_PER_BEAT > n_frames:
                errors.append(
                    (song_id, row.chart,
                     f"chart needs {chart.n_beats * TICKS_PER_BEAT} feature rows, file has {n_frames}")
                )
                continue
            n = max(chart.n_beats - 1, 0)
            offsets = rng.integers(0, TICKS_PER_BEAT, size=n) if rng is not None else None
            by_split[row.split].extend(
                records_for_chart(chart, song_id, time_only=time_only, offsets=offsets)
            )
    return by_split


def _run_build(rows, out_dir, *, mode: str, seed: int, jobs: int, unaligned: bool) -> BuildReport:
    validate_manifest(rows)
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "shards"), exist_ok=True)
    errors: list = []
    charts = {}
    rows_ok = []
    for row in rows:
        if row.chart in charts:
            rows_ok.append(row)
            continue
        try:
            with open(row.chart) as fh:
                charts[row.chart] = parse_cchart(fh.read())
            rows_ok.append(row)
        except (OSError, ParseError) as e:
            errors.append((row.song_id, row.chart, str(e)))
    song_order, rows_by_song = _load_song_charts(rows_ok)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(
                pool.map(
                    lambda sid: _build_features(out_dir, sid, rows_by_song[sid], charts, errors),
                    song_order,
                )
            )
    else:
        for sid in song_order:
            _build_features(out_dir, sid, rows_by_song[sid], charts, errors)

    rng = np.random.default_rng(seed) if unaligned else None
    by_split = _build_records(
        rows_by_song, song_order, charts, out_dir, time_only=(mode == "time_only"), rng=rng, errors=errors
    )

    shard_paths = {}
    counts = {}
    for split in SPLITS:
        path = os.path.join(out_dir, "shards", f"{split}.{mode}.shard")
        write_shard(path, by_split[split], with_offset=unaligned)
        shard_paths[split] = path
        counts[split] = len(by_split[split])

    # per-Mel-bin stats over the train split's feature rows
    norm_path = os.path.join(out_dir, "normalization.feat")
    train_songs = [s for s in song_order if rows_by_song[s][0].split == "train"]
    rows_stack = [
        read_features(_song_feature_path(out_dir, s))
        for s in train_songs
        if os.path.exists(_song_feature_path(out_dir, s))
    ]
    if rows_stack:
        mean, std = compute_normalization(np.concatenate(rows_stack, axis=0))
        write_features(norm_path, np.stack([mean, std]))
    return BuildReport(shard_paths=shard_paths, counts=counts, normalization_path=norm_path, errors=errors)


def build_shards(rows, out_dir, mode: str = "full", jobs: int = 1) -> BuildReport:
    """Aligned shards (mode full|time_only) + per-song features + train stats."""
    if mode not in ("full", "time_only"):
        raise ValidationError(f"mode must be full or time_only, got {mode!r}")
    return _run_build(rows, out_dir, mode=mode, seed=0, jobs=jobs, unaligned=False)


def build_unaligned_shards(rows, out_dir, seed: int = 0, jobs: int = 1) -> BuildReport:
    """Same record count per chart, window starts shifted by per-record tick offsets."""
    return _run_build(rows, out_dir, mode="unaligned", seed=seed, jobs=jobs, unaligned=True)


# ---------------------------------------------------------------------------
# Training-sample realization and stats

def read_normalization(path) -> tuple[np.ndarray, np.ndarray]:
    stats = read_features(path)
    if stats.shape[0] != 2:
        raise FormatError("normalization file must hold two rows: mean, std")
    return stats[0], stats[1]


def load_split(out_dir, split: str, mode: str = "full") -> list[TrainSample]:
    """Realize a shard as TrainSamples with normalized features."""
    records = read_shard(os.path.join(out_dir, "shards", f"{split}.{mode}.shard"))
    mean, std = read_normalization(os.path.join(out_dir, "normalization.feat"))
    features: dict[str, np.ndarray] = {}
    samples = []
    for rec in records:
        if rec.song_id not in features:
            features[rec.song_id] = read_features(_song_feature_path(out_dir, rec.song_id))
        lo = (rec.beat - WINDOW_BEATS) * TICKS_PER_BEAT + rec.offset
        frames = slice_frames(features[rec.song_id], lo, lo + ENCODER_BEATS * TICKS_PER_BEAT)
        samples.append(
            TrainSample(
                encoder_frames=apply_normalization(frames, mean, std),
                context=rec.context,
                target=rec.target,
                difficulty=rec.difficulty,
            )
        )
    return samples


def stats_report(rows, out_dir=None, mode: str = "full") -> str:
    """Per-split song/chart/beat/sample counts plus beat-group frequencies.

    Sample counts come from shard files when `out_dir` points at a
    build; otherwise they are derived as n_beats - 1 per chart.
    """
    validate_manifest(rows)
    per_split = {s: {"songs": set(), "charts": 0, "beats": 0, "samples": 0} for s in SPLITS}
    group_counts = {g: 0 for g in STATS_GROUPS}
    total_ticks = 0
    for row in rows:
        try:
            with open(row.chart) as fh:
                chart = parse_cchart(fh.read())
        except (OSError, ParseError):
            continue
        agg = per_split[row.split]
        agg["songs"].add(row.song_id)
        agg["charts"] += 1
        agg["beats"] += chart.n_beats
        agg["samples"] += max(chart.n_beats - 1, 0)
        for tick in occupied_ticks(chart):
            total_ticks += 1
            g = beat_group_of(tick)
            if g in group_counts:
                group_counts[g] += 1
    if out_dir is not None:
        for split in SPLITS:
            path = os.path.join(out_dir, "shards", f"{split}.{mode}.shard")
            if os.path.exists(path):
                per_split[split]["samples"] = len(read_shard(path))

    lines = [f"{'split':<6} {'songs':>6} {'charts':>7} {'beats':>8} {'samples':>8}"]
    kv = []
    for split in SPLITS:
        agg = per_split[split]
        n_songs = len(agg["songs"])
        lines.append(f"{split:<6} {n_songs:>6} {agg['charts']:>7} {agg['beats']:>8} {agg['samples']:>8}")
        kv.extend(
            [
                (f"songs_{split}", n_songs),
                (f"charts_{split}", agg["charts"]),
                (f"beats_{split}", agg["beats"]),
                (f"samples_{split}", agg["samples"]),
            ]
        )
    lines.append("")
    lines.append("beat-group frequency (% of occupied ticks):")
    for g in STATS_GROUPS:
        pct = 100.0 * group_counts[g] / total_ticks if total_ticks else 0.0
        lines.append(f"  {g:<5} {pct:5.1f}")
        kv.append((f"freq_{g}", f"{pct:.6f}"))
    lines.append("")
    lines.extend(f"{k}\t{v}" for k, v in kv)
    return "\n".join(lines) + "\n"
