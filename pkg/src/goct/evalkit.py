"""Evaluation: tick-level micro-F1, beat-group breakdown, tolerance matching.

Aligned charts share the 1/48-beat grid, so the exact mode compares
tick sets directly.  The tolerance mode converts ticks to milliseconds
through the truth tempo map and accepts a prediction when any ground
truth event lies within the window (many-to-one matching allowed).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from goct.chartcore.chart import Chart, TICKS_PER_BEAT, occupied_ticks
from goct.chartcore.tempo import times_at_beats
from goct.errors import ValidationError
from goct.tokencodec import action_to_token

# Coarsest subdivision first: a tick belongs to the first divisor of
# its beat offset in this order.
_GROUP_DIVISORS = (
    (48, "4th"),
    (24, "8th"),
    (16, "12th"),
    (12, "16th"),
    (8, "24th"),
    (6, "32nd"),
    (4, "48th"),
    (3, "64th"),
    (2, "96th"),
)
GROUP_ORDER = tuple(name for _, name in _GROUP_DIVISORS) + ("192nd",)


@dataclass(frozen=True)
class F1Metrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class GroupMetrics:
    metrics: F1Metrics
    truth_freq_pct: float


@dataclass(frozen=True)
class ChartEvalReport:
    mode: str
    overall: F1Metrics
    groups: Optional[dict]  # group name -> GroupMetrics; None in tolerance mode


def _metrics(tp: int, fp: int, fn: int) -> F1Metrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Metrics(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def beat_group_of(tick: int) -> str:
    if tick < 0:
        raise ValidationError(f"tick must be >= 0, got {tick}")
    offset = tick % TICKS_PER_BEAT
    for divisor, name in _GROUP_DIVISORS:
        if offset % divisor == 0:
            return name
    return "192nd"


def tick_f1(pred: Iterable[int], truth: Iterable[int]) -> F1Metrics:
    """Micro metrics on tick sets; F1 = 0 when nothing intersects."""
    p = set(pred)
    t = set(truth)
    tp = len(p & t)
    return _metrics(tp, len(p) - tp, len(t) - tp)


def per_group_f1(pred: Iterable[int], truth: Iterable[int]) -> dict:
    """tick_f1 per beat group, with each group's share of truth ticks."""
    p = set(pred)
    t = set(truth)
    out = {}
    for name in GROUP_ORDER:
        pg = {x for x in p if beat_group_of(x) == name}
        tg = {x for x in t if beat_group_of(x) == name}
        if not pg and not tg:
            continue
        freq = 100.0 * len(tg) / len(t) if t else 0.0
        out[name] = GroupMetrics(metrics=tick_f1(pg, tg), truth_freq_pct=freq)
    return out


def tolerance_f1(pred_times_ms, truth_times_ms, tol_ms: float = 30.0) -> F1Metrics:
    """Any-match tolerance metrics on event times.

    tp counts predictions with some truth within ±tol; fn counts truth
    events with no prediction within ±tol.  Not one-to-one.
    """
    if tol_ms < 0:
        raise ValidationError(f"tolerance must be >= 0, got {tol_ms}")
    pred = np.sort(np.asarray(list(pred_times_ms), dtype=np.float64))
    truth = np.sort(np.asarray(list(truth_times_ms), dtype=np.float64))

    def hits(queries, anchors):
        if queries.size == 0:
            return 0
        if anchors.size == 0:
            return 0
        idx = np.searchsorted(anchors, queries)
        left = anchors[np.maximum(idx - 1, 0)]
        right = anchors[np.minimum(idx, anchors.size - 1)]
        nearest = np.minimum(np.abs(queries - left), np.abs(queries - right))
        return int((nearest <= tol_ms).sum())

    tp = hits(pred, truth)
    fp = int(pred.size) - tp
    recall_hits = hits(truth, pred)
    fn = int(truth.size) - recall_hits
    # Any-match counting: precision is pred-side, recall truth-side; with
    # many-to-one matches allowed, tp/(tp+fn) would overstate recall.
    precision = tp / pred.size if pred.size else 0.0
    recall = recall_hits / truth.size if truth.size else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Metrics(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def _action_pairs(chart: Chart) -> set:
    by_tick: dict[int, list] = {}
    for ev in chart.events:
        by_tick.setdefault(ev.tick, []).append(ev)
    pairs = set()
    for tick, evs in by_tick.items():
        states: list[Optional[str]] = [None] * 4
        for ev in evs:
            states[ev.column] = ev.kind
        pairs.add((tick, action_to_token(states)))
    return pairs


def evaluate_chart(
    pred: Chart,
    truth: Chart,
    mode: str = "exact",
    strict_actions: bool = False,
    tol_ms: float = 30.0,
) -> ChartEvalReport:
    if mode == "exact":
        if strict_actions:
            p = _action_pairs(pred)
            t = _action_pairs(truth)
            tp = len(p & t)
            overall = _metrics(tp, len(p) - tp, len(t) - tp)
            # the group breakdown stays temporal; strictness applies to overall
            groups = per_group_f1({tick for tick, _ in p}, {tick for tick, _ in t})
        else:
            p_ticks = occupied_ticks(pred)
            t_ticks = occupied_ticks(truth)
            overall = tick_f1(p_ticks, t_ticks)
            groups = per_group_f1(p_ticks, t_ticks)
        return ChartEvalReport(mode="exact", overall=overall, groups=groups)
    if mode == "tolerance":
        p_ms = times_at_beats(truth.tempo, np.asarray(occupied_ticks(pred), dtype=np.float64) / TICKS_PER_BEAT)
        t_ms = times_at_beats(truth.tempo, np.asarray(occupied_ticks(truth), dtype=np.float64) / TICKS_PER_BEAT)
        overall = tolerance_f1(p_ms, t_ms, tol_ms=tol_ms)
        return ChartEvalReport(mode="tolerance", overall=overall, groups=None)
    raise ValidationError(f"unknown evaluation mode {mode!r}")


def format_report(report: ChartEvalReport) -> str:
    """Human-readable table followed by a key<TAB>value block."""
    o = report.overall
    lines = [
        f"mode: {report.mode}",
        f"overall  P {o.precision:.4f}  R {o.recall:.4f}  F1 {o.f1:.4f}  (tp {o.tp} fp {o.fp} fn {o.fn})",
    ]
    if report.groups:
        lines.append(f"{'group':<6} {'freq%':>6} {'P':>7} {'R':>7} {'F1':>7}")
        for name in GROUP_ORDER:
            if name not in report.groups:
                continue
            g = report.groups[name]
            m = g.metrics
            lines.append(
                f"{name:<6} {g.truth_freq_pct:>6.1f} {m.precision:>7.4f} {m.recall:>7.4f} {m.f1:>7.4f}"
            )
    lines.append("")
    kv = [
        ("mode", report.mode),
        ("overall_precision", f"{o.precision:.6f}"),
        ("overall_recall", f"{o.recall:.6f}"),
        ("overall_f1", f"{o.f1:.6f}"),
        ("overall_tp", str(o.tp)),
        ("overall_fp", str(o.fp)),
        ("overall_fn", str(o.fn)),
    ]
    if report.groups:
        for name in GROUP_ORDER:
            if name not in report.groups:
                continue
            g = report.groups[name]
            kv.append((f"group_{name}_freq_pct", f"{g.truth_freq_pct:.6f}"))
            kv.append((f"group_{name}_precision", f"{g.metrics.precision:.6f}"))
            kv.append((f"group_{name}_recall", f"{g.metrics.recall:.6f}"))
            kv.append((f"group_{name}_f1", f"{g.metrics.f1:.6f}"))
    lines.extend(f"{k}\t{v}" for k, v in kv)
    return "\n".join(lines) + "\n"
