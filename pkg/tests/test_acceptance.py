"""Acceptance gate: one test and one printed PASS/FAIL line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the report lines.
The overfit experiment trains a real model and dominates the runtime
(about two minutes total on one desktop core).
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from goct.chartcore import (
    ChartEvent,
    ONSET,
    TICKS_PER_BEAT,
    TempoMap,
    TimingSection,
    detect_offbeat_tempo_changes,
    make_chart,
    parse_cchart,
    serialize_cchart,
    time_at_beat,
    beat_at_time,
)
from goct.chartcore.osu import import_osu
from goct.chartcore.sm import import_sm
from goct.datasetpipe import (
    build_shards,
    build_unaligned_shards,
    filter_charts,
    read_shard,
    records_for_chart,
)
from goct.errors import ImportRejection
from goct.evalkit import beat_group_of, tick_f1, tolerance_f1
from goct.featureext import AudioBuffer, apply_normalization, compute_normalization, extract
from goct.nnmodel import ModelConfig, TrainSample, finetune, generate_chart, train
from goct.tokencodec import (
    ACTION_MAX,
    ACTION_MIN,
    EOS,
    action_to_token,
    decode_stream,
    encode_chart,
    tick_actions,
    token_to_action,
    window_tokens_at,
)

from conftest import build_corpus, click_audio, constant_tempo, random_chart, random_tempo_map
from test_evalkit import brute_force_f1, brute_force_tolerance, oracle_group
from test_gradcheck import fd_failures, fd_results
from test_osu import osu_text
from test_sm import sm_text


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} | {detail}")


def test_codec_round_trip_1000():
    rng = np.random.default_rng(1000)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        chart = random_chart(rng)
        if decode_stream(encode_chart(chart)) != chart.events:
            bad += 1
        elif parse_cchart(serialize_cchart(chart)) != chart:
            bad += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 10.0
    report("codec-round-trip", ok, f"1000 charts, {bad} mismatches, {elapsed:.2f}s (< 10s)")
    assert ok


def test_action_enumeration_exhaustive():
    seen = {}
    for token in range(ACTION_MIN, ACTION_MAX + 1):
        states = token_to_action(token)
        assert action_to_token(states) == token
        seen[states] = token
    n_states = 3 ** 4 - 1  # every per-column combination except all-None
    ok = len(seen) == 80 == n_states and ACTION_MAX - ACTION_MIN + 1 == 80
    report("action-enumeration", ok, f"{len(seen)} distinct actions over ids [{ACTION_MIN},{ACTION_MAX}]")
    assert ok


def _offbeat_case(rng):
    """Tempo map with boundaries deliberately on or off the beat grid."""
    sections = [TimingSection(float(np.round(rng.uniform(0, 1000), 3)), float(rng.uniform(60, 200)))]
    expect = []
    beat = 0.0
    for _ in range(int(rng.integers(1, 4))):
        prefix = TempoMap(sections=tuple(sections))
        beat += float(rng.integers(2, 9))
        t = time_at_beat(prefix, beat)
        if rng.random() < 0.5:
            t += float(rng.uniform(0.05, 0.45)) * 60000.0 / sections[-1].bpm
            expect.append(len(sections))
        sections.append(TimingSection(t, float(rng.uniform(60, 200))))
    return TempoMap(sections=tuple(sections)), expect


def _oracle_offbeat(tempo: TempoMap, tol: float = 1e-4) -> list:
    flagged = []
    for i in range(1, len(tempo.sections)):
        prefix = TempoMap(sections=tempo.sections[:i])
        b = beat_at_time(prefix, tempo.sections[i].start_ms)
        if abs(b - round(b)) > tol:
            flagged.append(i)
    return flagged


def test_tempo_math():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(10_000):
        tempo = random_tempo_map(rng)
        for beat in rng.uniform(0.0, 64.0, size=3):
            back = beat_at_time(tempo, time_at_beat(tempo, float(beat)))
            worst = max(worst, abs(back - beat) / max(1.0, abs(beat)))
    inverse_ok = worst <= 1e-9

    mismatches = 0
    n_offbeat = 0
    for _ in range(100):
        tempo, expect = _offbeat_case(rng)
        got = detect_offbeat_tempo_changes(tempo)
        if got != expect or got != _oracle_offbeat(tempo):
            mismatches += 1
        n_offbeat += bool(expect)
    detector_ok = mismatches == 0
    report(
        "tempo-math",
        inverse_ok and detector_ok,
        f"worst inverse rel err {worst:.2e} over 1e4 maps; "
        f"detector mismatches {mismatches}/100 ({n_offbeat} cases with off-beat sections)",
    )
    assert inverse_ok and detector_ok


def test_feature_shape_law_and_click_alignment():
    shapes = {}
    misaligned = 0
    for bpm in (60.0, 120.0, 137.0):
        tempo = constant_tempo(bpm=bpm)
        audio = click_audio(tempo, 400)
        frames = extract(audio, tempo, 400).frames
        shapes[bpm] = frames.shape
        if bpm in (60.0, 120.0):
            energy = frames.sum(axis=1)
            for b in range(1, 400):
                row = TICKS_PER_BEAT * b
                lo = row - 6
                local = int(np.argmax(energy[lo : row + 7])) + lo
                if abs(local - row) > 1:
                    misaligned += 1
    shape_ok = all(s == (19_200, 80) for s in shapes.values())
    ok = shape_ok and misaligned == 0
    report(
        "feature-shape-law",
        ok,
        f"400 beats -> {shapes[137.0][0]}x{shapes[137.0][1]} at 60/120/137 BPM; "
        f"{misaligned} click rows off by more than 1",
    )
    assert ok


def test_gradient_check():
    t0 = time.perf_counter()
    results = fd_results()
    elapsed = time.perf_counter() - t0
    failures = fd_failures(results)
    # key-projection biases cancel inside softmax: their true gradient is
    # zero, so they are judged by the absolute floor, not the ratio
    worst = max((diff / norm for _, diff, norm in results if norm > 1e-8), default=0.0)
    invariant = sum(1 for _, _, norm in results if norm <= 1e-8)
    ok = not failures and elapsed < 120.0
    report(
        "gradient-check",
        ok,
        f"{len(results)} tensors, worst rel err {worst:.2e} (< 1e-3), "
        f"{invariant} loss-invariant biases at zero, {elapsed:.1f}s (< 120s)",
    )
    assert ok, failures


# --------------------------------------------------------- overfit experiment


def _pattern_events(n_beats: int, kind: str) -> list:
    events = []
    for b in range(n_beats):
        base = TICKS_PER_BEAT * b
        if kind == "beats":  # tap column 0 on every beat
            events.append(ChartEvent(base, 0, ONSET))
        elif kind == "beats+off":  # column 0 on the beat, column 1 on the half-beat
            events.append(ChartEvent(base, 0, ONSET))
            events.append(ChartEvent(base + 24, 1, ONSET))
        else:  # "offbeats": column 2 on the half-beat only
            events.append(ChartEvent(base + 24, 2, ONSET))
    return events


def _song_samples(chart, feats: np.ndarray) -> list:
    """TrainSamples with windows sliced from already-normalized features."""
    samples = []
    for rec in records_for_chart(chart, "s"):
        lo = (rec.beat - 2) * TICKS_PER_BEAT
        frames = np.zeros((4 * TICKS_PER_BEAT, feats.shape[1]), dtype=np.float32)
        s, e = max(lo, 0), min(lo + 4 * TICKS_PER_BEAT, feats.shape[0])
        frames[s - lo : e - lo] = feats[s:e]
        samples.append(TrainSample(frames, rec.context, rec.target, chart.difficulty))
    return samples


def _micro_f1(pairs) -> float:
    tp = fp = fn = 0
    for pred_chart, truth_chart in pairs:
        m = tick_f1({e.tick for e in pred_chart.events}, {e.tick for e in truth_chart.events})
        tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
    return 2.0 * tp / max(2 * tp + fp + fn, 1)


def test_overfit_and_finetune():
    t_cpu = time.process_time()
    t_wall = time.perf_counter()
    n_beats = 32
    corpus = []  # (spec, tempo, difficulty, chart)
    feats = []
    for bpm in (60.0, 90.0, 120.0, 150.0):
        tempo = constant_tempo(bpm=bpm)
        spec = extract(click_audio(tempo, n_beats), tempo, n_beats)
        feats.append(spec.frames)
        for diff, kind in ((1.0, "beats"), (3.0, "beats+off")):
            chart = make_chart(tempo, diff, _pattern_events(n_beats, kind), n_beats=n_beats)
            corpus.append((spec, tempo, diff, chart))
    mean, std = compute_normalization(np.concatenate(feats, axis=0))
    samples = []
    for i in range(4):
        normed = apply_normalization(feats[i], mean, std)
        for spec, tempo, diff, chart in corpus[2 * i : 2 * i + 2]:
            samples.extend(_song_samples(chart, normed))

    config = ModelConfig(
        n_layers=2, d_model=64, n_heads=4, d_ff=256, token_embed_dim=48, difficulty_embed_dim=16
    )
    result = train(samples, config, lr=2e-4, batch_size=32, epochs=40, seed=0, normalization=(mean, std))
    train_f1 = _micro_f1(
        (generate_chart(result.params, spec, tempo, diff), chart)
        for spec, tempo, diff, chart in corpus
    )
    cpu_min = (time.process_time() - t_cpu) / 60.0
    overfit_ok = train_f1 >= 0.95 and cpu_min < 10.0

    # held-out song: unseen BPM, unseen difficulty bucket, unseen pattern
    ho_tempo = constant_tempo(bpm=100.0)
    ho_spec = extract(click_audio(ho_tempo, 64), ho_tempo, 64)
    ho_chart = make_chart(ho_tempo, 2.0, _pattern_events(64, "offbeats"), n_beats=64)
    ho_samples = _song_samples(ho_chart, apply_normalization(ho_spec.frames, mean, std))

    def held_out_f1(params):
        return _micro_f1([(generate_chart(params, ho_spec, ho_tempo, 2.0), ho_chart)])

    base_f1 = held_out_f1(result.params)
    tuned = finetune(result.params, ho_samples, lr=2e-5, epochs=4, batch_size=1, seed=1)
    tuned_f1 = held_out_f1(tuned.params)
    finetune_ok = tuned_f1 > base_f1

    report(
        "overfit-and-finetune",
        overfit_ok and finetune_ok,
        f"train micro-F1 {train_f1:.3f} (>= 0.95) in {cpu_min:.1f} CPU-min (< 10); "
        f"held-out F1 {base_f1:.3f} -> {tuned_f1:.3f} after finetune "
        f"(wall {time.perf_counter() - t_wall:.0f}s)",
    )
    assert overfit_ok and finetune_ok


def test_evaluation_oracle():
    rng = np.random.default_rng(7)
    mismatch = 0
    for _ in range(200):
        pred = set(rng.integers(0, 300, size=rng.integers(0, 40)).tolist())
        truth = set(rng.integers(0, 300, size=rng.integers(0, 40)).tolist())
        m = tick_f1(pred, truth)
        tp, fp, fn, _, _, f1 = brute_force_f1(pred, truth)
        if (m.tp, m.fp, m.fn) != (tp, fp, fn) or abs(m.f1 - f1) > 1e-9:
            mismatch += 1
    for _ in range(200):
        pred_t = np.sort(rng.uniform(0, 5000, size=rng.integers(0, 30))).tolist()
        truth_t = np.sort(rng.uniform(0, 5000, size=rng.integers(0, 30))).tolist()
        tol = float(rng.uniform(1, 60))
        m = tolerance_f1(pred_t, truth_t, tol)
        tp, fp, fn, f1 = brute_force_tolerance(pred_t, truth_t, tol)
        if (m.tp, m.fp, m.fn) != (tp, fp, fn) or abs(m.f1 - f1) > 1e-9:
            mismatch += 1
    group_bad = [t for t in range(TICKS_PER_BEAT) if beat_group_of(t) != oracle_group(t)]
    taxonomy = {24: "8th", 12: "16th", 16: "12th", 6: "32nd", 8: "24th"}
    taxonomy_bad = {t: beat_group_of(t) for t, g in taxonomy.items() if beat_group_of(t) != g}
    ok = mismatch == 0 and not group_bad and not taxonomy_bad
    report(
        "evaluation-oracle",
        ok,
        f"400 brute-force comparisons, {mismatch} mismatches; "
        f"beat groups exact on all {TICKS_PER_BEAT} offsets; taxonomy {'ok' if not taxonomy_bad else taxonomy_bad}",
    )
    assert ok


def test_filter_conformance():
    reasons = {}
    with pytest.raises(ImportRejection) as exc:
        import_osu(osu_text(circle_size=7, hit_objects=["64,192,0,1,0,0:0:0:0:"]))
    reasons["non-4k osu"] = exc.value.reason
    sm_res = import_sm(sm_text(notes_blocks=[("dance-double", "5", "10000000")]))
    reasons["non-4k sm"] = sm_res.rejected[0].reason if sm_res.rejected else "MISSING"

    offbeat_tempo = TempoMap(sections=(TimingSection(0.0, 120.0), TimingSection(1250.0, 90.0)))
    offbeat_chart = make_chart(offbeat_tempo, 1.0, _pattern_events(4, "beats"), n_beats=4)
    dense_chart = make_chart(
        constant_tempo(),
        1.0,
        [ChartEvent(TICKS_PER_BEAT + i * 7 // 4, i % 4, ONSET) for i in range(26)],
        n_beats=4,
    )
    clean_chart = make_chart(constant_tempo(), 1.0, _pattern_events(4, "beats+off"), n_beats=4)
    result = filter_charts([offbeat_chart, dense_chart, clean_chart])
    reasons["off-beat tempo"] = result.rejected[0].reason if result.rejected else "MISSING"
    reasons["26 events/beat"] = result.rejected[1].reason if len(result.rejected) > 1 else "MISSING"

    ok = (
        reasons["non-4k osu"] == "not_4k"
        and "dance-double" in reasons["non-4k sm"]
        and reasons["off-beat tempo"] == "offbeat_tempo"
        and reasons["26 events/beat"] == "density"
        and result.kept == (clean_chart,)
    )
    report(
        "filter-conformance",
        ok,
        "; ".join(f"{k}: {v}" for k, v in reasons.items()) + f"; compliant kept: {result.kept == (clean_chart,)}",
    )
    assert ok


def test_aligned_vs_unaligned_harness(tmp_path):
    rows, _ = build_corpus(tmp_path)
    aligned = build_shards(rows, tmp_path / "aligned")
    unaligned = build_unaligned_shards(rows, tmp_path / "unaligned", seed=9)
    counts_ok = aligned.counts == unaligned.counts and not aligned.errors and not unaligned.errors

    charts = {r.chart: parse_cchart(open(r.chart).read()) for r in rows}
    actions_by_key = {
        (r.song_id, r.difficulty): tick_actions(charts[r.chart]) for r in rows
    }
    keys_ok = True
    offsets_consistent = True
    nonzero = 0
    for split in ("train", "valid", "test"):
        a_recs = read_shard(aligned.shard_paths[split])
        u_recs = read_shard(unaligned.shard_paths[split])
        a_keys = [(r.song_id, r.beat, r.difficulty) for r in a_recs]
        u_keys = [(r.song_id, r.beat, r.difficulty) for r in u_recs]
        keys_ok = keys_ok and a_keys == u_keys and all(r.offset == 0 for r in a_recs)
        for rec in u_recs:
            nonzero += rec.offset != 0
            actions = actions_by_key[(rec.song_id, rec.difficulty)]
            want = tuple(window_tokens_at(actions, rec.beat * TICKS_PER_BEAT + rec.offset)[1:]) + (EOS,)
            if rec.target != want:
                offsets_consistent = False
    ok = counts_ok and keys_ok and offsets_consistent and nonzero > 0
    report(
        "aligned-vs-unaligned",
        ok,
        f"counts {aligned.counts} == {unaligned.counts}; same (song,beat,difficulty) keys; "
        f"{nonzero} shifted windows all match their offset's token window",
    )
    assert ok
