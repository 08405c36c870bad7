"""Grammar-constrained greedy decoding.

The grammar mask makes every emitted window well-formed by
construction: after SEP {time, EOS}; after a time token {action}
(time-only models: {later time, EOS}); after an action {later time,
EOS}.  SEP itself is forced, never sampled.
"""

from __future__ import annotations

import numpy as np

from goct.chartcore.chart import N_COLUMNS, ONSET, RELEASE, TICKS_PER_BEAT, Chart, ChartEvent, make_chart
from goct.chartcore.tempo import TempoMap
from goct.featureext import BeatSpectrogram, apply_normalization, window_frames
from goct.nnmodel.config import CONTEXT_LEN, ENCODER_BEATS
from goct.nnmodel.net import ModelParams, forward
from goct.tokencodec import (
    EOS,
    SEP,
    WindowTokens,
    context_slice,
    decode_stream,
    decode_times,
    legal_next_mask,
)


def generate_window(
    params: ModelParams,
    encoder_frames: np.ndarray,
    context,
    difficulty: float,
    start_beat: int = 0,
) -> WindowTokens:
    """Greedy-decode one two-beat window; returns tokens starting with SEP."""
    cfg = params.config
    if len(context) != CONTEXT_LEN:
        raise ValueError(f"context must have {CONTEXT_LEN} tokens")
    window = [SEP]
    dec = list(context) + [SEP]
    while len(window) - 1 < cfg.max_target_tokens:
        logits = forward(params, encoder_frames, dec, difficulty)[-1]
        mask = legal_next_mask(window, time_only=cfg.time_only)
        constrained = np.where(mask, logits, -np.inf)
        token = int(np.argmax(constrained))
        if token == EOS:
            break
        window.append(token)
        dec.append(token)
    return WindowTokens(window_start_beat=start_beat, tokens=tuple(window))


def generate_windows(
    params: ModelParams,
    spectrogram: BeatSpectrogram,
    difficulty: float,
) -> list[WindowTokens]:
    """Slide over even beats; each step sees beats [b-2, b+2) and the token tail."""
    mean = params.tensors["feat_mean"]
    std = params.tensors["feat_std"]
    stream: list[int] = []
    windows: list[WindowTokens] = []
    for b in range(0, spectrogram.n_beats, 2):
        frames = apply_normalization(window_frames(spectrogram, b - 2, ENCODER_BEATS), mean, std)
        ctx = context_slice(stream, CONTEXT_LEN)
        w = generate_window(params, frames, ctx, difficulty, start_beat=b)
        windows.append(w)
        stream.extend(w.tokens)
    return windows


def generate_chart(
    params: ModelParams,
    spectrogram: BeatSpectrogram,
    tempo: TempoMap,
    difficulty: float,
) -> Chart:
    windows = generate_windows(params, spectrogram, difficulty)
    if params.config.time_only:
        # time-only models carry no action information; realize each
        # predicted tick as a column-0 tap so the result is still a Chart
        ticks = decode_times(windows)
        events = [ChartEvent(tick=t, column=0, kind=ONSET) for t in ticks]
    else:
        events = decode_stream(windows)
    return make_chart(tempo, difficulty, _playable(events, spectrogram.n_beats), n_beats=spectrogram.n_beats)


def _playable(events, n_beats: int) -> list[ChartEvent]:
    """Drop events the chart cannot hold: the grammar mask keeps token
    streams well-formed but not hold states, so a model may emit a release
    with no open onset, and the final window overhangs odd-length songs."""
    limit = n_beats * TICKS_PER_BEAT
    open_col = [False] * N_COLUMNS
    kept = []
    for ev in events:
        if ev.tick >= limit:
            continue
        if ev.kind == RELEASE:
            if not open_col[ev.column]:
                continue
            open_col[ev.column] = False
        else:
            open_col[ev.column] = True
        kept.append(ev)
    return kept
