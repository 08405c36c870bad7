"""Chart token codec.

Vocabulary of 178 ids: time tokens 0-95 (tick offset within a two-beat
window), separator 96, action tokens 97-176, EOS 177.  An action token
encodes the simultaneous per-column states at one tick as a base-3
number with column 0 as the most significant digit (0 none, 1 onset,
2 release); v ranges over [1, 80] and the token is 96+v.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from goct.chartcore.chart import (
    N_COLUMNS,
    ONSET,
    RELEASE,
    TICKS_PER_BEAT,
    Chart,
    ChartEvent,
)
from goct.errors import GrammarError, ParseError, ValidationError

TIME_TOKENS = 96  # ids 0..95, two beats of 48 ticks
SEP = 96
ACTION_MIN = 97
ACTION_MAX = 176
EOS = 177
VOCAB_SIZE = 178

WINDOW_BEATS = 2
WINDOW_TICKS = WINDOW_BEATS * TICKS_PER_BEAT

_DIGIT_OF = {None: 0, "none": 0, ONSET: 1, RELEASE: 2}
_STATE_OF_DIGIT = (None, ONSET, RELEASE)


@dataclass(frozen=True)
class WindowTokens:
    """Token run for one two-beat window starting at ``window_start_beat``."""

    window_start_beat: int
    tokens: tuple[int, ...]


def action_to_token(states: Sequence[Optional[str]]) -> int:
    """Map per-column states (None/onset/release, column 0 first) to a token id."""
    if len(states) != N_COLUMNS:
        raise ValidationError(f"expected {N_COLUMNS} column states, got {len(states)}")
    v = 0
    for s in states:
        if s not in _DIGIT_OF:
            raise ValidationError(f"unknown column state {s!r}")
        v = 3 * v + _DIGIT_OF[s]
    if v == 0:
        raise ValidationError("all-none action has no token")
    return SEP + v


def token_to_action(token: int) -> tuple[Optional[str], ...]:
    """Inverse of action_to_token."""
    if not ACTION_MIN <= token <= ACTION_MAX:
        raise ValidationError(f"token {token} is not an action token")
    v = token - SEP
    digits = []
    for _ in range(N_COLUMNS):
        digits.append(v % 3)
        v //= 3
    return tuple(_STATE_OF_DIGIT[d] for d in reversed(digits))


def tick_actions(chart: Chart) -> dict[int, int]:
    """Collapse events into one action token per occupied tick."""
    by_tick: dict[int, list[ChartEvent]] = {}
    for ev in chart.events:
        by_tick.setdefault(ev.tick, []).append(ev)
    actions = {}
    for tick, evs in by_tick.items():
        states: list[Optional[str]] = [None] * N_COLUMNS
        for ev in evs:
            states[ev.column] = ev.kind
        actions[tick] = action_to_token(states)
    return actions


def window_tokens_at(actions: dict[int, int], start_tick: int) -> tuple[int, ...]:
    """SEP + (time, action) pairs for ticks in [start_tick, start_tick + 96)."""
    tokens = [SEP]
    for tick in sorted(t for t in actions if start_tick <= t < start_tick + WINDOW_TICKS):
        tokens.append(tick - start_tick)
        tokens.append(actions[tick])
    return tuple(tokens)


def encode_window(chart: Chart, start_beat: int) -> WindowTokens:
    """Tokens of the two-beat window starting at ``start_beat``."""
    return WindowTokens(
        window_start_beat=start_beat,
        tokens=window_tokens_at(tick_actions(chart), start_beat * TICKS_PER_BEAT),
    )


def encode_chart(chart: Chart) -> list[WindowTokens]:
    """Tokenize a chart into two-beat windows starting at even beats."""
    actions = tick_actions(chart)
    return [
        WindowTokens(window_start_beat=b, tokens=window_tokens_at(actions, b * TICKS_PER_BEAT))
        for b in range(0, chart.n_beats, WINDOW_BEATS)
    ]


def decode_stream(windows: Iterable[WindowTokens]) -> tuple[ChartEvent, ...]:
    """Decode token windows back into chart events.

    EOS tokens are padding and ignored.  Grammar violations raise
    GrammarError carrying the window index and token position.
    """
    events: list[ChartEvent] = []
    for w_idx, window in enumerate(windows):
        base = window.window_start_beat * TICKS_PER_BEAT
        prev_time = -1
        pending_time: Optional[int] = None
        seen_sep = False
        for pos, token in enumerate(window.tokens):
            if not 0 <= token < VOCAB_SIZE:
                raise GrammarError(f"token id {token} out of range", window=w_idx, position=pos)
            if token == EOS:
                continue
            if not seen_sep:
                if token != SEP:
                    raise GrammarError("window must start with SEP", window=w_idx, position=pos)
                seen_sep = True
                continue
            if token == SEP:
                raise GrammarError("unexpected second SEP", window=w_idx, position=pos)
            if token < TIME_TOKENS:
                if pending_time is not None:
                    raise GrammarError("time token where action expected", window=w_idx, position=pos)
                if token <= prev_time:
                    raise GrammarError(
                        f"time token {token} not greater than previous {prev_time}",
                        window=w_idx,
                        position=pos,
                    )
                pending_time = token
            else:  # action token
                if pending_time is None:
                    raise GrammarError("action token without preceding time", window=w_idx, position=pos)
                for col, state in enumerate(token_to_action(token)):
                    if state is not None:
                        events.append(ChartEvent(tick=base + pending_time, column=col, kind=state))
                prev_time = pending_time
                pending_time = None
        if not seen_sep:
            raise GrammarError("window has no SEP", window=w_idx, position=0)
        if pending_time is not None:
            raise GrammarError("dangling time token at end of window", window=w_idx, position=len(window.tokens))
    return tuple(events)


def decode_times(windows: Iterable[WindowTokens]) -> tuple[int, ...]:
    """Decode a time-only stream (SEP TIME* per window) into absolute ticks."""
    ticks: list[int] = []
    for w_idx, window in enumerate(windows):
        base = window.window_start_beat * TICKS_PER_BEAT
        prev_time = -1
        seen_sep = False
        for pos, token in enumerate(window.tokens):
            if not 0 <= token < VOCAB_SIZE:
                raise GrammarError(f"token id {token} out of range", window=w_idx, position=pos)
            if token == EOS:
                continue
            if not seen_sep:
                if token != SEP:
                    raise GrammarError("window must start with SEP", window=w_idx, position=pos)
                seen_sep = True
                continue
            if token >= TIME_TOKENS:
                raise GrammarError("only time tokens allowed in time-only stream", window=w_idx, position=pos)
            if token <= prev_time:
                raise GrammarError(
                    f"time token {token} not greater than previous {prev_time}",
                    window=w_idx,
                    position=pos,
                )
            ticks.append(base + token)
            prev_time = token
        if not seen_sep:
            raise GrammarError("window has no SEP", window=w_idx, position=0)
    return tuple(ticks)


def context_slice(tokens: Sequence[int], k: int = 7) -> list[int]:
    """Last k tokens of a stream, left-padded with EOS when shorter."""
    tail = list(tokens[-k:]) if k else []
    return [EOS] * (k - len(tail)) + tail


def strip_actions(windows: Iterable[WindowTokens]) -> list[WindowTokens]:
    """Drop action tokens, keeping SEP/time/EOS (time-only training mode)."""
    out = []
    for w in windows:
        kept = tuple(t for t in w.tokens if not ACTION_MIN <= t <= ACTION_MAX)
        out.append(WindowTokens(window_start_beat=w.window_start_beat, tokens=kept))
    return out


def flatten(windows: Iterable[WindowTokens]) -> list[int]:
    out: list[int] = []
    for w in windows:
        out.extend(w.tokens)
    return out


def legal_next_mask(window_tokens: Sequence[int], time_only: bool = False) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens that may follow ``window_tokens``.

    The sequence must start at a window's SEP.  EOS is always legal once
    the window is syntactically complete; a second SEP never is.
    """
    if not window_tokens or window_tokens[0] != SEP:
        raise GrammarError("window context must start with SEP")
    mask = np.zeros(VOCAB_SIZE, dtype=bool)
    last = window_tokens[-1]
    prev_time = -1
    for t in window_tokens[1:]:
        if t < TIME_TOKENS:
            prev_time = t
    if last == EOS:
        mask[EOS] = True  # window already closed; only padding may follow
        return mask
    if not time_only and last < TIME_TOKENS and last != SEP:
        # an action must complete the pair
        mask[ACTION_MIN : ACTION_MAX + 1] = True
        return mask
    # after SEP, after an action, or (time-only) after a time token:
    # any strictly later time, or EOS to close the window.
    if prev_time + 1 < TIME_TOKENS:
        mask[prev_time + 1 : TIME_TOKENS] = True
    mask[EOS] = True
    return mask


def dump_tokens(windows: Iterable[WindowTokens]) -> str:
    """Text dump, one line per window: ``window <start_beat> : <id> <id> ...``"""
    lines = []
    for w in windows:
        ids = " ".join(str(t) for t in w.tokens)
        lines.append(f"window {w.window_start_beat} : {ids}".rstrip())
    return "\n".join(lines) + "\n" if lines else ""


def parse_token_dump(text: str) -> list[WindowTokens]:
    windows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 3 or parts[0] != "window" or parts[2] != ":":
            raise ParseError("expected 'window <start_beat> : <ids...>'", line=lineno)
        try:
            start_beat = int(parts[1])
            tokens = tuple(int(p) for p in parts[3:])
        except ValueError:
            raise ParseError("non-integer token id", line=lineno) from None
        for t in tokens:
            if not 0 <= t < VOCAB_SIZE:
                raise ParseError(f"token id {t} out of range", line=lineno)
        windows.append(WindowTokens(window_start_beat=start_beat, tokens=tokens))
    return windows
