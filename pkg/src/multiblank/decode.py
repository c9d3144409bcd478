"""Greedy decoding for multi-blank transducers.

A *scorer* is any callable ``scorer(t, history) -> activations`` returning the
``V + len(N)`` joint outputs for frame ``t`` given the labels emitted so far.
Emitting a blank of duration ``m`` moves the frame cursor by ``m``; labels keep
it where it is. Decoding stops once the cursor reaches or passes ``T``, so a
big blank near the end may overshoot.
"""

import dataclasses
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

LABEL = "label"
BLANK = "blank"


@dataclass(frozen=True)
class EmissionEvent:
    kind: str
    symbol: int  # label id, or the blank duration the decoder picked
    frame: int
    step: int
    advance: int = 0  # frames the cursor actually moved after this event
    forced: bool = False  # standard blank inserted by the max-symbols guard


@dataclass
class DecodeResult:
    tokens: list
    trace: list
    frames: int
    seconds: float = field(default=0.0, compare=False)

    @property
    def steps(self):
        return len(self.trace)

    @property
    def frames_consumed(self):
        return sum(e.advance for e in self.trace)

    def blank_counts(self):
        return Counter(e.symbol for e in self.trace if e.kind == BLANK)


def _pick(scores, num_outputs, blank_set):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != num_outputs:
        raise ValueError(
            f"scorer returned {scores.shape[0]} activations, expected {num_outputs} "
            f"(labels + {len(blank_set)} blanks)"
        )
    k = int(np.argmax(scores))
    V = num_outputs - len(blank_set)
    if k < V:
        return LABEL, k
    return BLANK, blank_set.durations[k - V]


def _check_args(num_labels, max_symbols_per_frame):
    if max_symbols_per_frame < 1:
        raise ValueError(f"max_symbols_per_frame must be >= 1, got {max_symbols_per_frame}")
    if num_labels < 1:
        raise ValueError(f"need at least one label, got num_labels={num_labels}")


def greedy_decode(scorer, T, blank_set, num_labels, max_symbols_per_frame=10):
    """Exact greedy search; a blank of duration m skips m frames."""
    _check_args(num_labels, max_symbols_per_frame)
    num_outputs = num_labels + len(blank_set)
    start = time.perf_counter()
    tokens, trace = [], []
    t = 0
    symbols_here = 0
    while t < T:
        if symbols_here >= max_symbols_per_frame:
            trace.append(EmissionEvent(BLANK, 1, t, len(trace), advance=1, forced=True))
            t += 1
            symbols_here = 0
            continue
        kind, symbol = _pick(scorer(t, tokens), num_outputs, blank_set)
        if kind == LABEL:
            trace.append(EmissionEvent(LABEL, symbol, t, len(trace)))
            tokens.append(symbol)
            symbols_here += 1
        else:
            trace.append(EmissionEvent(BLANK, symbol, t, len(trace), advance=symbol))
            t += symbol
            symbols_here = 0
    return DecodeResult(tokens, trace, T, seconds=time.perf_counter() - start)


def batched_greedy_decode(scorers, lengths, blank_set, num_labels, max_symbols_per_frame=10):
    """Lockstep greedy search over a batch sharing one frame cursor.

    Each round every active utterance scores at the shared cursor until it
    picks a blank (labels keep it in the round). The cursor then moves by the
    smallest blank duration picked in the round, so an utterance that asked
    for a longer skip scores again at the new cursor. Utterances whose length
    is reached drop out and no longer constrain the minimum.
    """
    if len(scorers) == 0:
        raise ValueError("batched decoding needs at least one utterance")
    if len(scorers) != len(lengths):
        raise ValueError(f"{len(scorers)} scorers but {len(lengths)} lengths")
    _check_args(num_labels, max_symbols_per_frame)
    num_outputs = num_labels + len(blank_set)
    start = time.perf_counter()
    B = len(scorers)
    tokens = [[] for _ in range(B)]
    traces = [[] for _ in range(B)]
    cursor = 0
    while True:
        active = [b for b in range(B) if cursor < lengths[b]]
        if not active:
            break
        picked = {}
        symbols_here = dict.fromkeys(active, 0)
        pending = list(active)
        while pending:
            still = []
            for b in pending:
                trace = traces[b]
                if symbols_here[b] >= max_symbols_per_frame:
                    trace.append(EmissionEvent(BLANK, 1, cursor, len(trace), forced=True))
                    picked[b] = 1
                    continue
                kind, symbol = _pick(scorers[b](cursor, tokens[b]), num_outputs, blank_set)
                if kind == LABEL:
                    trace.append(EmissionEvent(LABEL, symbol, cursor, len(trace)))
                    tokens[b].append(symbol)
                    symbols_here[b] += 1
                    still.append(b)
                else:
                    trace.append(EmissionEvent(BLANK, symbol, cursor, len(trace)))
                    picked[b] = symbol
            pending = still
        advance = min(picked.values())
        for b in active:
            traces[b][-1] = dataclasses.replace(traces[b][-1], advance=advance)
        cursor += advance
    elapsed = time.perf_counter() - start
    # one shared clock for the batch; split evenly so per-utterance sums add up
    return [
        DecodeResult(tokens[b], traces[b], lengths[b], seconds=elapsed / B) for b in range(B)
    ]


@dataclass
class EmissionHistogram:
    counts: dict

    @property
    def total(self):
        return sum(self.counts.values())

    def rows(self):
        return list(self.counts.items())


def blank_kind(duration):
    return f"blank_{duration}"


def emission_histogram(results, blank_set=None):
    """Count emissions per kind: all labels in one bucket, one bucket per duration.

    Passing ``blank_set`` pre-populates zero buckets for durations that never
    fired, which keeps reports for different models aligned.
    """
    counts = {LABEL: 0}
    for m in blank_set or ():
        counts[blank_kind(m)] = 0
    blanks = Counter()
    for r in results:
        for e in r.trace:
            if e.kind == LABEL:
                counts[LABEL] += 1
            else:
                blanks[e.symbol] += 1
    for m in sorted(blanks):
        counts[blank_kind(m)] = counts.get(blank_kind(m), 0) + blanks[m]
    ordered = {LABEL: counts.pop(LABEL)}
    for key in sorted(counts, key=lambda k: int(k.split("_")[1])):
        ordered[key] = counts[key]
    return EmissionHistogram(ordered)


@dataclass
class SpeedupReport:
    utterances: int
    baseline_steps: int
    candidate_steps: int
    baseline_mean_steps: float
    candidate_mean_steps: float
    step_reduction_pct: float
    step_speedup_pct: float
    baseline_seconds: float
    candidate_seconds: float
    wallclock_speedup_pct: float

    def as_dict(self):
        return dataclasses.asdict(self)


def _relative_speedup(baseline, candidate):
    if candidate <= 0:
        return 0.0 if baseline <= 0 else float("inf")
    return (baseline / candidate - 1.0) * 100.0


def speedup_report(baseline, candidate):
    """Compare two decodes of the same utterances, Table-2 style.

    Decoding steps stand in for inference time; wall-clock is carried along.
    """
    if len(baseline) != len(candidate):
        raise ValueError(
            f"baseline has {len(baseline)} utterances, candidate has {len(candidate)}"
        )
    n = len(baseline)
    b_steps = sum(r.steps for r in baseline)
    c_steps = sum(r.steps for r in candidate)
    b_sec = sum(r.seconds for r in baseline)
    c_sec = sum(r.seconds for r in candidate)
    return SpeedupReport(
        utterances=n,
        baseline_steps=b_steps,
        candidate_steps=c_steps,
        baseline_mean_steps=b_steps / n if n else 0.0,
        candidate_mean_steps=c_steps / n if n else 0.0,
        step_reduction_pct=(1.0 - c_steps / b_steps) * 100.0 if b_steps else 0.0,
        step_speedup_pct=_relative_speedup(b_steps, c_steps),
        baseline_seconds=b_sec,
        candidate_seconds=c_sec,
        wallclock_speedup_pct=_relative_speedup(b_sec, c_sec),
    )


def edit_distance(ref, hyp):
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def token_error_rate(references, hypotheses):
    """Total edit distance over total reference tokens, in percent."""
    if len(references) != len(hypotheses):
        raise ValueError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    errors = sum(edit_distance(list(r), list(h)) for r, h in zip(references, hypotheses))
    n_ref = sum(len(r) for r in references)
    if n_ref == 0:
        return 0.0 if errors == 0 else 100.0
    return 100.0 * errors / n_ref
