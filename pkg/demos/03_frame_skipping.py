"""Greedy decoding with big blanks on a hand-written scorer.

The scorer emits label 1 at frame 0, then prefers the four-frame blank,
except near the end where only the one-frame blank is sensible. A standard
decoder spends one step per frame. The multi-blank decoder jumps.
"""

import numpy as np

from multiblank.decode import batched_greedy_decode, emission_histogram, greedy_decode
from multiblank.loss import BlankSet

V, T = 3, 11


def scorer_for(blanks, T=T):
    K = V + len(blanks)

    def score(t, context):
        s = np.zeros(K)
        if t == 0 and not context:
            s[1] = 5.0  # label 1
        elif t + 4 <= T and 4 in blanks.durations:
            s[V + blanks.index_of(4)] = 5.0
        else:
            s[V] = 5.0  # one-frame blank
        return s

    return score


for durations in ((1,), (1, 2, 4)):
    blanks = BlankSet(durations)
    res = greedy_decode(scorer_for(blanks), T, blanks, V)
    print(f"blank set {blanks}: tokens {res.tokens}, steps {res.steps}")
    for ev in res.trace:
        what = f"label {ev.symbol}" if ev.kind == "label" else f"blank {ev.symbol}"
        print(f"  step {ev.step:>2} frame {ev.frame:>2}  {what}")
    print("  histogram", emission_histogram([res], blanks).counts)

# In a batch, the shared cursor only moves by the smallest blank any
# utterance picked. The short utterance wants one-frame blanks near its end,
# which holds the long one back for those rounds.
blanks = BlankSet((1, 2, 4))
batch = batched_greedy_decode([scorer_for(blanks, T), scorer_for(blanks, 6)], [T, 6], blanks, V)
for res in batch:
    print(f"batched T={res.frames}: tokens {res.tokens}, steps {res.steps}")
    for ev in res.trace:
        if ev.kind == "blank":
            print(f"  frame {ev.frame:>2}  picked blank {ev.symbol}, cursor moved {ev.advance}")
