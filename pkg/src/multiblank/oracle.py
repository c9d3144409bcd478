"""Deliberately naive reference computations for the transducer loss.

Nothing here reuses the dynamic programs in :mod:`multiblank.loss`. Arc
weights are recomputed slice by slice with plain ``math``, every alignment
path is listed explicitly, and gradients come from central differences.
Use it on tiny lattices only.
"""

import math
from dataclasses import dataclass

import numpy as np

MAX_T = 12
MAX_U = 6
MAX_BLANKS = 4

LABEL = "label"
BLANK = "blank"


class OracleLimitError(ValueError):
    pass


@dataclass(frozen=True)
class Emission:
    kind: str  # LABEL or BLANK
    frame: int  # frame index the emission reads
    position: int  # labels emitted before this one
    symbol: int  # label id (None if labels were not given) or blank duration


@dataclass(frozen=True)
class Path:
    emissions: tuple

    def __len__(self):
        return len(self.emissions)

    @property
    def durations(self):
        return [e.symbol for e in self.emissions if e.kind == BLANK]

    def end_state(self):
        t = u = 0
        for e in self.emissions:
            if e.kind == LABEL:
                u += 1
            else:
                t += e.symbol
        return t, u


def _durations(blank_set):
    return tuple(getattr(blank_set, "durations", blank_set))


def _check_limits(T, U, durations):
    if T > MAX_T:
        raise OracleLimitError(f"T={T} exceeds oracle limit T<={MAX_T}")
    if U > MAX_U:
        raise OracleLimitError(f"U={U} exceeds oracle limit U<={MAX_U}")
    if len(durations) > MAX_BLANKS:
        raise OracleLimitError(f"|N|={len(durations)} exceeds oracle limit |N|<={MAX_BLANKS}")


def enumerate_paths(T, U, blank_set, labels=None):
    """Every alignment path from (0, 0) to (T, U), depth first.

    At each state the label move is tried before blanks, blanks in ascending
    duration, which gives lexicographic order over emission sequences.
    """
    durations = _durations(blank_set)
    _check_limits(T, U, durations)
    if labels is not None and len(labels) != U:
        raise ValueError(f"{len(labels)} labels given for U={U}")
    paths = []

    def walk(t, u, prefix):
        if t == T and u == U:
            paths.append(Path(tuple(prefix)))
            return
        if t < T and u < U:
            symbol = None if labels is None else int(labels[u])
            prefix.append(Emission(LABEL, t, u, symbol))
            walk(t, u + 1, prefix)
            prefix.pop()
        for m in durations:
            if t + m <= T:
                prefix.append(Emission(BLANK, t, u, m))
                walk(t + m, u, prefix)
                prefix.pop()

    walk(0, 0, [])
    return paths


def arc_weights(activations, sigma):
    """Scalar re-implementation of ``log_softmax(z) - sigma`` per (t, u) slice."""
    z = np.asarray(activations, dtype=np.float64)
    out = np.empty_like(z)
    T, U1, K = z.shape
    for t in range(T):
        for u in range(U1):
            row = [float(v) for v in z[t, u]]
            top = max(row)
            norm = top + math.log(sum(math.exp(v - top) for v in row))
            for k in range(K):
                out[t, u, k] = row[k] - norm - sigma
    return out


def path_weight(path, arcs, blank_set, labels=None):
    """Sum of the (already under-normalized) arc weights along ``path``."""
    durations = _durations(blank_set)
    arcs = np.asarray(arcs)
    T, U1, K = arcs.shape
    V = K - len(durations)
    if path.end_state() != (T, U1 - 1):
        raise ValueError(f"path ends at {path.end_state()}, lattice terminal is {(T, U1 - 1)}")
    total = 0.0
    for e in path.emissions:
        if e.kind == LABEL:
            symbol = e.symbol
            if symbol is None:
                if labels is None:
                    raise ValueError("path carries no label ids; pass labels")
                symbol = int(labels[e.position])
            total += arcs[e.frame, e.position, symbol]
        else:
            if e.symbol not in durations:
                raise ValueError(f"blank duration {e.symbol} not in N={durations}")
            total += arcs[e.frame, e.position, V + durations.index(e.symbol)]
    return float(total)


def _log_sum(values):
    top = max(values)
    return top + math.log(sum(math.exp(v - top) for v in values))


def path_log_weights(activations, labels, sigma, blank_set):
    z = np.asarray(activations, dtype=np.float64)
    T, U1, _ = z.shape
    arcs = arc_weights(z, sigma)
    paths = enumerate_paths(T, U1 - 1, blank_set, labels=list(labels))
    return paths, [path_weight(p, arcs, blank_set) for p in paths]


def brute_force_loss(activations, labels, config):
    """``-log sum_paths exp(weight(path))`` by explicit enumeration."""
    _, weights = path_log_weights(activations, labels, config.sigma, config.blank_set)
    if not weights:
        T, U1 = np.shape(activations)[:2]
        raise ValueError(f"no alignment path for T={T}, U={U1 - 1}, N={config.blank_set}")
    return -_log_sum(weights)


def path_length_range(T, U, blank_set):
    """Shortest and longest number of emissions over all valid paths."""
    lengths = [len(p) for p in enumerate_paths(T, U, blank_set)]
    if not lengths:
        raise ValueError(f"no alignment path for T={T}, U={U}")
    return min(lengths), max(lengths)


def count_blank_compositions(T, blank_set):
    """Number of ways to write T as an ordered sum of allowed durations."""
    durations = _durations(blank_set)
    counts = [1] + [0] * T
    for n in range(1, T + 1):
        counts[n] = sum(counts[n - m] for m in durations if m <= n)
    return counts[T]


def standard_transducer_loss(activations, labels, sigma=0.0):
    """Single-blank recursion in probability space, blank at index V = K - 1.

    alpha(t, u) = alpha(t, u-1) y(t, u-1) + alpha(t-1, u) blank(t-1, u)
    """
    z = np.asarray(activations, dtype=np.float64)
    T, U1, K = z.shape
    U = U1 - 1
    probs = np.exp(arc_weights(z, sigma))
    blank = K - 1
    alpha = [[0.0] * (U + 1) for _ in range(T + 1)]
    alpha[0][0] = 1.0
    for t in range(T + 1):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            a = 0.0
            if u > 0 and t < T:
                a += alpha[t][u - 1] * probs[t, u - 1, labels[u - 1]]
            if t > 0:
                a += alpha[t - 1][u] * probs[t - 1, u, blank]
            alpha[t][u] = a
    return -math.log(alpha[T][U])


def finite_diff_grad(activations, labels, config, h=1e-5, loss_fn=None):
    """Central differences of ``loss_fn`` (brute force by default) per coordinate."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    loss_fn = loss_fn or brute_force_loss
    z = np.array(activations, dtype=np.float64)
    grad = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        orig = z[idx]
        z[idx] = orig + h
        up = loss_fn(z, labels, config)
        z[idx] = orig - h
        down = loss_fn(z, labels, config)
        z[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad
