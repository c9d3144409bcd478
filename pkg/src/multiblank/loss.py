"""Multi-blank transducer loss.

Lattice conventions
-------------------
Activations ``z`` have shape ``(T, U + 1, V + len(N))``. Indices ``0..V-1``
are labels, index ``V + j`` is the blank of duration ``N[j]`` (ascending), so
index ``V`` is always the standard blank.

A state ``(t, u)`` means *t frames consumed, u labels emitted*. From ``(t, u)``
the label arc reads frame ``t`` and needs ``t < T``; the blank arc of
duration ``m`` also reads frame ``t`` and needs ``t + m <= T``. Paths start at
``(0, 0)`` and end at ``(T, U)``.

The minimized quantity is ``-log sum_paths exp(weight(path))`` where every
arc weight is ``log_softmax(z) - sigma``.
"""

from dataclasses import dataclass, field

import numpy as np

from .numerics import LOG_ZERO, clamp_log_zero, is_log_zero, log_add, log_softmax


class InfeasibleLatticeError(ValueError):
    """No alignment path connects (0, 0) with (T, U)."""


@dataclass(frozen=True)
class BlankSet:
    durations: tuple = (1,)

    def __post_init__(self):
        durations = tuple(int(m) for m in self.durations)
        if not durations:
            raise ValueError("blank set must not be empty")
        if any(m < 1 for m in durations):
            raise ValueError(f"blank durations must be >= 1, got {durations}")
        if any(b <= a for a, b in zip(durations, durations[1:])):
            raise ValueError(f"blank durations must be strictly increasing, got {durations}")
        if 1 not in durations:
            raise ValueError(f"blank set must contain the standard blank 1, got {durations}")
        object.__setattr__(self, "durations", durations)

    @classmethod
    def parse(cls, text):
        """Build from ``"1,2,4"``; order in the text does not matter."""
        try:
            values = sorted({int(p) for p in str(text).split(",") if p.strip()})
        except ValueError as exc:
            raise ValueError(f"bad blank list {text!r}") from exc
        return cls(tuple(values))

    def __len__(self):
        return len(self.durations)

    def __iter__(self):
        return iter(self.durations)

    @property
    def max_duration(self):
        return self.durations[-1]

    def index_of(self, duration):
        return self.durations.index(duration)

    def __str__(self):
        return ",".join(str(m) for m in self.durations)


@dataclass(frozen=True)
class LossConfig:
    sigma: float = 0.05
    blank_set: BlankSet = field(default_factory=BlankSet)

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class AlphaBetaLattice:
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    lattices: AlphaBetaLattice
    occupancy: np.ndarray


def vocab_size(activations, blank_set):
    V = activations.shape[-1] - len(blank_set)
    if V < 1:
        raise ValueError(
            f"output width {activations.shape[-1]} leaves no labels for {len(blank_set)} blanks"
        )
    return V


def _check_lattice(arcs, labels, blank_set):
    arcs = np.asarray(arcs, dtype=np.float64)
    if arcs.ndim != 3:
        raise ValueError(f"lattice must be 3-d (T, U+1, K), got shape {arcs.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    T, U1, _ = arcs.shape
    if U1 != len(labels) + 1:
        raise ValueError(f"lattice has U+1={U1} rows but {len(labels)} labels were given")
    V = vocab_size(arcs, blank_set)
    if len(labels) and (labels.min() < 0 or labels.max() >= V):
        raise ValueError(f"label ids must lie in [0, {V}), got {labels.tolist()}")
    return arcs, labels, T, len(labels), V


def under_normalize(activations, sigma):
    """Per-(t, u) log_softmax minus ``sigma``; argmax of every slice is kept."""
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return log_softmax(activations, axis=-1) - sigma


def _label_weights(arcs, labels):
    # (T, U): weight of emitting labels[u] from (t, u)
    U = len(labels)
    return arcs[:, np.arange(U), labels]


def forward(arcs, labels, blank_set):
    """Forward log-weights.

    Returns ``(alpha, total)`` with ``alpha`` of shape (T+1, U+1). ``total`` is
    ``alpha[T, U]``; it equals ``LOG_ZERO`` for an infeasible lattice.
    """
    arcs, labels, T, U, V = _check_lattice(arcs, labels, blank_set)
    label_w = _label_weights(arcs, labels)
    alpha = np.full((T + 1, U + 1), LOG_ZERO)
    for t in range(T + 1):
        row = np.full(U + 1, LOG_ZERO)
        if t == 0:
            row[0] = 0.0
        for j, m in enumerate(blank_set):
            if t - m >= 0:
                row = np.logaddexp(row, alpha[t - m] + arcs[t - m, :, V + j])
        if t < T:
            for u in range(1, U + 1):
                row[u] = log_add(row[u], row[u - 1] + label_w[t, u - 1])
        alpha[t] = row
    alpha = clamp_log_zero(alpha)
    return alpha, float(alpha[T, U])


def backward(arcs, labels, blank_set):
    """Backward log-weights; returns ``(beta, total)`` with ``total = beta[0, 0]``."""
    arcs, labels, T, U, V = _check_lattice(arcs, labels, blank_set)
    label_w = _label_weights(arcs, labels)
    beta = np.full((T + 1, U + 1), LOG_ZERO)
    for t in range(T, -1, -1):
        row = np.full(U + 1, LOG_ZERO)
        if t == T:
            row[U] = 0.0
        for j, m in enumerate(blank_set):
            if t + m <= T:
                row = np.logaddexp(row, beta[t + m] + arcs[t, :, V + j])
        if t < T:
            for u in range(U - 1, -1, -1):
                row[u] = log_add(row[u], row[u + 1] + label_w[t, u])
        beta[t] = row
    beta = clamp_log_zero(beta)
    return beta, float(beta[0, 0])


def occupancy(alpha, beta, arcs, total, labels, blank_set):
    """Posterior probability of every arc, laid out like the activations.

    ``gamma[t, u, k]`` is the posterior of leaving ``(t, u)`` through output
    ``k``. Arcs that do not exist in the lattice get exactly 0.
    """
    arcs, labels, T, U, V = _check_lattice(arcs, labels, blank_set)
    if alpha.shape != (T + 1, U + 1) or beta.shape != (T + 1, U + 1):
        raise ValueError(
            f"alpha/beta shapes {alpha.shape}/{beta.shape} do not match lattice (T={T}, U={U})"
        )
    if is_log_zero(total):
        raise InfeasibleLatticeError(f"no path through lattice T={T}, U={U}, N={blank_set}")
    gamma = np.zeros_like(arcs)
    if U:
        lp = alpha[:T, :U] + _label_weights(arcs, labels)[:, :U] + beta[:T, 1:] - total
        gamma[:, np.arange(U), labels] = np.exp(np.minimum(lp, 0.0))
    for j, m in enumerate(blank_set):
        if m > T:
            continue
        n = T - m + 1
        lp = alpha[:n] + arcs[:n, :, V + j] + beta[m:T + 1] - total
        gamma[:n, :, V + j] = np.exp(np.minimum(lp, 0.0))
    return gamma


def loss_and_grad(activations, labels, config):
    """Loss ``-log sum_paths exp(weight)`` and its gradient w.r.t. raw activations."""
    z = np.asarray(activations, dtype=np.float64)
    blank_set = config.blank_set
    arcs = under_normalize(z, config.sigma)
    alpha, total = forward(arcs, labels, blank_set)
    beta, _ = backward(arcs, labels, blank_set)
    if is_log_zero(total):
        T, U1 = z.shape[:2]
        raise InfeasibleLatticeError(
            f"no alignment path for T={T}, U={U1 - 1}, N={{{blank_set}}}"
        )
    gamma = occupancy(alpha, beta, arcs, total, labels, blank_set)
    probs = np.exp(arcs + config.sigma)
    grad = probs * gamma.sum(axis=-1, keepdims=True) - gamma
    return LossResult(
        loss=-total,
        grad=grad,
        lattices=AlphaBetaLattice(alpha=alpha, beta=beta),
        occupancy=gamma,
    )
