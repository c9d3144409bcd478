"""A tiny trainable transducer with hand-written backpropagation.

    encoder   h = tanh(x W1 + b1), e = h W2 + b2                per frame
              x stacks frames t-c..t+c (zero padded), c = dims.context
    decoder   d = [emb(y[u-2]), emb(y[u-1])]                     stateless
    joint     s = tanh(e Wj_enc + d Wj_dec + bj), z = s Wo + bo

The begin-of-sequence embedding (row V) pads the context for u < 2.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .loss import BlankSet, InfeasibleLatticeError, LossConfig, loss_and_grad

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "multiblank-checkpoint/1"


@dataclass(frozen=True)
class ModelDims:
    V: int = 8
    F: int = 8
    H: int = 32
    E: int = 32
    D: int = 16
    J: int = 32
    context: int = 3  # frames stacked on each side of t; 0 = strictly per-frame

    @property
    def encoder_inputs(self):
        return self.F * (2 * self.context + 1)

    def __post_init__(self):
        if self.context < 0:
            raise ValueError(f"context must be >= 0, got {self.context}")
        for f in fields(self):
            if f.name != "context" and getattr(self, f.name) < 1:
                raise ValueError(f"dimension {f.name} must be positive, got {getattr(self, f.name)}")


@dataclass
class ToyModelParams:
    dims: ModelDims
    blank_set: BlankSet
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    embed: np.ndarray
    joint_enc: np.ndarray
    joint_dec: np.ndarray
    joint_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    WEIGHTS = (
        "enc_w1", "enc_b1", "enc_w2", "enc_b2", "embed",
        "joint_enc", "joint_dec", "joint_b", "out_w", "out_b",
    )

    @property
    def num_outputs(self):
        return self.dims.V + len(self.blank_set)

    def weights(self):
        return {name: getattr(self, name) for name in self.WEIGHTS}

    def copy(self):
        return ToyModelParams(self.dims, self.blank_set,
                              **{k: v.copy() for k, v in self.weights().items()})

    def flat(self):
        return np.concatenate([w.ravel() for w in self.weights().values()])

    def with_flat(self, vec):
        out, i = {}, 0
        for name, w in self.weights().items():
            out[name] = np.asarray(vec[i:i + w.size], dtype=np.float64).reshape(w.shape).copy()
            i += w.size
        return ToyModelParams(self.dims, self.blank_set, **out)


def _shapes(dims, K):
    return {
        "enc_w1": ((dims.encoder_inputs, dims.H), dims.encoder_inputs),
        "enc_b1": ((dims.H,), dims.encoder_inputs),
        "enc_w2": ((dims.H, dims.E), dims.H),
        "enc_b2": ((dims.E,), dims.H),
        "embed": ((dims.V + 1, dims.D), dims.V + 1),
        "joint_enc": ((dims.E, dims.J), dims.E + 2 * dims.D),
        "joint_dec": ((2 * dims.D, dims.J), dims.E + 2 * dims.D),
        "joint_b": ((dims.J,), dims.E + 2 * dims.D),
        "out_w": ((dims.J, K), dims.J),
        "out_b": ((K,), dims.J),
    }


def init_params(seed, dims, blank_set):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    K = dims.V + len(blank_set)
    weights = {}
    for name, (shape, fan_in) in _shapes(dims, K).items():
        s = 1.0 / np.sqrt(fan_in)
        weights[name] = rng.uniform(-s, s, size=shape)
    return ToyModelParams(dims, blank_set, **weights)


def _check_inputs(params, frames, labels):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.dims.F:
        raise ValueError(f"frames must have shape (T, {params.dims.F}), got {frames.shape}")
    labels = [int(x) for x in labels]
    if any(y < 0 or y >= params.dims.V for y in labels):
        raise ValueError(f"label ids must lie in [0, {params.dims.V}), got {labels}")
    return frames, labels


def splice(frames, context):
    """(T, F) -> (T, F * (2c + 1)): each row holds frames t-c..t+c, zero padded."""
    if context == 0:
        return frames
    T, F = frames.shape
    padded = np.zeros((T + 2 * context, F))
    padded[context:context + T] = frames
    return np.concatenate([padded[i:i + T] for i in range(2 * context + 1)], axis=1)


def encode(params, frames):
    x = splice(frames, params.dims.context)
    h = np.tanh(x @ params.enc_w1 + params.enc_b1)
    return x, h, h @ params.enc_w2 + params.enc_b2


def context_ids(labels, V):
    """Two-label history per lattice row u = 0..U, BOS-padded."""
    padded = [V, V] + list(labels)
    return np.array([[padded[u], padded[u + 1]] for u in range(len(labels) + 1)], dtype=np.int64)


def _context(params, ctx):
    # (U+1, 2D): concatenated embeddings of the two context labels
    return params.embed[ctx].reshape(len(ctx), -1)


def _forward(params, frames, labels):
    x, h, e = encode(params, frames)
    ctx = context_ids(labels, params.dims.V)
    d = _context(params, ctx)
    pre = (e @ params.joint_enc)[:, None, :] + (d @ params.joint_dec)[None, :, :] + params.joint_b
    s = np.tanh(pre)
    z = s @ params.out_w + params.out_b
    return z, (x, h, e, ctx, d, s)


def forward_activations(params, frames, labels):
    """Joint outputs z of shape (T, U+1, V + len(N))."""
    frames, labels = _check_inputs(params, frames, labels)
    return _forward(params, frames, labels)[0]


def backprop(params, cache, dz):
    x, h, e, ctx, d, s = cache
    g = {}
    g["out_w"] = np.einsum("tuj,tuk->jk", s, dz)
    g["out_b"] = dz.sum(axis=(0, 1))
    dpre = (dz @ params.out_w.T) * (1.0 - s * s)
    g["joint_b"] = dpre.sum(axis=(0, 1))
    dpre_t = dpre.sum(axis=1)  # (T, J)
    dpre_u = dpre.sum(axis=0)  # (U+1, J)
    g["joint_enc"] = e.T @ dpre_t
    g["joint_dec"] = d.T @ dpre_u
    dd = (dpre_u @ params.joint_dec.T).reshape(len(ctx), 2, -1)
    g["embed"] = np.zeros_like(params.embed)
    np.add.at(g["embed"], ctx.ravel(), dd.reshape(-1, dd.shape[-1]))
    de = dpre_t @ params.joint_enc.T
    g["enc_w2"] = h.T @ de
    g["enc_b2"] = de.sum(axis=0)
    dh = (de @ params.enc_w2.T) * (1.0 - h * h)
    g["enc_w1"] = x.T @ dh
    g["enc_b1"] = dh.sum(axis=0)
    return g


def utterance_loss_and_grads(params, frames, labels, loss_config):
    """Transducer loss of one utterance and its gradient for every weight."""
    frames, labels = _check_inputs(params, frames, labels)
    z, cache = _forward(params, frames, labels)
    result = loss_and_grad(z, labels, loss_config)
    return result.loss, backprop(params, cache, result.grad)


def make_scorer(params, frames):
    """Scorer for the greedy decoders; encoder outputs are computed once."""
    frames = np.asarray(frames, dtype=np.float64)
    _, _, e = encode(params, frames)
    enc_proj = e @ params.joint_enc + params.joint_b
    V = params.dims.V
    dec_cache = {}

    def scorer(t, history):
        key = (history[-2] if len(history) > 1 else V, history[-1] if history else V)
        dec = dec_cache.get(key)
        if dec is None:
            dec = params.embed[list(key)].ravel() @ params.joint_dec
            dec_cache[key] = dec
        return np.tanh(enc_proj[t] + dec) @ params.out_w + params.out_b

    return scorer


@dataclass
class TrainConfig:
    sigma: float = 0.05
    blank_set: BlankSet = field(default_factory=BlankSet)
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 8
    steps: int = 1000
    seed: int = 0
    dims: ModelDims = field(default_factory=ModelDims)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")

    @property
    def loss_config(self):
        return LossConfig(self.sigma, self.blank_set)

    def as_dict(self):
        out = asdict(self)
        out["blank_set"] = list(self.blank_set.durations)
        return out


class MomentumSGD:
    """Heavy-ball SGD: v <- mu v + g; w <- w - lr v."""

    def __init__(self, learning_rate, momentum=0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        new = params.copy()
        for name, g in grads.items():
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            setattr(new, name, getattr(new, name) - self.learning_rate * v)
        return new


def train_step(params, batch, config, optimizer=None):
    """One momentum-SGD update on the batch mean loss.

    Returns ``(params, mean_loss, skipped)``. Utterances without any alignment
    path are skipped and counted rather than aborting the run.
    """
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    optimizer = optimizer or MomentumSGD(config.learning_rate, config.momentum)
    loss_config = config.loss_config
    total = {name: np.zeros_like(w) for name, w in params.weights().items()}
    losses, skipped = [], 0
    for utt in batch:
        try:
            loss, grads = utterance_loss_and_grads(params, utt.frames, utt.labels, loss_config)
        except InfeasibleLatticeError:
            skipped += 1
            continue
        losses.append(loss)
        for name, g in grads.items():
            total[name] += g
    if not losses:
        return params.copy(), float("nan"), skipped
    for g in total.values():
        g /= len(losses)
    return optimizer.step(params, total), float(np.mean(losses)), skipped


def train(corpus, config, log_every=0):
    """Train from scratch; returns ``(params, per-step mean losses)``."""
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    params = init_params(config.seed, config.dims, config.blank_set)
    optimizer = MomentumSGD(config.learning_rate, config.momentum)
    rng = np.random.default_rng(config.seed + 1)
    order = rng.permutation(len(corpus))
    pos = 0
    history, skipped = [], 0
    for step in range(config.steps):
        if pos + config.batch_size > len(order):
            order = rng.permutation(len(corpus))
            pos = 0
        batch = [corpus[i] for i in order[pos:pos + config.batch_size]]
        pos += config.batch_size
        params, loss, n_skip = train_step(params, batch, config, optimizer)
        history.append(loss)
        skipped += n_skip
        if log_every and (step + 1) % log_every == 0:
            logger.info("step %d loss %.4f", step + 1, loss)
    if skipped:
        logger.warning("skipped %d infeasible utterances during training", skipped)
    return params, history


def save_checkpoint(params, path, sigma=None, extra=None):
    record = {
        "format": CHECKPOINT_FORMAT,
        "dims": asdict(params.dims),
        "blank_set": list(params.blank_set.durations),
        "sigma": sigma,
        "weights": {
            name: {"shape": list(w.shape), "values": w.ravel().tolist()}
            for name, w in params.weights().items()
        },
    }
    if extra:
        record["extra"] = extra
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(record, f)
        f.write("\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    """Returns ``(params, sigma)``."""
    with open(path, encoding="utf-8") as f:
        record = json.load(f)
    if record.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {record.get('format')!r}")
    try:
        dims = ModelDims(**record["dims"])
        blank_set = BlankSet(tuple(record["blank_set"]))
        expected = _shapes(dims, dims.V + len(blank_set))
        weights = {}
        for name, (shape, _) in expected.items():
            entry = record["weights"][name]
            w = np.asarray(entry["values"], dtype=np.float64)
            if tuple(entry["shape"]) != shape or w.size != int(np.prod(shape)):
                raise CheckpointError(f"{path}: weight {name} has shape {entry['shape']}, expected {list(shape)}")
            weights[name] = w.reshape(shape)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    return ToyModelParams(dims, blank_set, **weights), record.get("sigma")
