"""Synthetic "speech" corpora and their JSON-lines persistence.

Each label is rendered as ``repeat_factor`` consecutive frames holding the
one-hot vector of that label plus Gaussian noise. With no noise a per-frame
argmax recovers the transcript exactly, so the toy task is learnable to zero
error by construction.
"""

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class Utterance:
    frames: np.ndarray  # (T, F)
    labels: list

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class SynthConfig:
    V: int = 8
    F: int = 8
    repeat_factor: int = 6
    # span of each label drawn from repeat_factor +/- repeat_jitter frames
    repeat_jitter: int = 0
    noise_std: float = 0.3
    min_labels: int = 2
    max_labels: int = 6
    count: int = 100
    seed: int = 0
    # Adjacent repeats render as one longer run of identical frames, which a
    # per-frame model cannot split into two tokens.
    allow_repeats: bool = False

    def __post_init__(self):
        if self.V < 1:
            raise ValueError(f"V must be >= 1, got {self.V}")
        if self.F < self.V:
            raise ValueError(f"F={self.F} must be >= V={self.V} to hold one-hot frames")
        if not 1 <= self.min_labels <= self.max_labels:
            raise ValueError(
                f"need 1 <= min_labels <= max_labels, got {self.min_labels}, {self.max_labels}"
            )
        if self.repeat_factor < 1:
            raise ValueError(f"repeat_factor must be >= 1, got {self.repeat_factor}")
        if not 0 <= self.repeat_jitter < self.repeat_factor:
            raise ValueError(
                f"repeat_jitter must be in [0, repeat_factor), got {self.repeat_jitter}"
            )
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")
        if not self.allow_repeats and self.V < 2 and self.max_labels > 1:
            raise ValueError("V=1 cannot produce more than one label without repeats")


def _sample_labels(rng, cfg):
    n = int(rng.integers(cfg.min_labels, cfg.max_labels + 1))
    if cfg.allow_repeats:
        return rng.integers(0, cfg.V, size=n).tolist()
    labels = [int(rng.integers(0, cfg.V))]
    while len(labels) < n:
        # uniform over the V - 1 labels that differ from the previous one
        nxt = int(rng.integers(0, cfg.V - 1))
        labels.append(nxt + (nxt >= labels[-1]))
    return labels


def render_frames(labels, cfg, rng):
    spans = np.full(len(labels), cfg.repeat_factor)
    if cfg.repeat_jitter:
        spans += rng.integers(-cfg.repeat_jitter, cfg.repeat_jitter + 1, size=len(labels))
    T = int(spans.sum())
    frames = np.zeros((T, cfg.F))
    frames[np.arange(T), np.repeat(labels, spans)] = 1.0
    if cfg.noise_std > 0:
        frames += rng.normal(0.0, cfg.noise_std, size=frames.shape)
    return frames


def synth_generate(cfg):
    rng = np.random.default_rng(cfg.seed)
    corpus = []
    for _ in range(cfg.count):
        labels = _sample_labels(rng, cfg)
        corpus.append(Utterance(render_frames(labels, cfg, rng), labels))
    return corpus


def save_dataset(utterances, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt in utterances:
            record = {
                "frames": np.asarray(utt.frames, dtype=np.float64).tolist(),
                "labels": [int(x) for x in utt.labels],
            }
            f.write(json.dumps(record) + "\n")


class DatasetFormatError(ValueError):
    pass


def load_dataset(path):
    """Read a JSON-lines corpus; malformed lines raise with their 1-based number."""
    corpus = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                frames = np.asarray(record["frames"], dtype=np.float64)
                labels = [int(x) for x in record["labels"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from exc
            if frames.ndim != 2 and frames.size:
                raise DatasetFormatError(f"{path}: line {lineno}: frames must be a 2-d array")
            if not np.all(np.isfinite(frames)):
                raise DatasetFormatError(f"{path}: line {lineno}: non-finite frame values")
            corpus.append(Utterance(frames.reshape(len(frames), -1), labels))
    return corpus
