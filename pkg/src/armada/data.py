"""Student-side datasets and the synthetic task generator."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError


@dataclass(frozen=True)
class ExampleBatch:
    """Student inputs with labels.

    Exactly one of ``features`` (vector mode, ``n x d_in``) or ``tokens``
    (token mode, one id array per example) is set.  ``labels`` are what the
    models train against; ``latent`` holds the clean class of each example,
    which can differ from ``labels`` on a noisy training split.
    """

    labels: np.ndarray
    features: np.ndarray | None = None
    tokens: tuple[np.ndarray, ...] | None = None
    latent: np.ndarray | None = None
    vocab_size: int | None = None

    def __post_init__(self):
        if (self.features is None) == (self.tokens is None):
            raise DataError("ExampleBatch needs exactly one of features or tokens")
        n = len(self)
        if len(self.labels) != n:
            raise DataError(f"{len(self.labels)} labels for {n} examples")
        if self.latent is not None and len(self.latent) != n:
            raise DataError(f"{len(self.latent)} latent classes for {n} examples")
        if self.tokens is not None and self.vocab_size is None:
            raise DataError("token mode needs vocab_size")

    def __len__(self) -> int:
        if self.features is not None:
            return self.features.shape[0]
        return len(self.tokens)

    @property
    def mode(self) -> str:
        return "vector" if self.features is not None else "tokens"

    @property
    def input_dim(self) -> int:
        return self.features.shape[1] if self.features is not None else self.vocab_size

    @property
    def classes(self) -> np.ndarray:
        """Clean class per example (falls back to ``labels``)."""
        return self.labels if self.latent is None else self.latent

    def subset(self, idx: Sequence[int] | np.ndarray) -> ExampleBatch:
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            labels=self.labels[idx],
            features=None if self.features is None else self.features[idx],
            tokens=None if self.tokens is None else tuple(self.tokens[i] for i in idx),
            latent=None if self.latent is None else self.latent[idx],
        )

    def bag_of_words(self) -> np.ndarray:
        """Normalized token histograms, ``n x vocab`` (token mode only)."""
        n, v = len(self), self.vocab_size
        out = np.zeros((n, v))
        for i, seq in enumerate(self.tokens):
            if len(seq) == 0:
                raise DataError(f"example {i} has an empty token sequence")
            if seq.min() < 0 or seq.max() >= v:
                bad = int(seq[(seq < 0) | (seq >= v)][0])
                raise DataError(f"example {i}: token id {bad} outside vocabulary of {v}")
            np.add.at(out[i], seq, 1.0)
            out[i] /= len(seq)
        return out

    def dense_inputs(self) -> np.ndarray:
        """Feature matrix in vector mode, bag-of-words in token mode."""
        return self.features if self.features is not None else self.bag_of_words()


@dataclass
class TaskConfig:
    """Synthetic classification/regression task.

    Features are ``separation * center[class] + N(0, feature_noise^2)`` with
    unit-norm class centers.  Training labels are flipped to a different
    class with probability ``label_noise``; test labels stay clean.
    """

    n_train: int = 200
    n_test: int = 2000
    mode: str = "vector"
    input_dim: int = 64
    vocab_size: int = 64
    seq_len: int = 12
    classes: int = 2
    separation: float = 1.5
    feature_noise: float = 1.0
    label_noise: float = 0.2
    task_kind: str = "classification"
    seed: int = 0

    def validate(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ParameterError("n_train and n_test must be positive")
        if self.mode not in ("vector", "tokens"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.task_kind not in ("classification", "regression"):
            raise ParameterError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind == "classification" and self.classes < 2:
            raise ParameterError("classification needs at least 2 classes")
        if not 0.0 <= self.label_noise < 1.0:
            raise ParameterError("label_noise must lie in [0, 1)")


def make_task(cfg: TaskConfig) -> tuple[ExampleBatch, ExampleBatch]:
    """Generate ``(train, test)`` splits, deterministic in ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0xDA7A])
    n = cfg.n_train + cfg.n_test
    if cfg.task_kind == "regression":
        return _make_regression(cfg, rng, n)

    latent = rng.integers(0, cfg.classes, size=n)
    if cfg.mode == "vector":
        centers = rng.normal(size=(cfg.classes, cfg.input_dim))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        x = cfg.separation * centers[latent] + cfg.feature_noise * rng.normal(size=(n, cfg.input_dim))
        inputs = {"features": x}
    else:
        # each class prefers its own slice of the vocabulary
        prefs = rng.dirichlet(np.full(cfg.vocab_size, 0.5), size=cfg.classes)
        mix = 1.0 / (1.0 + cfg.feature_noise)
        probs = mix * prefs + (1.0 - mix) / cfg.vocab_size
        seqs = tuple(rng.choice(cfg.vocab_size, size=cfg.seq_len, p=probs[z]) for z in latent)
        inputs = {"tokens": seqs, "vocab_size": cfg.vocab_size}

    observed = latent.copy()
    flip = rng.random(n) < cfg.label_noise
    shift = rng.integers(1, cfg.classes, size=n)
    observed[flip] = (latent[flip] + shift[flip]) % cfg.classes
    observed[cfg.n_train:] = latent[cfg.n_train:]

    full = ExampleBatch(labels=observed, latent=latent, **inputs)
    return full.subset(np.arange(cfg.n_train)), full.subset(np.arange(cfg.n_train, n))


def _make_regression(cfg: TaskConfig, rng: np.random.Generator, n: int):
    if cfg.mode != "vector":
        raise ParameterError("regression tasks are vector mode only")
    w = rng.normal(size=cfg.input_dim) / np.sqrt(cfg.input_dim)
    clean = rng.normal(size=(n, cfg.input_dim))
    target = cfg.separation * np.tanh(clean @ w)
    x = clean + cfg.feature_noise * rng.normal(size=clean.shape)
    y = target + cfg.label_noise * rng.normal(size=n)
    y[cfg.n_train:] = target[cfg.n_train:]
    full = ExampleBatch(labels=y, features=x, latent=target)
    return full.subset(np.arange(cfg.n_train)), full.subset(np.arange(cfg.n_train, n))
