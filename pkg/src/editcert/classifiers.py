#!/usr/bin/env python3
"""
Base Classifiers

The base-classifier boundary for smoothing and certification:

- BaseClassifier: interface every base model implements (``query``, optional
  ``score``, declared ``max_concurrency``)
- HistogramModel: logistic model over a normalised token histogram plus a
  log-length feature, trained with noise injection
- train_histogram / calibrate_threshold: seeded training and false-positive
  rate calibration of the decision threshold
- save_model / load_model: versioned plain-text model records

External process and HTTP classifiers live in ``endpoints``.

Author: EditCert Project
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .config import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_CALIBRATION_SAMPLES,
    DEFAULT_EPOCHS,
    DEFAULT_ETA,
    DEFAULT_L2,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MIN_PRESERVED,
    DEFAULT_TARGET_FPR,
    DEFAULT_TRAIN_P_DEL,
    LOG_LENGTH_SCALE,
    MODEL_HEADER,
    STREAM_CALIBRATE,
    STREAM_TRAIN,
    STREAM_TRAIN_ORDER,
    ConfigError,
)
from .seqcore import Alphabet, TokenSeq
from .smoothing import DeletionMechanism, Mechanism, SeedSpec

logger = logging.getLogger(__name__)

LabeledSeq = Tuple[TokenSeq, int]


class BaseClassifier(ABC):
    """
    Deterministic classifier queried on perturbed inputs.

    ``max_concurrency`` is the number of queries the implementation tolerates
    in flight at once; the certification engine never exceeds it.
    """
    num_classes: int = 2
    max_concurrency: int = 1

    @abstractmethod
    def query(self, x: TokenSeq) -> int:
        """Class index predicted for ``x``."""

    def score(self, x: TokenSeq) -> Sequence[float]:
        """Per-class real scores (optional)."""
        raise NotImplementedError(f"{type(self).__name__} does not expose scores")


class ConstantClassifier(BaseClassifier):
    """Always predicts the same class."""

    def __init__(self, label: int, num_classes: int = 2):
        if not 0 <= label < num_classes:
            raise ValueError(f"label {label} outside [0, {num_classes})")
        self.label = label
        self.num_classes = num_classes
        self.max_concurrency = 64

    def query(self, x: TokenSeq) -> int:
        return self.label


class CallableClassifier(BaseClassifier):
    """Wraps a plain function ``TokenSeq -> int``."""

    def __init__(self, fn: Callable[[TokenSeq], int], num_classes: int = 2,
                 max_concurrency: int = 1):
        self.fn = fn
        self.num_classes = num_classes
        self.max_concurrency = max_concurrency

    def query(self, x: TokenSeq) -> int:
        return int(self.fn(x))


def _histogram_features(tokens: Sequence[int], alphabet_size: int) -> np.ndarray:
    """[normalised histogram (A), log-length, 1]; out-of-alphabet tokens ignored."""
    arr = np.asarray(tokens, dtype=np.int64)
    arr = arr[arr < alphabet_size]
    counts = np.bincount(arr, minlength=alphabet_size).astype(float)
    total = arr.size
    feats = np.empty(alphabet_size + 2)
    feats[:alphabet_size] = counts / total if total else 0.0
    feats[alphabet_size] = math.log1p(total) / LOG_LENGTH_SCALE
    feats[alphabet_size + 1] = 1.0
    return feats


@dataclass(eq=False)
class HistogramModel(BaseClassifier):
    """Binary logistic model over token frequencies; predicts 1 iff score >= threshold."""
    alphabet: Alphabet
    weights: np.ndarray = None
    w_len: float = 0.0
    bias: float = 0.0
    threshold: float = 0.0
    num_classes: int = 2
    max_concurrency: int = 64

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(self.alphabet.size)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.alphabet.size,):
            raise ValueError(
                f"Expected {self.alphabet.size} token weights, got {self.weights.shape}"
            )

    @property
    def parameters(self) -> np.ndarray:
        """Token weights, length weight and bias as one vector of size A + 2."""
        return np.concatenate([self.weights, [self.w_len, self.bias]])

    def set_parameters(self, theta: np.ndarray) -> None:
        a = self.alphabet.size
        self.weights = np.array(theta[:a], dtype=float)
        self.w_len = float(theta[a])
        self.bias = float(theta[a + 1])

    def decision_score(self, x: TokenSeq) -> float:
        return float(_histogram_features(x.tokens, self.alphabet.size) @ self.parameters)

    def decision_scores(self, seqs: Sequence[TokenSeq]) -> np.ndarray:
        if not seqs:
            return np.zeros(0)
        feats = np.stack([_histogram_features(s.tokens, self.alphabet.size) for s in seqs])
        return feats @ self.parameters

    def score(self, x: TokenSeq) -> Tuple[float, float]:
        p1 = float(expit(self.decision_score(x)))
        return (1.0 - p1, p1)

    def query(self, x: TokenSeq) -> int:
        return 1 if self.decision_score(x) >= self.threshold else 0


@dataclass
class TrainConfig:
    """Noise-injected training settings."""
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    l2: float = DEFAULT_L2
    mechanism: Optional[Mechanism] = field(
        default_factory=lambda: DeletionMechanism(DEFAULT_TRAIN_P_DEL)
    )
    min_preserved: int = DEFAULT_MIN_PRESERVED

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")
        if self.min_preserved < 0:
            raise ConfigError("min_preserved must be non-negative")


def _training_draw(x: TokenSeq, cfg: TrainConfig, seed: SeedSpec) -> TokenSeq:
    if cfg.mechanism is None or len(x) == 0:
        return x
    return cfg.mechanism.sample_for_training(x, seed, cfg.min_preserved)


def train_histogram(dataset: Sequence[LabeledSeq], cfg: TrainConfig, seed: int,
                    alphabet: Optional[Alphabet] = None) -> HistogramModel:
    """
    Fit a HistogramModel by seeded mini-batch gradient descent on the
    logistic loss. Each example is re-perturbed by the training mechanism
    every epoch.
    """
    cfg.validate()
    labels = np.array([y for _, y in dataset], dtype=float)
    if set(np.unique(labels)) - {0.0, 1.0}:
        raise ValueError("Histogram training supports binary labels 0/1 only")
    for cls in (0, 1):
        if not np.any(labels == cls):
            raise ValueError(f"Training set has no examples of class {cls}")

    if alphabet is None:
        alphabet = Alphabet(max(x.alphabet.size for x, _ in dataset))
    if alphabet.size < 2:
        raise ValueError("Histogram model needs an alphabet of at least 2 tokens")

    model = HistogramModel(alphabet)
    theta = np.zeros(alphabet.size + 2)
    n = len(dataset)
    logger.info(f"Training histogram model: {n} examples, alphabet {alphabet.size}, "
                f"{cfg.epochs} epochs")

    for epoch in range(cfg.epochs):
        order = SeedSpec(seed, epoch, STREAM_TRAIN_ORDER).generator().permutation(n)
        feats = np.stack([
            _histogram_features(
                _training_draw(x, cfg, SeedSpec(seed, epoch * n + i, STREAM_TRAIN)).tokens,
                alphabet.size,
            )
            for i, (x, _) in enumerate(dataset)
        ])
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            xb, yb = feats[batch], labels[batch]
            residual = expit(xb @ theta) - yb
            grad = xb.T @ residual / len(batch) + cfg.l2 * theta
            theta -= cfg.learning_rate * grad

        if (epoch + 1) % 10 == 0 or epoch + 1 == cfg.epochs:
            probs = expit(feats @ theta)
            loss = -np.mean(labels * np.log(probs + 1e-12) + (1 - labels) * np.log(1 - probs + 1e-12))
            logger.debug(f"Epoch {epoch + 1}/{cfg.epochs}: loss {loss:.4f}")

    model.set_parameters(theta)
    return model


def smoothed_effective_scores(model: HistogramModel, seqs: Sequence[TokenSeq], mechanism: Mechanism,
                              samples: int, seed: int,
                              eta: Tuple[float, float] = (DEFAULT_ETA, DEFAULT_ETA)) -> np.ndarray:
    """
    Per-input score such that the smoothed model predicts class 1 iff this
    score >= threshold: the c-th largest of ``samples`` perturbed base scores,
    where c is the smallest vote count that beats the class-0 margin.
    """
    tau = (1.0 + eta[1] - eta[0]) / 2.0
    c = math.floor(tau * samples) + 1
    out = np.empty(len(seqs))
    for i, x in enumerate(seqs):
        if c > samples:
            out[i] = -np.inf
            continue
        draws = [
            x if len(x) == 0 else mechanism.sample(x, SeedSpec(seed, i * samples + j, STREAM_CALIBRATE))
            for j in range(samples)
        ]
        scores = np.sort(model.decision_scores(draws))[::-1]
        out[i] = scores[c - 1]
    return out


def threshold_for_fpr(benign_scores: Sequence[float], target_fpr: float) -> float:
    """Smallest threshold flagging at most floor(target_fpr * N) benign scores."""
    scores = np.sort(np.asarray(benign_scores, dtype=float))[::-1]
    n = scores.size
    if n == 0:
        raise ValueError("Calibration needs at least one benign example")
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError(f"target_fpr must lie in [0, 1], got {target_fpr}")
    allowed = math.floor(target_fpr * n + 1e-9)
    if allowed >= n:
        return float(scores[-1])
    return float(np.nextafter(scores[allowed], np.inf))


def calibrate_threshold(model: HistogramModel, validation: Sequence[LabeledSeq],
                        target_fpr: float = DEFAULT_TARGET_FPR,
                        mechanism: Optional[Mechanism] = None,
                        samples: int = DEFAULT_CALIBRATION_SAMPLES, seed: int = 0,
                        eta: Tuple[float, float] = (DEFAULT_ETA, DEFAULT_ETA)) -> float:
    """
    Decision threshold hitting ``target_fpr`` on the benign (label 0) part of
    ``validation``; measured on smoothed predictions when ``mechanism`` is set.
    """
    benign = [x for x, y in validation if y == 0]
    if not benign:
        raise ValueError("Calibration needs at least one benign example")
    if mechanism is None:
        scores = model.decision_scores(benign)
    else:
        scores = smoothed_effective_scores(model, benign, mechanism, samples, seed, eta)
    threshold = threshold_for_fpr(scores, target_fpr)
    logger.info(f"Calibrated threshold {threshold!r} on {len(benign)} benign examples "
                f"(target FPR {target_fpr})")
    return threshold


def empirical_fpr(scores: Sequence[float], threshold: float) -> float:
    scores = np.asarray(scores, dtype=float)
    return float(np.mean(scores >= threshold)) if scores.size else 0.0


def save_model(model: HistogramModel, path: Path) -> None:
    """Write the versioned plain-text model record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        f.write(f"{MODEL_HEADER}\n")
        f.write(f"alphabet {model.alphabet.size}\n")
        f.write(f"threshold {float(model.threshold)!r}\n")
        for i, w in enumerate(model.weights):
            if w != 0.0:
                f.write(f"w {i} {float(w)!r}\n")
        f.write(f"wlen {float(model.w_len)!r}\n")
        f.write(f"bias {float(model.bias)!r}\n")
    logger.info(f"Saved model to {path}")


def load_model(path: Path) -> HistogramModel:
    with open(path, 'r') as f:
        lines = [line.split() for line in f if line.strip()]
    if not lines or " ".join(lines[0]) != MODEL_HEADER:
        raise ValueError(f"Not a histogram model file: {path}")

    fields = {}
    weights: List[Tuple[int, float]] = []
    for parts in lines[1:]:
        if parts[0] == "w" and len(parts) == 3:
            weights.append((int(parts[1]), float(parts[2])))
        elif len(parts) == 2 and parts[0] in ("alphabet", "threshold", "wlen", "bias"):
            fields[parts[0]] = parts[1]
        else:
            raise ValueError(f"Malformed model line in {path}: {' '.join(parts)}")

    missing = {"alphabet", "threshold", "wlen", "bias"} - fields.keys()
    if missing:
        raise ValueError(f"Model file {path} missing fields: {sorted(missing)}")

    alphabet = Alphabet(int(fields["alphabet"]))
    vec = np.zeros(alphabet.size)
    for i, w in weights:
        vec[i] = w
    return HistogramModel(alphabet, vec, float(fields["wlen"]), float(fields["bias"]),
                          float(fields["threshold"]))
