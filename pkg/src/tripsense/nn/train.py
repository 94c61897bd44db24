"""Mini-batch SGD training with cross-entropy loss and gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Model

PROB_CLIP = 1e-15


@dataclass(frozen=True, slots=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(slots=True)
class TrainingHistory:
    """Mean per-example loss for each completed epoch."""

    epoch_losses: list[float] = field(default_factory=list)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes.

    Probabilities are clipped away from zero so a confidently wrong
    prediction yields a large finite loss rather than an infinity.
    """
    n = probs.shape[0]
    if n == 0:
        raise ValueError("cannot compute loss over zero examples")
    picked = probs[np.arange(n), labels]
    return float(-np.log(np.clip(picked, PROB_CLIP, None)).mean())


def loss_and_gradients(model: Model, x: np.ndarray, labels: np.ndarray,
                       rng: np.random.Generator | None = None,
                       train: bool = True):
    """One forward/backward pass; returns (loss, gradients by parameter name)."""
    probs, caches = model.forward_with_caches(x, train=train, rng=rng)
    loss = cross_entropy(probs, labels)
    n = probs.shape[0]
    dprobs = np.zeros_like(probs)
    picked = np.clip(probs[np.arange(n), labels], PROB_CLIP, None)
    dprobs[np.arange(n), labels] = -1.0 / (n * picked)
    grads = model.backward(dprobs, caches)
    return loss, grads


def train(model: Model, x: np.ndarray, labels: np.ndarray,
          config: TrainConfig) -> TrainingHistory:
    """Train in place: shuffled mini-batches, plain SGD updates.

    The same config and initial parameters reproduce the same final
    parameters bit for bit; a zero learning rate leaves them untouched.
    """
    n = x.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} examples")
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if labels.min() < 0 or labels.max() >= model.class_count:
        raise ValueError(f"labels must lie in [0, {model.class_count})")

    rng = np.random.default_rng(config.seed)
    history = TrainingHistory()
    params = dict(model.parameters())
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(model, x[batch], labels[batch], rng=rng)
            total += loss * batch.size
            for name, grad in grads:
                params[name] -= config.learning_rate * grad
        history.epoch_losses.append(total / n)
    return history
