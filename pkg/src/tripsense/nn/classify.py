"""Drowsiness classifiers and the per-scenario evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from ..events import SCENARIO_ORDER, Scenario
from ..frames import cheek_box, eye_region_pixels
from .layers import ShapeError
from .model import Model

EVAL_CHUNK = 64


@runtime_checkable
class FrameClassifier(Protocol):
    """Anything that maps a square grayscale frame to a drowsiness score.

    Scores are probabilities of the drowsy class, in [0, 1].
    """

    @property
    def input_side(self) -> int: ...

    def score(self, frame: np.ndarray) -> float: ...

    def score_batch(self, frames: np.ndarray) -> np.ndarray: ...


def _check_batch(frames: np.ndarray, side: int) -> None:
    if frames.ndim != 3 or frames.shape[1] != side or frames.shape[2] != side:
        raise ShapeError(f"expected frames shaped (n, {side}, {side}), got {frames.shape}")


class CnnClassifier:
    """Scores frames with a trained network; the drowsy class is index 1."""

    def __init__(self, model: Model):
        if model.input_shape[0] != 1 or model.input_shape[1] != model.input_shape[2]:
            raise ShapeError(f"model input {model.input_shape} is not a single-channel square")
        if model.class_count != 2:
            raise ShapeError(f"drowsiness scoring needs 2 classes, model has {model.class_count}")
        self.model = model

    @property
    def input_side(self) -> int:
        return self.model.input_shape[1]

    def score(self, frame: np.ndarray) -> float:
        return float(self.score_batch(frame[np.newaxis])[0])

    def score_batch(self, frames: np.ndarray) -> np.ndarray:
        _check_batch(frames, self.input_side)
        n = frames.shape[0]
        scores = np.empty(n, dtype=np.float64)
        x = frames[:, np.newaxis, :, :].astype(np.float64)
        # chunked so a whole dataset never materializes its conv activations
        for start in range(0, n, EVAL_CHUNK):
            probs = self.model.forward(x[start:start + EVAL_CHUNK])
            scores[start:start + EVAL_CHUNK] = probs[:, 1]
        return scores


class EyeRegionBaseline:
    """Heuristic fallback: dark eyes relative to the cheeks read as closed.

    score = clip(1 - eye_mean / max(cheek_mean, eps), 0, 1), a monotone map
    of the eye-region mean, so a fully dark eye region scores near 1 and
    bright open eyes score 0. Lighting cancels out of the ratio, which keeps
    night frames comparable; lens occlusion defeats it by design.
    """

    _EPS = 1e-6

    def __init__(self, input_side: int):
        if input_side < 8:
            raise ShapeError(f"input side must be at least 8, got {input_side}")
        self._side = input_side

    @property
    def input_side(self) -> int:
        return self._side

    def score(self, frame: np.ndarray) -> float:
        return float(self.score_batch(frame[np.newaxis])[0])

    def score_batch(self, frames: np.ndarray) -> np.ndarray:
        _check_batch(frames, self._side)
        rows, cols = cheek_box(self._side)
        out = np.empty(frames.shape[0], dtype=np.float64)
        for i, frame in enumerate(frames):
            eye_mean = float(eye_region_pixels(frame).mean())
            cheek_mean = float(frame[rows, cols].mean())
            out[i] = min(max(1.0 - eye_mean / max(cheek_mean, self._EPS), 0.0), 1.0)
        return out


@dataclass(frozen=True, slots=True)
class AccuracyTable:
    """Classifier accuracy per driving scenario plus the pooled "All" row.

    "All" is correct-count over total-count across every scenario, so big
    groups weigh more than small ones; it is not the mean of the rows.
    """

    rows: Mapping[Scenario, float]
    overall: float

    def __post_init__(self):
        missing = [s for s in SCENARIO_ORDER if s not in self.rows]
        if missing or len(self.rows) != len(SCENARIO_ORDER):
            raise ValueError(f"need exactly one row per scenario, got {sorted(self.rows)}")
        for scenario, acc in self.rows.items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"{scenario.value} accuracy {acc} outside [0, 1]")
        if not 0.0 <= self.overall <= 1.0:
            raise ValueError(f"overall accuracy {self.overall} outside [0, 1]")

    @classmethod
    def from_counts(cls, correct: Mapping[Scenario, int],
                    total: Mapping[Scenario, int]) -> "AccuracyTable":
        if set(correct) != set(total):
            raise ValueError("correct and total cover different scenarios")
        for scenario, n in total.items():
            if n <= 0:
                raise ValueError(f"scenario {scenario.value} has no samples")
            if not 0 <= correct[scenario] <= n:
                raise ValueError(f"scenario {scenario.value}: {correct[scenario]} of {n}")
        rows = {s: correct[s] / total[s] for s in total}
        overall = sum(correct.values()) / sum(total.values())
        return cls(rows, overall)


def evaluate(classifier: FrameClassifier,
             groups: Mapping[Scenario, tuple[np.ndarray, np.ndarray]],
             threshold: float = 0.5) -> AccuracyTable:
    """Score every group and tabulate accuracy at the decision threshold.

    groups maps each scenario to (frames, labels) with labels 0 = alert,
    1 = drowsy; a score >= threshold predicts drowsy.
    """
    correct: dict[Scenario, int] = {}
    total: dict[Scenario, int] = {}
    for scenario in SCENARIO_ORDER:
        if scenario not in groups:
            raise ValueError(f"missing scenario group {scenario.value}")
        frames, labels = groups[scenario]
        if frames.shape[0] == 0:
            raise ValueError(f"scenario group {scenario.value} is empty")
        if labels.shape != (frames.shape[0],):
            raise ValueError(f"{scenario.value}: labels shape {labels.shape} "
                             f"does not match {frames.shape[0]} frames")
        predicted = classifier.score_batch(frames) >= threshold
        correct[scenario] = int((predicted == labels.astype(bool)).sum())
        total[scenario] = int(frames.shape[0])
    return AccuracyTable.from_counts(correct, total)
