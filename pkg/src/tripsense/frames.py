"""Synthetic grayscale face frames with a drowsiness signal.

Each frame is a square array of pixels in [0, 1]. Eye closure is the primary
cue (dark eye boxes when drowsy); a yawning mouth is a weaker secondary cue
that is deliberately unreliable, so occluding the eyes (sunglasses) caps the
attainable accuracy instead of zeroing it. Night scenarios scale the whole
frame down by a fixed brightness factor before noise is added.
"""

from __future__ import annotations

import numpy as np

from .events import Scenario

DEFAULT_SIDE = 16
NIGHT_BRIGHTNESS = 0.4
NOISE_SIGMA = 0.02
# Probability that the mouth cue contradicts the drowsy state (awake yawns,
# drowsy with a closed mouth). Keeps the occluded-eyes case learnable but hard.
MOUTH_FLIP_PROB = 0.2

_BACKGROUND = 0.05
_FACE = 0.5
_EYE_OPEN = 0.9
_EYE_CLOSED = 0.15
_SUNGLASSES = 0.1
_GLASSES_RIM = 0.8
_MOUTH_OPEN = 0.12
_LIP_LINE = 0.35


def _box(side: int, r0: float, r1: float, c0: float, c1: float) -> tuple[slice, slice]:
    return slice(int(r0 * side), int(r1 * side)), slice(int(c0 * side), int(c1 * side))


def eye_boxes(side: int) -> tuple[tuple[slice, slice], tuple[slice, slice]]:
    """Left and right eye regions as (row, col) slice pairs."""
    return _box(side, 0.30, 0.45, 0.20, 0.42), _box(side, 0.30, 0.45, 0.58, 0.80)


def face_box(side: int) -> tuple[slice, slice]:
    return _box(side, 0.15, 0.90, 0.15, 0.85)


def cheek_box(side: int) -> tuple[slice, slice]:
    """Eye-free reference patch used to normalize for global brightness."""
    return _box(side, 0.50, 0.62, 0.20, 0.80)


def mouth_box(side: int) -> tuple[slice, slice]:
    return _box(side, 0.65, 0.80, 0.38, 0.62)


def eye_region_pixels(frame: np.ndarray) -> np.ndarray:
    side = frame.shape[0]
    left, right = eye_boxes(side)
    return np.concatenate([frame[left].ravel(), frame[right].ravel()])


def synth_frame(drowsy: bool, scenario: Scenario, seed: int, side: int = DEFAULT_SIDE) -> np.ndarray:
    """Render one stylized face frame; deterministic per (drowsy, scenario, seed, side)."""
    if side < 8:
        raise ValueError(f"side {side} too small to render a face")
    rng = np.random.default_rng(seed)
    frame = np.full((side, side), _BACKGROUND)
    frame[face_box(side)] = _FACE

    left, right = eye_boxes(side)
    if scenario is Scenario.SUNGLASSES:
        # Opaque lenses: eye region carries no drowsiness information.
        band = _box(side, 0.28, 0.47, 0.18, 0.82)
        frame[band] = _SUNGLASSES
    else:
        level = _EYE_CLOSED if drowsy else _EYE_OPEN
        frame[left] = level
        frame[right] = level
        if scenario in (Scenario.GLASSES, Scenario.NIGHT_GLASSES):
            rim_top = left[0].start - 1
            rim_bottom = left[0].stop
            cols = slice(left[1].start - 1, right[1].stop + 1)
            frame[rim_top, cols] = _GLASSES_RIM
            frame[rim_bottom, cols] = _GLASSES_RIM

    mouth_open = drowsy != (rng.random() < MOUTH_FLIP_PROB)
    rows, cols = mouth_box(side)
    if mouth_open:
        frame[rows, cols] = _MOUTH_OPEN
    else:
        lip = (rows.start + rows.stop) // 2
        frame[lip, cols] = _LIP_LINE

    if scenario in (Scenario.NIGHT_GLASSES, Scenario.NIGHT_NO_GLASSES):
        frame = frame * NIGHT_BRIGHTNESS

    frame = frame + rng.normal(0.0, NOISE_SIGMA, size=frame.shape)
    return np.clip(frame, 0.0, 1.0)
