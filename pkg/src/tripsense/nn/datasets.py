"""Labeled frame datasets: synthesis, and a binary per-scenario file format."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..events import SCENARIO_ORDER, Scenario
from ..frames import DEFAULT_SIDE, synth_frame
from ..util import derive_seed

MAGIC = b"TSFR"

Group = tuple[np.ndarray, np.ndarray]


def build_scenario_dataset(side: int = DEFAULT_SIDE, per_scenario: int = 200,
                           seed: int = 0) -> dict[Scenario, Group]:
    """Balanced synthetic frames for every scenario, deterministic per seed.

    Labels alternate 0 (alert), 1 (drowsy); each frame's noise seed is derived
    from (seed, scenario, index) so any slice can be regenerated independently.
    """
    if per_scenario < 1:
        raise ValueError(f"per_scenario must be >= 1, got {per_scenario}")
    groups: dict[Scenario, Group] = {}
    for scenario in SCENARIO_ORDER:
        frames = np.empty((per_scenario, side, side), dtype=np.float64)
        labels = np.arange(per_scenario, dtype=np.int64) % 2
        for i in range(per_scenario):
            frame_seed = derive_seed(seed, scenario.value, i)
            frames[i] = synth_frame(bool(labels[i]), scenario, frame_seed, side)
        groups[scenario] = (frames, labels)
    return groups


def save_frames(path: str | Path, frames: np.ndarray, labels: np.ndarray) -> None:
    """Write frames as rows of bytes: header (count, side), then per record
    one label byte followed by side*side pixels scaled to 0..255."""
    n, side, side2 = frames.shape
    if side != side2:
        raise ValueError(f"frames must be square, got {frames.shape}")
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} frames")
    pixels = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, side))
        for i in range(n):
            fh.write(struct.pack("<B", int(labels[i]) & 1))
            fh.write(pixels[i].tobytes())


def load_frames(path: str | Path) -> Group:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise ValueError(f"{path}: not a frame dataset file")
    n, side = struct.unpack_from("<II", data, 4)
    record = 1 + side * side
    if len(data) != 12 + n * record:
        raise ValueError(f"{path}: expected {12 + n * record} bytes, got {len(data)}")
    frames = np.empty((n, side, side), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        off = 12 + i * record
        labels[i] = data[off]
        raw = np.frombuffer(data, dtype=np.uint8, count=side * side, offset=off + 1)
        frames[i] = raw.reshape(side, side) / 255.0
    return frames, labels


def save_dataset(directory: str | Path, groups: Mapping[Scenario, Group]) -> None:
    """One <scenario>.frames file per group."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for scenario, (frames, labels) in groups.items():
        save_frames(directory / f"{scenario.value}.frames", frames, labels)


def load_dataset(directory: str | Path) -> dict[Scenario, Group]:
    """Load every scenario's file; all five must be present and nonempty."""
    directory = Path(directory)
    groups: dict[Scenario, Group] = {}
    sides = set()
    for scenario in SCENARIO_ORDER:
        path = directory / f"{scenario.value}.frames"
        if not path.exists():
            raise FileNotFoundError(f"{directory}: missing {path.name}")
        frames, labels = load_frames(path)
        if frames.shape[0] == 0:
            raise ValueError(f"{path}: no frames")
        sides.add(frames.shape[1])
        groups[scenario] = (frames, labels)
    if len(sides) != 1:
        raise ValueError(f"{directory}: mixed frame sides {sorted(sides)}")
    return groups


def merge_groups(groups: Mapping[Scenario, Group]) -> Group:
    """Concatenate every scenario into one (frames, labels) pair."""
    frames = np.concatenate([groups[s][0] for s in SCENARIO_ORDER])
    labels = np.concatenate([groups[s][1] for s in SCENARIO_ORDER])
    return frames, labels


def split_groups(groups: Mapping[Scenario, Group], eval_fraction: float,
                 seed: int) -> tuple[dict[Scenario, Group], dict[Scenario, Group]]:
    """Shuffled per-scenario train/eval split; deterministic per seed."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    train: dict[Scenario, Group] = {}
    held: dict[Scenario, Group] = {}
    for scenario in SCENARIO_ORDER:
        frames, labels = groups[scenario]
        n = frames.shape[0]
        n_eval = max(1, int(round(n * eval_fraction)))
        if n_eval >= n:
            raise ValueError(f"{scenario.value}: {n} frames cannot spare {n_eval} for eval")
        rng = np.random.default_rng(derive_seed(seed, "split", scenario.value))
        order = rng.permutation(n)
        held[scenario] = (frames[order[:n_eval]], labels[order[:n_eval]])
        train[scenario] = (frames[order[n_eval:]], labels[order[n_eval:]])
    return train, held
