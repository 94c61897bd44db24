"""Frame-dataset synthesis and the per-scenario binary files."""

import numpy as np
import pytest

from tripsense.events import SCENARIO_ORDER, Scenario
from tripsense.nn.datasets import (
    build_scenario_dataset,
    load_dataset,
    load_frames,
    merge_groups,
    save_dataset,
    save_frames,
    split_groups,
)


class TestBuildScenarioDataset:
    def test_covers_all_scenarios_balanced(self):
        groups = build_scenario_dataset(side=16, per_scenario=10, seed=1)
        assert set(groups) == set(SCENARIO_ORDER)
        for frames, labels in groups.values():
            assert frames.shape == (10, 16, 16)
            assert labels.sum() == 5  # alternating 0/1

    def test_deterministic(self):
        a = build_scenario_dataset(side=16, per_scenario=4, seed=9)
        b = build_scenario_dataset(side=16, per_scenario=4, seed=9)
        for scenario in SCENARIO_ORDER:
            assert np.array_equal(a[scenario][0], b[scenario][0])

    def test_seed_changes_frames(self):
        a = build_scenario_dataset(side=16, per_scenario=4, seed=1)
        b = build_scenario_dataset(side=16, per_scenario=4, seed=2)
        assert not np.array_equal(a[Scenario.GLASSES][0], b[Scenario.GLASSES][0])

    def test_prefix_stability(self):
        # frame i depends only on (seed, scenario, i), not on per_scenario
        small = build_scenario_dataset(side=16, per_scenario=3, seed=5)
        large = build_scenario_dataset(side=16, per_scenario=6, seed=5)
        for scenario in SCENARIO_ORDER:
            assert np.array_equal(small[scenario][0], large[scenario][0][:3])

    def test_bad_count_rejected(self):
        with pytest.raises(ValueError):
            build_scenario_dataset(per_scenario=0)


class TestFrameFiles:
    def test_round_trip_after_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = rng.random((7, 16, 16))
        labels = rng.integers(0, 2, size=7)
        path = tmp_path / "x.frames"
        save_frames(path, frames, labels)
        loaded_frames, loaded_labels = load_frames(path)
        assert np.array_equal(loaded_labels, labels)
        # pixels are stored as one byte each
        assert loaded_frames == pytest.approx(frames, abs=1.0 / 255.0)
        save_frames(path, loaded_frames, loaded_labels)
        again, _ = load_frames(path)
        assert np.array_equal(again, loaded_frames)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.frames"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_frames(path)

    def test_truncated_rejected(self, tmp_path):
        frames = np.zeros((3, 8, 8))
        labels = np.zeros(3, dtype=np.int64)
        path = tmp_path / "t.frames"
        save_frames(path, frames, labels)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValueError):
            load_frames(path)

    def test_dataset_round_trip(self, tmp_path):
        groups = build_scenario_dataset(side=16, per_scenario=6, seed=3)
        save_dataset(tmp_path / "data", groups)
        loaded = load_dataset(tmp_path / "data")
        for scenario in SCENARIO_ORDER:
            assert np.array_equal(loaded[scenario][1], groups[scenario][1])
            assert loaded[scenario][0] == pytest.approx(groups[scenario][0], abs=1 / 255)

    def test_missing_scenario_file_rejected(self, tmp_path):
        groups = build_scenario_dataset(side=16, per_scenario=2, seed=1)
        save_dataset(tmp_path / "data", groups)
        (tmp_path / "data" / f"{Scenario.SUNGLASSES.value}.frames").unlink()
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "data")


class TestGroupHelpers:
    def test_merge_concatenates_in_order(self):
        groups = build_scenario_dataset(side=16, per_scenario=3, seed=2)
        frames, labels = merge_groups(groups)
        assert frames.shape[0] == 15
        assert np.array_equal(frames[:3], groups[SCENARIO_ORDER[0]][0])

    def test_split_is_disjoint_and_complete(self):
        groups = build_scenario_dataset(side=16, per_scenario=10, seed=4)
        train, held = split_groups(groups, eval_fraction=0.3, seed=8)
        for scenario in SCENARIO_ORDER:
            n_train = train[scenario][0].shape[0]
            n_held = held[scenario][0].shape[0]
            assert n_held == 3
            assert n_train + n_held == 10
        again_train, again_held = split_groups(groups, eval_fraction=0.3, seed=8)
        for scenario in SCENARIO_ORDER:
            assert np.array_equal(train[scenario][0], again_train[scenario][0])
            assert np.array_equal(held[scenario][0], again_held[scenario][0])

    def test_split_fraction_validated(self):
        groups = build_scenario_dataset(side=16, per_scenario=4, seed=1)
        with pytest.raises(ValueError):
            split_groups(groups, eval_fraction=0.0, seed=1)
        with pytest.raises(ValueError):
            split_groups(groups, eval_fraction=1.0, seed=1)
