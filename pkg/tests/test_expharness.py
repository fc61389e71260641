import json

import numpy as np
import pytest

from swec import expharness, synthgrid
from swec.expharness import (ExperimentConfig, PipelineError, compare_methods,
                             comparison_rows, config_from_json, config_to_json,
                             derive_seed, largest_remainder_counts, load_report,
                             run_pipeline, save_report, split_stratified,
                             sweep_placement, sweep_rows, sweep_sampling_rate,
                             write_comparison_run)
from swec.synthgrid import ConfigError
from conftest import tiny_config

DEFAULT_LABELS = np.repeat([1, 2, 3, 4], [64, 144, 320, 72])


class TestSplit:
    def test_default_counts_give_13_29_64_14(self):
        split = split_stratified(DEFAULT_LABELS, 0.8, seed=0)
        test_labels = DEFAULT_LABELS[split.test]
        counts = [int((test_labels == c).sum()) for c in (1, 2, 3, 4)]
        assert counts == [13, 29, 64, 14]
        assert len(split.test) == 120
        assert len(split.train) == 480

    def test_partition(self):
        split = split_stratified(DEFAULT_LABELS, 0.8, seed=1)
        combined = np.concatenate([split.train, split.test])
        assert np.array_equal(np.sort(combined), np.arange(600))
        assert not set(split.train) & set(split.test)

    def test_deterministic(self):
        a = split_stratified(DEFAULT_LABELS, 0.8, seed=2)
        b = split_stratified(DEFAULT_LABELS, 0.8, seed=2)
        np.testing.assert_array_equal(a.train, b.train)
        np.testing.assert_array_equal(a.test, b.test)
        assert a.fingerprint() == b.fingerprint()

    def test_different_seed_different_split(self):
        a = split_stratified(DEFAULT_LABELS, 0.8, seed=3)
        b = split_stratified(DEFAULT_LABELS, 0.8, seed=4)
        assert a.fingerprint() != b.fingerprint()

    def test_near_unit_fraction(self):
        split = split_stratified(DEFAULT_LABELS, 1.0 - 1e-12, seed=0)
        assert len(split.test) == 0
        assert len(split.train) == 600

    def test_empty_class_rejected(self):
        labels = np.array([1, 1, 2, 3])
        with pytest.raises(ConfigError, match=r"\[4\]"):
            split_stratified(labels, 0.5, seed=0)

    def test_largest_remainder_tie_prefers_lower_index(self):
        # quotas 1.5, 1.5 with 3 seats: both floors 1, one seat left -> class 0
        assert largest_remainder_counts([3, 3], 0.5) == [2, 1]

    def test_largest_remainder_exact(self):
        assert largest_remainder_counts([64, 144, 320, 72], 0.2) == [13, 29, 64, 14]


class TestConfig:
    def test_round_trip(self):
        cfg = tiny_config()
        again = config_from_json(config_to_json(cfg))
        assert again == cfg

    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        assert config_from_json(config_to_json(cfg)) == cfg

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            config_from_json({"bogus": 1})

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError, match="warp"):
            config_from_json({"cnn": {"warp": 9}})

    def test_partial_document_uses_defaults(self):
        cfg = config_from_json({"seed": 9, "repeats": 2})
        assert cfg.seed == 9
        assert cfg.repeats == 2
        assert cfg.fs_list == ExperimentConfig().fs_list

    def test_duplicate_bus_subset_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            ExperimentConfig(bus_subsets=((632,), (632,)))

    def test_invalid_fraction(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(train_fraction=1.0)

    def test_invalid_subset(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(bus_subsets=((632, 999),))

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(methods=("cnn", "forest"))

    def test_load_config_malformed_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{oops")
        with pytest.raises(ConfigError, match="malformed"):
            expharness.load_config(path)

    def test_derive_seed_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


class TestPipeline:
    def test_tiny_run_produces_report(self):
        res = run_pipeline(tiny_config(), 2000.0, (632, 671, 675), "cnn")
        assert res.cm.sum() == 4  # one test record per class
        assert 0.0 <= res.accuracy <= 1.0
        assert res.fingerprint

    def test_single_bus_clamped_arch_completes(self):
        res = run_pipeline(tiny_config(), 2000.0, (632,), "cnn")
        assert res.model.arch.input_h == 1
        assert res.cm.sum() == 4

    def test_stage_error_names_stage(self):
        with pytest.raises(PipelineError, match="stage 'dataset'"):
            run_pipeline(tiny_config(), 500.0, (632,), "cnn")

    def test_deterministic_results(self):
        cfg = tiny_config()
        a = run_pipeline(cfg, 2000.0, (632, 671, 675), "svm")
        b = run_pipeline(cfg, 2000.0, (632, 671, 675), "svm")
        assert a.accuracy == b.accuracy
        np.testing.assert_array_equal(a.cm, b.cm)
        assert a.fingerprint == b.fingerprint


class TestSweeps:
    def test_sampling_rate_rows_ascend(self):
        rows = sweep_sampling_rate(tiny_config())
        assert [r.key for r in rows] == [2000.0, 4000.0]
        for row in rows:
            assert len(row.accuracies) == 1

    def test_default_rate_ladder_has_five_rows(self):
        cfg = tiny_config(fs_list=ExperimentConfig().fs_list)
        rows = sweep_sampling_rate(cfg)
        assert [r.key for r in rows] == [1250.0, 2500.0, 5000.0, 10000.0,
                                         20000.0]

    def test_default_subsets_give_seven_rows(self):
        cfg = tiny_config(bus_subsets=ExperimentConfig().bus_subsets)
        rows = sweep_placement(cfg)
        assert len(rows) == 7
        assert rows[-1].key == (632, 671, 675)

    def test_sampling_rate_needs_two_rates(self):
        with pytest.raises(ConfigError):
            sweep_sampling_rate(tiny_config(fs_list=(2000.0,)))

    def test_repeat_prefix_stable(self):
        one = sweep_sampling_rate(tiny_config(repeats=1))
        three = sweep_sampling_rate(tiny_config(repeats=3))
        for r1, r3 in zip(one, three):
            assert r3.accuracies[0] == r1.accuracies[0]

    def test_placement_rows_match_subsets(self):
        cfg = tiny_config()
        rows = sweep_placement(cfg)
        assert [r.key for r in rows] == [tuple(s) for s in cfg.bus_subsets]

    def test_placement_matches_run_pipeline(self):
        cfg = tiny_config()
        rows = sweep_placement(cfg)
        direct = run_pipeline(cfg, cfg.placement_fs, (632,), "cnn", 0)
        assert rows[0].accuracies[0] == direct.accuracy

    def test_sweep_rows_formatting(self):
        rows = sweep_rows(sweep_sampling_rate(tiny_config()), "fs")
        assert rows[0] == ["fs", "mean_accuracy", "accuracy_r0"]
        assert len(rows) == 3


class TestCompare:
    def test_identical_splits_across_methods(self):
        comps = compare_methods(tiny_config())
        fingerprints = {c.method: [r.fingerprint for r in c.runs] for c in comps}
        reference = next(iter(fingerprints.values()))
        assert all(v == reference for v in fingerprints.values())

    def test_methods_in_config_order(self):
        cfg = tiny_config()
        comps = compare_methods(cfg)
        assert [c.method for c in comps] == list(cfg.methods)

    def test_needs_two_methods(self):
        with pytest.raises(ConfigError):
            compare_methods(tiny_config(methods=("cnn",)))

    def test_comparison_rows_layout(self):
        rows = comparison_rows(compare_methods(tiny_config()))
        assert rows[0][:2] == ["method", "acc"]
        assert len(rows) == 3


class TestArtifacts:
    def test_report_round_trip(self, tmp_path):
        rows = [["a", "b"], ["1", "2.50"], ["N/A", "x y"]]
        path = save_report(rows, tmp_path / "r.csv")
        assert load_report(path) == rows

    def test_model_dispatch_round_trip(self, tmp_path):
        res = run_pipeline(tiny_config(), 2000.0, (632, 671, 675), "cnn")
        expharness.save_model("cnn", res.model, tmp_path / "m.bin")
        loaded = expharness.load_model("cnn", tmp_path / "m.bin")
        np.testing.assert_array_equal(loaded.conv_w, res.model.conv_w)

    def test_comparison_run_directory(self, tmp_path):
        cfg = tiny_config()
        out = write_comparison_run(cfg, tmp_path / "run")
        assert (out / "manifest.json").is_file()
        assert (out / "reports" / "compare.csv").is_file()
        for method in cfg.methods:
            assert (out / "models" / f"{method}_r0.bin").is_file()
            assert (out / "confusion" / f"{method}_r0.csv").is_file()
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["results"]) == set(cfg.methods)

    def test_comparison_run_byte_identical(self, tmp_path):
        cfg = tiny_config()
        a = write_comparison_run(cfg, tmp_path / "a")
        b = write_comparison_run(cfg, tmp_path / "b")
        for rel in ("manifest.json", "reports/compare.csv",
                    "reports/cnn_r0.csv", "confusion/svm_r0.csv",
                    "models/cnn_r0.bin"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


class TestThreadCap:
    def test_invalid_thread_env_rejected(self, monkeypatch):
        monkeypatch.setenv("SWEC_THREADS", "zero")
        with pytest.raises(ConfigError, match="SWEC_THREADS"):
            sweep_sampling_rate(tiny_config())

    def test_threaded_sweep_matches_serial(self, monkeypatch):
        cfg = tiny_config()
        serial = sweep_sampling_rate(cfg)
        monkeypatch.setenv("SWEC_THREADS", "2")
        threaded = sweep_sampling_rate(cfg)
        assert [r.accuracies for r in serial] == [r.accuracies for r in threaded]
