"""Tests for config.py."""
import json
import logging

import pytest

import app
from config import Config, ConfigError, ExperimentConfig, parse_override


class TestExperimentConfig:
    def test_defaults_need_only_dataset_and_task(self):
        config = ExperimentConfig.from_dict({"dataset_path": "a.csv", "task": "binclass"})
        assert config.n_bins == 10
        assert config.lr == 1e-4
        assert config.epochs == 1000
        assert config.probe_seeds == 10
        assert config.losses == [{"kind": "BinRecon", "weight": 1.0}]

    def test_unknown_key_is_an_error(self):
        with pytest.raises(ConfigError, match="n_bin"):
            ExperimentConfig.from_dict({"dataset_path": "a.csv", "task": "regression", "n_bin": 5})

    def test_round_trip_is_a_fixed_point(self):
        config = ExperimentConfig.from_dict({
            "dataset_path": "a.csv",
            "task": "regression",
            "losses": [{"kind": "BinRecon", "weight": 1.0}, {"kind": "MaskXent", "weight": 0.5}],
            "corruption_mode": "random",
            "mask_prob": 0.3,
        })
        again = ExperimentConfig.from_json(config.to_json())
        assert again.to_dict() == config.to_dict()
        assert again.to_json() == config.to_json()

    def test_hash_tracks_content(self):
        a = ExperimentConfig.from_dict({"dataset_path": "a.csv", "task": "regression"})
        b = ExperimentConfig.from_dict({"dataset_path": "a.csv", "task": "regression"})
        c = ExperimentConfig.from_dict({"dataset_path": "a.csv", "task": "regression", "n_bins": 5})
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()

    @pytest.mark.parametrize("changes", [
        {"n_bins": 1},
        {"mask_prob": 1.5},
        {"task": "ranking"},
        {"corruption_mode": "gaussian"},
        {"losses": [{"kind": "Contrastive"}]},
        {"losses": []},
        {"encoder_dims": []},
        {"probe_seeds": 0},
    ])
    def test_invalid_values(self, changes):
        data = {"dataset_path": "a.csv", "task": "regression", **changes}
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_load_applies_overrides_after_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"dataset_path": "a.csv", "task": "regression", "n_bins": 20}))
        config = ExperimentConfig.load(str(path), ["n_bins=5", 'losses=[{"kind": "ValueRecon"}]'])
        assert config.n_bins == 5
        assert config.losses == [{"kind": "ValueRecon"}]
        assert not config.needs_binning()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            ExperimentConfig.load(str(tmp_path / "absent.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(str(path))

    def test_require_dataset(self):
        with pytest.raises(ConfigError, match="dataset_path"):
            ExperimentConfig().require_dataset()


class TestOverrides:
    def test_json_values(self):
        assert parse_override("mask_prob=0.25") == ("mask_prob", 0.25)
        assert parse_override("decoder_dims=null") == ("decoder_dims", None)

    def test_text_fallback(self):
        assert parse_override("output_dir=runs/a") == ("output_dir", "runs/a")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_override("n_bins")


class TestEnvironmentConfig:
    def test_validate_rejects_zero_threads(self, monkeypatch):
        monkeypatch.setattr(Config, "THREADS_SETTING", "0")
        with pytest.raises(ValueError):
            Config.validate()

    def test_validate_rejects_non_numeric_threads(self, monkeypatch):
        monkeypatch.setattr(Config, "THREADS_SETTING", "many")
        with pytest.raises(ValueError, match="many"):
            Config.validate()

    def test_validate_parses_threads(self, monkeypatch):
        monkeypatch.setattr(Config, "THREADS_SETTING", "4")
        monkeypatch.setattr(Config, "THREADS", 1)
        Config.validate()
        assert Config.THREADS == 4

    def test_bad_threads_setting_exits_with_configuration_error(self, monkeypatch, caplog):
        monkeypatch.setattr(Config, "THREADS_SETTING", "many")
        with caplog.at_level(logging.ERROR):
            assert app.main(["bin"]) == 1
        assert "Configuration Error" in caplog.text

    def test_resolved_threads_falls_back_to_environment(self, monkeypatch):
        monkeypatch.setattr(Config, "THREADS", 3)
        assert ExperimentConfig().resolved_threads() == 3
        assert ExperimentConfig(threads=2).resolved_threads() == 2
