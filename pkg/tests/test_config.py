import dataclasses

import pytest

from ensclust.config import (
    ConfigError,
    RunConfig,
    config_hash,
    derive_seed,
    load_config,
)


def test_defaults_construct():
    cfg = RunConfig(months=("2025-01",))
    assert cfg.seed == 7
    assert cfg.sampling_sizes[0] == 200 and cfg.sampling_sizes[-1] == 1000
    assert cfg.stability_threshold == 0.5


def test_sequence_fields_coerced_to_tuples():
    cfg = RunConfig(months=["2025-01", "2025-02"], sampling_sizes=[100, 200])
    assert isinstance(cfg.months, tuple)
    assert isinstance(cfg.sampling_sizes, tuple)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"months": ()},
        {"months": ("January",)},
        {"months": ("2025-13",)},
        {"synthetic_n": 2, "synthetic_k": 3},
        {"synthetic_noise": 1.5},
        {"synthetic_stable_clusters": 9},
        {"sampling_sizes": (500,)},
        {"sampling_sizes": (500, 400)},
        {"sampling_ks": (1, 2)},
        {"sampling_seeds": 0},
        {"sampling_metrics": ("SI", "nope")},
        {"embedding_alpha": 1.5},
        {"embedding_neighbors": 1},
        {"library_profile": "enormous"},
        {"strategy_keep": 1},
        {"strategy_reference": "truth"},
        {"stability_threshold": -0.1},
        {"stability_strategy": "XYZ"},
        {"drift_subject": ""},
    ],
)
def test_invalid_settings_rejected(kwargs):
    base = {"months": ("2025-01",)}
    base.update(kwargs)
    with pytest.raises(ConfigError):
        RunConfig(**base)


def test_as_dict_json_friendly():
    cfg = RunConfig(months=("2025-01",))
    payload = cfg.as_dict()
    assert payload["months"] == ["2025-01"]
    assert all(not isinstance(v, tuple) for v in payload.values())


class TestConfigHash:
    def test_stable_for_equal_configs(self):
        a = RunConfig(months=("2025-01",), seed=3)
        b = RunConfig(months=("2025-01",), seed=3)
        assert config_hash(a) == config_hash(b)

    def test_changes_with_computational_fields(self):
        base = RunConfig(months=("2025-01",))
        for field, value in [
            ("seed", 8),
            ("months", ("2025-02",)),
            ("sampling_seeds", 4),
            ("stability_threshold", 0.6),
        ]:
            other = dataclasses.replace(base, **{field: value})
            assert config_hash(other) != config_hash(base), field

    def test_ignores_output_location_and_workers(self):
        # Neither field changes what gets computed, so runs into
        # different directories must share one hash.
        a = RunConfig(months=("2025-01",), output_dir="left", workers=1)
        b = RunConfig(months=("2025-01",), output_dir="right", workers=4)
        assert config_hash(a) == config_hash(b)

    def test_accepts_plain_mapping(self):
        digest = config_hash({"n": 5, "seed": 0})
        assert len(digest) == 64
        assert digest == config_hash({"seed": 0, "n": 5})


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(7, "embed", "2025-01") == derive_seed(7, "embed", "2025-01")

    def test_parts_matter(self):
        seen = {
            derive_seed(7),
            derive_seed(7, "embed"),
            derive_seed(7, "embed", "2025-01"),
            derive_seed(7, "embed", "2025-02"),
            derive_seed(8, "embed", "2025-01"),
        }
        assert len(seen) == 5

    def test_fits_in_uint32(self):
        for i in range(50):
            s = derive_seed(i, "stage", i)
            assert 0 <= s < 2**32


class TestLoadConfig:
    def test_file_sections_flatten(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            '[run]\nmonths = ["2025-01", "2025-02"]\nseed = 19\n'
            "[sampling]\nsizes = [100, 200]\nseeds = 2\n"
            "[stability]\nthreshold = 0.7\n"
        )
        cfg = load_config(path)
        assert cfg.months == ("2025-01", "2025-02")
        assert cfg.seed == 19
        assert cfg.sampling_sizes == (100, 200)
        assert cfg.stability_threshold == 0.7

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[mystery]\nx = 1\n")
        with pytest.raises(ConfigError, match="mystery"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[sampling]\nwidth = 3\n")
        with pytest.raises(ConfigError, match="width"):
            load_config(path)

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('[run]\nmonths = ["2025-01"]\nseed = 19\n')
        cfg = load_config(path, overrides={"seed": 3, "workers": None})
        assert cfg.seed == 3
        assert cfg.workers == 0  # None override ignored, default kept

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("months = [")
        with pytest.raises(ConfigError, match="TOML"):
            load_config(path)

    def test_no_file_just_overrides(self):
        cfg = load_config(None, {"months": ("2025-03",)})
        assert cfg.months == ("2025-03",)
