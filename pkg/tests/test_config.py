"""Run configuration loading, validation, and hashing."""

import pytest

from xladapt.config import RunConfig, load_config
from xladapt.errors import ConfigError


class TestDefaults:
    def test_defaults_instantiate(self):
        cfg = RunConfig()
        assert cfg.seed == 0
        assert cfg.vocab_size == 30000
        assert cfg.rank == 64
        assert cfg.alpha == 16.0
        assert cfg.block_size == 64
        assert cfg.context_len == 2048
        assert cfg.threshold == 0.8
        assert cfg.epsilon_convention == "gap"
        assert cfg.prefix_space is True

    def test_load_without_file_is_defaults(self):
        assert load_config() == RunConfig()


class TestHash:
    def test_hash_is_stable(self):
        assert RunConfig().hash() == RunConfig().hash()

    def test_hash_changes_with_any_field(self):
        base = RunConfig().hash()
        assert RunConfig(seed=1).hash() != base
        assert RunConfig(alpha=16.5).hash() != base
        assert RunConfig(epsilon_convention="literal").hash() != base

    def test_hash_is_hex_digest(self):
        h = RunConfig().hash()
        assert len(h) == 64
        int(h, 16)


class TestLoadFile:
    def test_file_overrides_defaults(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text('seed = 9\nvocab_size = 500\nepsilon_convention = "literal"\n')
        cfg = load_config(p)
        assert cfg.seed == 9
        assert cfg.vocab_size == 500
        assert cfg.epsilon_convention == "literal"
        assert cfg.rank == 64

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("not_a_real_option = 1\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_nested_table_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("[training]\nseed = 1\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_type_mismatch_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text('seed = "zero"\n')
        with pytest.raises(ConfigError):
            load_config(p)

    def test_bool_is_not_an_int(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("seed = true\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_int_coerces_to_float_field(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("alpha = 32\n")
        cfg = load_config(p)
        assert cfg.alpha == 32.0
        assert isinstance(cfg.alpha, float)

    def test_malformed_toml_rejected(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("seed = = 1\n")
        with pytest.raises(ConfigError):
            load_config(p)


class TestOverrides:
    def test_override_beats_file(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("seed = 9\nthreads = 2\n")
        cfg = load_config(p, overrides={"seed": 11})
        assert cfg.seed == 11
        assert cfg.threads == 2

    def test_none_override_is_skipped(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text("seed = 9\n")
        cfg = load_config(p, overrides={"seed": None, "threads": 4})
        assert cfg.seed == 9
        assert cfg.threads == 4

    def test_unknown_override_rejected(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"nope": 1})

    def test_override_type_checked(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"seed": "zero"})
