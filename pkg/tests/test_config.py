from __future__ import annotations

import pytest

from coevo.config import CoevolutionConfig, config_from_dict, config_to_dict, load_config
from coevo.errors import ConfigError


class TestDefaults:
    def test_values(self):
        cfg = config_from_dict({})
        assert (cfg.T, cfg.K, cfg.n_episodes, cfg.gamma, cfg.policy_base) == (6, 5, 100, 1.0, "nash_best")
        assert cfg.policy_designer.mode == "scripted" and not cfg.uses_llm

    def test_designer_inherits_k(self):
        cfg = config_from_dict({"K": 3})
        assert cfg.policy_designer.K == 3 and cfg.designer("env").K == 3

    def test_round_trip(self):
        cfg = config_from_dict({"family": "nav2d", "env_designer": {"ops": ["add_obstacle"]}, "T": 2})
        assert config_from_dict(config_to_dict(cfg)) == cfg


class TestRejections:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="'iterations'"):
            config_from_dict({"iterations": 3})

    def test_unknown_nested_key_names_path(self):
        with pytest.raises(ConfigError, match=r"policy_designer\.llm\.modle"):
            config_from_dict({"policy_designer": {"mode": "llm", "llm": {"modle": "x"}}})

    def test_api_key_in_config_refused(self):
        with pytest.raises(ConfigError, match="environment"):
            config_from_dict({"env_designer": {"llm": {"api_key": "sk-123"}}})

    @pytest.mark.parametrize("bad", [
        {"T": 0}, {"K": 0}, {"gamma": 0.9}, {"family": "atari"}, {"policy_base": "best"},
        {"env_designer": {"mode": "oracle"}}, {"n_episodes": 0},
    ])
    def test_invalid_values(self, bad):
        with pytest.raises(ConfigError):
            config_from_dict(bad)


class TestYaml:
    def test_load(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("family: gridworld\nT: 2\nenv_designer:\n  door_limit: 2\n")
        cfg = load_config(p)
        assert cfg.T == 2 and cfg.env_designer.door_limit == 2

    def test_bad_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("T: [1,\n")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.yaml")


def test_replace_revalidates():
    with pytest.raises(ConfigError):
        CoevolutionConfig().replace(T=0)
