import pytest

from fedv2g import config as C
from fedv2g.errors import ConfigError


class TestRoundTrip:
    def test_defaults_round_trip_fixed_point(self):
        cfg = C.RunConfig()
        text = C.to_text(cfg)
        again = C.from_text(text)
        assert again == cfg
        assert C.to_text(again) == text

    def test_file_round_trip(self, tmp_path):
        cfg = C.RunConfig(seed=42)
        path = tmp_path / "run.cfg"
        C.dump(cfg, path)
        assert C.load(path) == cfg

    def test_non_default_values_survive(self):
        text = "\n".join([
            "seed = 11",
            "fed.n_agents = 5",
            "fed.episodes = 10",
            "sac.policy_hidden = 16,16",
            "sac.updates_per_episode = 4",
            "price_scale = 25.0",
            "reward.sigma_x = 0.0",
            "profiles.0.schedule.home_arrival.mean = 16.0",
        ])
        cfg = C.from_text(text)
        assert cfg.seed == 11
        assert cfg.fed.n_agents == 5
        assert cfg.fed_config().seed == 11
        assert cfg.sac.policy_hidden == (16, 16)
        assert cfg.sac.updates_per_episode == 4
        assert cfg.price_scale == 25.0
        assert cfg.reward.sigma_x == 0.0
        assert cfg.profiles[0].schedule["home_arrival"].mean == 16.0
        # untouched profile fields keep their defaults
        assert cfg.profiles[1].schedule["home_arrival"].mean == 16.5

    def test_auto_markers(self):
        cfg = C.from_text("price_scale = auto\nsac.updates_per_episode = auto\n"
                          "eval.week_start = auto\n")
        assert cfg.price_scale is None
        assert cfg.sac.updates_per_episode is None
        assert cfg.eval.week_start is None
        assert "price_scale = auto" in C.to_text(cfg)


class TestValidation:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            C.from_text("sac.gamm = 0.5\n")

    def test_bad_value_type(self):
        with pytest.raises(ConfigError, match="expected integer"):
            C.from_text("fed.n_agents = many\n")

    def test_bad_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            C.from_text("this is not a config line\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            C.from_text("seed = 1\nseed = 2\n")

    def test_comments_and_blanks_ok(self):
        cfg = C.from_text("# a comment\n\nseed = 3  # trailing comment\n")
        assert cfg.seed == 3

    def test_bad_squash_mode(self):
        with pytest.raises(ConfigError, match="policy_squash"):
            C.from_text("sac.policy_squash = sigmoid\n")

    def test_bad_price_source(self):
        with pytest.raises(ConfigError, match="prices.source"):
            C.from_text("prices.source = oracle\n")

    def test_profile_count_extends_by_cycling(self):
        cfg = C.from_text("profiles.count = 5\n")
        assert len(cfg.profiles) == 5
        assert cfg.profiles[3].name == cfg.profiles[0].name

    def test_overrides(self):
        cfg = C.RunConfig()
        out = C.apply_overrides(cfg, {"seed": "9", "fed.episodes": "2"})
        assert out.seed == 9
        assert out.fed.episodes == 2
        with pytest.raises(ConfigError):
            C.apply_overrides(cfg, {"nope": "1"})
