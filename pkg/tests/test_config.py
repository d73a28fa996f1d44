import json
import math

import numpy as np
import pytest

from kaclab.config import (
    ConfigError,
    config_hash,
    config_to_dict,
    initial_energy,
    initial_measure,
    load_config,
    parse_config,
    sample_initial,
)


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


MINIMAL = """
[model]
lambda = 1.0
mu = 1.0
temperature = 1.0
"""


class TestParsing:
    def test_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        assert cfg.params.lam == 1.0
        assert cfg.n_particles == 10000
        assert cfg.initial.kind == "two_point"
        assert cfg.initial.level == pytest.approx(math.sqrt(2.0))

    def test_json_alternative(self, tmp_path):
        data = {"model": {"lambda": 0.5, "mu": 2.0, "temperature": 1.5}}
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(data))
        cfg = load_config(str(path))
        assert cfg.params.mu == 2.0

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(write(tmp_path, "[modle]\nmu = 1.0\n"))

    def test_unknown_section_key(self, tmp_path):
        with pytest.raises(ConfigError, match="lamda"):
            load_config(write(tmp_path, "[model]\nlamda = 1.0\n"))

    def test_initial_kind_validation(self):
        with pytest.raises(ConfigError, match="kind"):
            parse_config({"initial": {"kind": "delta"}})

    def test_initial_missing_field(self):
        with pytest.raises(ConfigError, match="variance"):
            parse_config({"initial": {"kind": "gaussian"}})

    def test_initial_foreign_field(self):
        with pytest.raises(ConfigError):
            parse_config({"initial": {"kind": "gaussian", "variance": 1.0,
                                      "level": 2.0}})

    def test_sample_times_must_increase(self):
        with pytest.raises(ConfigError, match="sample_times"):
            parse_config({"run": {"sample_times": [2.0, 1.0]}})

    def test_sample_times_within_t_end(self):
        with pytest.raises(ConfigError):
            parse_config({"run": {"t_end": 1.0, "sample_times": [2.0]}})

    def test_rejects_bad_rates(self):
        with pytest.raises(ConfigError):
            parse_config({"model": {"mu": -1.0}})

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/cfg.toml")

    def test_malformed_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "model = [broken"))

    def test_seed_override(self):
        cfg = parse_config({"run": {"seed": 1}}, seed_override=99)
        assert cfg.seed == 99


class TestRoundTrip:
    def test_serialize_parse_idempotent(self):
        cfg = parse_config({
            "model": {"lambda": 0.7, "mu": 1.3, "temperature": 2.0},
            "run": {"seed": 5, "replicas": 3, "t_end": 4.0,
                    "sample_times": [1.0, 4.0], "n_particles": 77},
            "initial": {"kind": "uniform", "low": -1.0, "high": 2.0},
            "solver": {"dt": 0.01, "n_velocity": 512},
            "experiment": {"n_list": [10, 20], "k_list": [2],
                           "moment_order": 5.0},
        })
        again = parse_config(config_to_dict(cfg))
        assert again == cfg
        assert config_to_dict(again) == config_to_dict(cfg)

    def test_hash_stable_and_sensitive(self):
        a = parse_config({"run": {"seed": 1}})
        b = parse_config({"run": {"seed": 1}})
        c = parse_config({"run": {"seed": 2}})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)


class TestInitialRealizations:
    @pytest.mark.parametrize("ini,e0", [
        ({"kind": "gaussian", "variance": 1.5}, 1.5),
        ({"kind": "two_point", "level": 2.0}, 4.0),
        ({"kind": "uniform", "low": -1.0, "high": 2.0}, 1.0),
    ])
    def test_energy_matches_measure(self, ini, e0):
        cfg = parse_config({"initial": ini})
        assert initial_energy(cfg) == pytest.approx(e0, rel=1e-5)
        assert initial_measure(cfg).moment(2) == pytest.approx(e0, rel=1e-4)

    def test_samples_match_energy(self):
        cfg = parse_config({"initial": {"kind": "two_point", "level": 2.0}})
        rng = np.random.default_rng(0)
        s = sample_initial(cfg, 5000, rng)
        assert np.mean(s ** 2) == pytest.approx(4.0, abs=1e-12)

    def test_file_kind(self, tmp_path):
        path = tmp_path / "vals.csv"
        path.write_text("v\n1.0\n-1.0\n3.0\n")
        cfg = parse_config({"initial": {"kind": "file", "path": str(path)}})
        assert initial_energy(cfg) == pytest.approx(11.0 / 3.0)
        m = initial_measure(cfg)
        assert m.mass == pytest.approx(1.0)
        rng = np.random.default_rng(1)
        assert set(sample_initial(cfg, 100, rng)) <= {1.0, -1.0, 3.0}
