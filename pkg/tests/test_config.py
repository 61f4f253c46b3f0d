import pytest
import yaml

from sebays.config import ConfigError, RunConfig, load_config, parse_config, validate
from sebays.schedule import PhasePlan


def _write(tmp_path, raw, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def test_defaults_follow_the_reference_timeline():
    cfg = RunConfig()
    assert cfg.plan() == PhasePlan()
    t = cfg.trainer_config()
    assert (t.rho, t.sigma_reset, t.init_sigma, t.init_gamma, t.batch_size) == (3.0, 1e-6, 1e-4, 0.99, 128)


def test_round_trip_is_identical(tmp_path):
    cfg = load_config(_write(tmp_path, {"seed": 4, "trainer": {"M": 5, "schedule": "cosine"},
                                        "eval": {"mc": [1, 5], "ood": {"n": 10}}}))
    again = load_config(_write(tmp_path, yaml.safe_load(cfg.dump()), "again.yaml"))
    assert again == cfg
    assert again.dump() == cfg.dump()


def test_example_config_loads():
    from conftest import CONFIGS

    cfg = load_config(CONFIGS / "two_moons.yaml")
    assert cfg.trainer.M == 3 and cfg.eval.mc == [1, 10]


@pytest.mark.parametrize("raw, key", [
    ({"sede": 1}, "sede"),
    ({"trainer": {"rhoo": 2}}, "trainer.rhoo"),
    ({"eval": {"ood": {"centres": []}}}, "eval.ood.centres"),
])
def test_unknown_keys_are_named(tmp_path, raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(_write(tmp_path, raw))


@pytest.mark.parametrize("raw, key", [
    ({"seed": -1}, "seed"),
    ({"trainer": {"M": "three"}}, "trainer.M"),
    ({"trainer": {"t_ex": 7}}, "trainer"),
    ({"data": {"source": "mnist"}}, "data.source"),
    ({"eval": {"mc": [0]}}, "eval.mc"),
    ({"eval": {"corruptions": [{"kind": "fog", "severity": 1}]}}, "eval.corruptions"),
    ({"network": {"temperature": 0}}, "network.temperature"),
])
def test_illegal_values_are_named(tmp_path, raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        load_config(_write(tmp_path, raw))


def test_missing_file_names_the_key(tmp_path):
    raw = {"data": {"source": "csv", "train_csv": "train.csv", "test_csv": "test.csv"}}
    (tmp_path / "train.csv").write_text("x,label\n0,0\n")
    with pytest.raises(ConfigError, match="data.test_csv"):
        load_config(_write(tmp_path, raw))
    with pytest.raises(ConfigError, match="data.train_images"):
        load_config(_write(tmp_path, {"data": {"source": "idx"}}))


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "train.csv").write_text("x,label\n0,0\n")
    (tmp_path / "test.csv").write_text("x,label\n0,0\n")
    raw = {"data": {"source": "csv", "train_csv": "train.csv", "test_csv": "test.csv"}}
    cfg = load_config(_write(tmp_path, raw))
    assert cfg.data.train_csv == str(tmp_path / "train.csv")


def test_overrides(tmp_path):
    path = _write(tmp_path, {"trainer": {"M": 2}})
    cfg = load_config(path, ["trainer.M=5", "eval.mc=[1, 5]", "seed=3"])
    assert (cfg.trainer.M, cfg.eval.mc, cfg.seed) == (5, [1, 5], 3)
    for bad in ("trainer.M", "seed.x=1"):
        with pytest.raises(ConfigError):
            load_config(path, [bad])


def test_invalid_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("trainer: [unclosed")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(path)


def test_validate_accepts_parsed_defaults():
    assert validate(parse_config({})) == RunConfig()
