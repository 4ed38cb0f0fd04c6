import pytest

from compvqa.config import RUN_KEYS, SYNTH_KEYS, Config, run_config, synth_config_from, validate_run
from compvqa.errors import ConfigError
from compvqa.synthetic import SynthConfig


def test_defaults_and_round_trip(tmp_path):
    cfg = run_config({"c_dim": "32", "k_dim": 32, "lambda": "0.25", "head_mode": "sum"})
    path = tmp_path / "run.cfg"
    cfg.save(path)
    again = Config.load(RUN_KEYS, path)
    assert again == cfg and again["lambda"] == 0.25 and again["c_dim"] == 32
    assert run_config()["epochs"] == 15 and run_config()["batch_size"] == 128


def test_comments_and_blank_lines():
    cfg = Config.parse(RUN_KEYS, "# header\n\nseed = 7   # trailing\n")
    assert cfg["seed"] == 7


@pytest.mark.parametrize("text,match", [
    ("colour=red\n", "unknown config key"),
    ("seed\n", ":1: expected key=value"),
    ("c_dim=0\n", "c_dim"),
    ("head_mode=fancy\n", "head_mode must be one of"),
    ("lambda=-0.5\n", "lambda"),
])
def test_bad_lines(text, match):
    with pytest.raises(ConfigError, match=match):
        Config.parse(RUN_KEYS, text)


def test_update_ignores_none():
    cfg = run_config().update({"seed": None, "shots": "5"})
    assert cfg["seed"] == 0 and cfg["shots"] == 5


def test_c_dim_must_equal_k_dim():
    with pytest.raises(ConfigError, match="must equal k_dim"):
        validate_run(run_config({"c_dim": 16, "k_dim": 8}))


def test_required_path_missing(tmp_path):
    with pytest.raises(ConfigError, match="data_dir is required"):
        validate_run(run_config(), need_paths=("data_dir",))
    with pytest.raises(ConfigError, match="does not exist"):
        validate_run(run_config({"data_dir": str(tmp_path / "nope")}), need_paths=("data_dir",))


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        Config.load(RUN_KEYS, "/nonexistent/run.cfg")


def test_synth_translation():
    cfg = Config(SYNTH_KEYS, {"groups": "a:x,y;b:p,q,r", "n_base_combos": 4, "n_novel_combos": 1,
                              "shots": "1;5", "base_combos": "x p;y q"})
    sc = synth_config_from(cfg)
    assert isinstance(sc, SynthConfig)
    assert sc.groups == {"a": ["x", "y"], "b": ["p", "q", "r"]}
    assert sc.shots == (1, 5) and sc.base_combos == [["x", "p"], ["y", "q"]] and sc.novel_combos == []
    with pytest.raises(ConfigError):
        synth_config_from(Config(SYNTH_KEYS, {"groups": "nocolon"}))
