"""Config file parsing, overrides, env var, and hashing."""

import pytest

from paratrans.config import ConfigError, load_config
from paratrans.model import K_N


def test_defaults_load_without_file():
    cfg = load_config()
    assert cfg["model.d_model"] == 64
    assert cfg["schedule.pacing"] == "exponential"
    assert cfg.schedule().ladder[-1] is K_N


def test_file_values_and_comments(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        """
# experiment
seed = 9
model.d_model = 32   # small
schedule.pacing = linear
decode.rescore = true
""".strip()
    )
    cfg = load_config(path)
    assert cfg.seed == 9
    assert cfg["model.d_model"] == 32
    assert cfg["decode.rescore"] is True


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("model.dmodel = 32\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(path)
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(None, {"nope": "1"})


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("seed = 9\n")
    cfg = load_config(path, {"seed": "11"})
    assert cfg.seed == 11


def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PARATRANS_OUT", str(tmp_path / "elsewhere"))
    cfg = load_config()
    assert str(cfg.out_dir) == str(tmp_path / "elsewhere")


def test_bad_value_reports_key(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("model.d_model = many\n")
    with pytest.raises(ConfigError, match="model.d_model"):
        load_config(path)


def test_missing_file_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_hash_tracks_values():
    a = load_config(None, {"seed": "1"})
    b = load_config(None, {"seed": "2"})
    assert a.hash() != b.hash()
    assert a.hash() == load_config(None, {"seed": "1"}).hash()


def test_validation_catches_inconsistency():
    with pytest.raises(ConfigError, match="max_len"):
        load_config(None, {"data.len_max": "60", "model.max_len": "32"})
    with pytest.raises(ConfigError):
        load_config(None, {"schedule.ladder": "1,4,2,N"})


def test_child_seeds_are_stable_and_distinct():
    cfg = load_config()
    assert cfg.child_seed("task", 3) == cfg.child_seed("task", 3)
    assert cfg.child_seed("task", 3) != cfg.child_seed("task", 4)
    assert cfg.child_seed("task", 3) != cfg.child_seed("drop", 3)
