"""Training loop contracts and the CLI pipeline end to end."""

import json
from pathlib import Path

import numpy as np
import pytest

from paratrans import train as train_mod
from paratrans.checkpoint import CheckpointError, load_checkpoint
from paratrans.cli import main
from paratrans.config import load_config
from paratrans.corpus import build_vocab, gen_synthetic_corpus
from paratrans.train import TrainingAborted, run_training, teacher_schedule

TINY_OVERRIDES = {
    "data.task": "copy",
    "data.vocab_size": "12",
    "data.len_min": "2",
    "data.len_max": "5",
    "data.train_size": "60",
    "data.dev_size": "16",
    "data.test_size": "16",
    "data.max_tokens": "128",
    "model.d_model": "16",
    "model.d_hidden": "32",
    "model.n_layer": "1",
    "model.n_head": "2",
    "model.max_len": "24",
    "model.label_smoothing": "0.0",
    "schedule.steps_at": "10",
    "schedule.steps_sat": "20",
    "schedule.steps_nat": "10",
    "schedule.window": "1",
    "schedule.pacing": "linear",
    "optim.warmup_steps": "20",
    "train.log_interval": "5",
    "train.ckpt_interval": "20",
    "teacher.steps": "15",
    "eval.repeats": "3",
    "prelim.steps": "12",
}


def tiny_cfg(tmp_path, **extra):
    overrides = dict(TINY_OVERRIDES)
    overrides["out_dir"] = str(tmp_path / "run")
    overrides.update({k: str(v) for k, v in extra.items()})
    return load_config(None, overrides)


def make_data(cfg):
    train = gen_synthetic_corpus(
        cfg["data.task"], cfg["data.train_size"], cfg["data.vocab_size"],
        (cfg["data.len_min"], cfg["data.len_max"]), seed=cfg.seed, split="train",
    )
    dev = gen_synthetic_corpus(
        cfg["data.task"], cfg["data.dev_size"], cfg["data.vocab_size"],
        (cfg["data.len_min"], cfg["data.len_max"]), seed=cfg.seed, split="dev",
    )
    return train, dev, build_vocab(train)


def read_metrics(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_metrics_one_record_per_interval(tmp_path):
    cfg = tiny_cfg(tmp_path)
    train, dev, vocab = make_data(cfg)
    result = run_training(cfg, vocab, train, dev)
    records = read_metrics(result.metrics_path)
    assert [r["step"] for r in records] == list(range(0, 40, 5))
    assert all(set(r) == {"step", "phase", "k", "loss", "lr"} for r in records)
    phases = [r["phase"] for r in records]
    assert phases == ["AT", "AT", "SAT", "SAT", "SAT", "SAT", "NAT", "NAT"]


def test_logged_k_follows_linear_pacing(tmp_path):
    # w=1, linear pacing, S=20: k = 2,2 | 4,4 ... in 5-step stages
    cfg = tiny_cfg(tmp_path, **{"train.log_interval": "1"})
    train, dev, vocab = make_data(cfg)
    result = run_training(cfg, vocab, train, dev)
    records = read_metrics(result.metrics_path)
    sat = [r["k"] for r in records if r["phase"] == "SAT"]
    assert sat == ["2"] * 5 + ["4"] * 5 + ["8"] * 5 + ["16"] * 5
    assert all(r["k"] == "1" for r in records if r["phase"] == "AT")
    assert all(r["k"] == "N" for r in records if r["phase"] == "NAT")


def test_training_is_bitwise_deterministic(tmp_path):
    cfg_a = tiny_cfg(tmp_path / "a")
    cfg_b = tiny_cfg(tmp_path / "b")
    train, dev, vocab = make_data(cfg_a)
    ra = run_training(cfg_a, vocab, train, dev)
    rb = run_training(cfg_b, vocab, train, dev)
    assert Path(ra.metrics_path).read_text() == Path(rb.metrics_path).read_text()
    a_bytes = Path(ra.checkpoint_path).read_bytes()
    b_bytes = Path(rb.checkpoint_path).read_bytes()
    # out_dir is not part of the checkpoint, so the bytes must agree
    assert a_bytes == b_bytes


def test_resume_reproduces_trajectory(tmp_path):
    cfg_a = tiny_cfg(tmp_path / "a")
    cfg_b = tiny_cfg(tmp_path / "b")
    train, dev, vocab = make_data(cfg_a)
    full = run_training(cfg_a, vocab, train, dev)
    half = run_training(cfg_b, vocab, train, dev, max_steps=20)
    assert half.steps_run == 20
    resumed = run_training(cfg_b, vocab, train, dev, resume=half.checkpoint_path)
    assert resumed.steps_run == 40
    assert Path(full.metrics_path).read_text() == Path(resumed.metrics_path).read_text()
    assert Path(full.checkpoint_path).read_bytes() == Path(resumed.checkpoint_path).read_bytes()


def test_resume_refuses_config_mismatch(tmp_path):
    cfg = tiny_cfg(tmp_path)
    train, dev, vocab = make_data(cfg)
    half = run_training(cfg, vocab, train, dev, max_steps=10)
    other = tiny_cfg(tmp_path, seed=999)
    with pytest.raises(CheckpointError, match="refused"):
        run_training(other, vocab, train, dev, resume=half.checkpoint_path)


def test_nan_aborts_and_keeps_last_checkpoint(tmp_path, monkeypatch):
    cfg = tiny_cfg(tmp_path, **{"train.ckpt_interval": "4"})
    train, dev, vocab = make_data(cfg)
    real = train_mod.batch_nll
    calls = {"n": 0}

    def exploding(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 6:
            raise FloatingPointError("synthetic overflow")
        return real(*args, **kwargs)

    monkeypatch.setattr(train_mod, "batch_nll", exploding)
    with pytest.raises(TrainingAborted, match="step 6"):
        run_training(cfg, vocab, train, dev)
    ckpt = cfg.out_dir / "model.ckpt"
    assert ckpt.exists()
    _, _, header = load_checkpoint(ckpt)
    assert header["global_step"] == 4  # last interval before the failure


def test_early_stop_on_dev_plateau(tmp_path):
    cfg = tiny_cfg(
        tmp_path,
        **{
            "schedule.steps_at": "5",
            "schedule.steps_sat": "5",
            "schedule.steps_nat": "30",
            "train.nat_patience": "1",
            "train.eval_interval": "5",
            "optim.lr_scale": "0.0",  # frozen model -> dev loss can never improve
        },
    )
    train, dev, vocab = make_data(cfg)
    result = run_training(cfg, vocab, train, dev)
    assert result.stopped_early
    assert result.steps_run == 20  # second plateaued eval, steps 14 and 19


def test_teacher_schedule_is_pure_at(tmp_path):
    cfg = tiny_cfg(tmp_path)
    sched = teacher_schedule(cfg)
    assert sched.total_steps == 15
    from paratrans.curriculum import phase_of

    assert all(phase_of(sched, s).tag == "AT" for s in range(15))


# ---------------------------------------------------------------------------
# CLI pipeline
# ---------------------------------------------------------------------------


@pytest.fixture()
def cli_env(tmp_path):
    cfg_path = tmp_path / "exp.cfg"
    lines = [f"{k} = {v}" for k, v in TINY_OVERRIDES.items()]
    lines.append(f"out_dir = {tmp_path / 'run'}")
    cfg_path.write_text("\n".join(lines) + "\n")
    return tmp_path, cfg_path


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_cli_pipeline(cli_env, capsys):
    tmp_path, cfg_path = cli_env
    run_dir = tmp_path / "run"

    assert run_cli("gen-data", "--config", cfg_path) == 0
    prefix = run_dir / "data" / "copy"
    first = {p.name: p.read_bytes() for p in prefix.parent.iterdir()}
    assert run_cli("gen-data", "--config", cfg_path) == 0
    second = {p.name: p.read_bytes() for p in prefix.parent.iterdir()}
    assert first == second  # byte-identical regeneration

    # train refuses before distillation when the schedule has a first phase
    assert run_cli("train", "--config", cfg_path) == 1
    assert "distill" in capsys.readouterr().err

    assert run_cli("train-teacher", "--config", cfg_path) == 0
    assert (run_dir / "teacher.ckpt").exists()
    assert (run_dir / "teacher_training.png").exists()

    assert run_cli("distill", "--config", cfg_path) == 0
    assert (prefix.parent / "copy.train.distilled.src").exists()

    assert run_cli("train", "--config", cfg_path) == 0
    assert (run_dir / "model.ckpt").exists()
    assert (run_dir / "model_training.png").exists()
    capsys.readouterr()

    out_file = tmp_path / "hyp.txt"
    assert (
        run_cli(
            "translate", "--config", cfg_path, "--ckpt", run_dir / "model.ckpt",
            "--input", f"{prefix}.test.src", "--output", out_file, "--k", "N",
        )
        == 0
    )
    assert len(out_file.read_text().splitlines()) == 16

    assert (
        run_cli(
            "evaluate", "--config", cfg_path, "--ckpt", run_dir / "model.ckpt",
            "--teacher", run_dir / "teacher.ckpt", "--rescore",
            "--set", "decode.b=2", "--no-latency",
        )
        == 0
    )
    eval_out = json.loads((run_dir / "eval.json").read_text())
    assert eval_out["candidates_per_sentence"] == 5
    assert 0.0 <= eval_out["bleu"]["bleu"] <= 100.0

    assert (
        run_cli(
            "bench-latency", "--config", cfg_path, "--ckpt", run_dir / "model.ckpt",
            "--ks", "1,N", "--n-sentences", "4", "--length", "8", "--repeats", "3",
        )
        == 0
    )
    assert (run_dir / "latency.json").exists()
    assert (run_dir / "latency.png").exists()


def test_cli_schedule_dump_boundaries(cli_env, capsys):
    tmp_path, cfg_path = cli_env
    assert run_cli("schedule-dump", "--config", cfg_path, "--pacing", "exponential", "--sat-steps", "1000") == 0
    out = capsys.readouterr().out
    assert "0/428/678/855" in out
    assert (tmp_path / "run" / "schedule.tsv").exists()
    assert (tmp_path / "run" / "schedule.png").exists()


def test_cli_prelim_study(cli_env, capsys):
    tmp_path, cfg_path = cli_env
    assert run_cli("gen-data", "--config", cfg_path) == 0
    assert (
        run_cli("prelim-study", "--config", cfg_path, "--train-ks", "1,N", "--test-ks", "1,N", "--steps", "12")
        == 0
    )
    run_dir = tmp_path / "run"
    assert (run_dir / "prelim.tsv").exists()
    assert (run_dir / "prelim.json").exists()
    assert (run_dir / "prelim.png").exists()
    tsv = (run_dir / "prelim.tsv").read_text()
    assert "/" in tsv  # untested upper cell (train N, test 1)


def test_cli_evaluate_refuses_vocab_mismatch(tmp_path, capsys):
    overrides = dict(TINY_OVERRIDES)
    overrides["out_dir"] = str(tmp_path / "run")
    cfg_a = tmp_path / "a.cfg"
    cfg_a.write_text("\n".join(f"{k} = {v}" for k, v in overrides.items()) + "\n")
    assert run_cli("gen-data", "--config", cfg_a) == 0
    assert run_cli("train-teacher", "--config", cfg_a) == 0
    # regenerate the data with a different vocabulary, then evaluate the old checkpoint
    assert run_cli("gen-data", "--config", cfg_a, "--vocab-size", "9") == 0
    code = run_cli(
        "evaluate", "--config", cfg_a, "--set", "data.vocab_size=9",
        "--ckpt", tmp_path / "run" / "teacher.ckpt", "--no-latency",
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "vocab mismatch" in err and "config" in err


def test_cli_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2


def test_cli_unknown_config_key_fails(cli_env, capsys):
    _, cfg_path = cli_env
    assert run_cli("schedule-dump", "--config", cfg_path, "--set", "bogus.key=1") == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1
