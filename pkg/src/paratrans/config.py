"""Experiment configuration: one flat key = value file with a typed schema.

Unknown keys are rejected (typo protection), command-line overrides win over
file values, and the PARATRANS_OUT environment variable overrides out_dir.
The full resolved configuration hashes to a stable fingerprint used by
checkpoints to refuse mismatched resumes.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Optional

from .curriculum import PACING_FUNCTIONS, CurriculumSchedule
from .decode import DecodeConfig
from .model import ModelConfig, format_k, parse_k
from .optim import OptimizerState

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "DEFAULTS"]

OUT_DIR_ENV = "PARATRANS_OUT"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# key -> (type constructor, default)
DEFAULTS: dict[str, tuple] = {
    "seed": (int, 1),
    "out_dir": (str, "runs/exp"),
    "data.task": (str, "mapped-swap"),
    "data.vocab_size": (int, 64),
    "data.len_min": (int, 4),
    "data.len_max": (int, 16),
    "data.train_size": (int, 10000),
    "data.dev_size": (int, 500),
    "data.test_size": (int, 500),
    "data.prefix": (str, ""),
    "data.max_tokens": (int, 512),
    "model.d_model": (int, 64),
    "model.d_hidden": (int, 128),
    "model.n_layer": (int, 2),
    "model.n_head": (int, 4),
    "model.max_len": (int, 64),
    "model.dropout": (float, 0.0),
    "model.label_smoothing": (float, 0.1),
    "schedule.steps_at": (int, 200),
    "schedule.steps_sat": (int, 600),
    "schedule.steps_nat": (int, 800),
    "schedule.pacing": (str, "exponential"),
    "schedule.window": (int, 2),
    "schedule.ladder": (str, "1,2,4,8,16,N"),
    "optim.warmup_steps": (int, 400),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.98),
    "optim.epsilon": (float, 1e-9),
    "optim.lr_scale": (float, 1.0),
    "decode.k": (str, "N"),
    "decode.b": (int, 0),
    "decode.rescore": (_bool, False),
    "train.log_interval": (int, 10),
    "train.ckpt_interval": (int, 400),
    "train.nat_patience": (int, 0),
    "train.eval_interval": (int, 100),
    "teacher.steps": (int, 800),
    "eval.repeats": (int, 3),
    "prelim.steps": (int, 800),
}


class ExperimentConfig:
    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    # -- canonical form -----------------------------------------------------

    def lines(self) -> list[str]:
        out = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{key} = {v}")
        return out

    def hash(self) -> str:
        """Fingerprint of the experiment; where outputs land (out_dir) is
        incidental and excluded, so relocated reruns still match."""
        lines = [l for l in self.lines() if not l.startswith("out_dir ")]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")

    # -- typed builders -----------------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def data_prefix(self) -> Path:
        if self.values["data.prefix"]:
            return Path(self.values["data.prefix"])
        return self.out_dir / "data" / self.values["data.task"]

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            d_model=self.values["model.d_model"],
            d_hidden=self.values["model.d_hidden"],
            n_layer=self.values["model.n_layer"],
            n_head=self.values["model.n_head"],
            vocab_size=vocab_size,
            max_len=self.values["model.max_len"],
            dropout=self.values["model.dropout"],
            label_smoothing=self.values["model.label_smoothing"],
        )

    def schedule(self, steps_at=None, steps_sat=None, steps_nat=None, window=None) -> CurriculumSchedule:
        ladder = tuple(parse_k(part) for part in self.values["schedule.ladder"].split(","))
        return CurriculumSchedule(
            steps_at=self.values["schedule.steps_at"] if steps_at is None else steps_at,
            steps_sat=self.values["schedule.steps_sat"] if steps_sat is None else steps_sat,
            steps_nat=self.values["schedule.steps_nat"] if steps_nat is None else steps_nat,
            pacing=self.values["schedule.pacing"],
            window=self.values["schedule.window"] if window is None else window,
            ladder=ladder,
        )

    def direct_transfer_schedule(self) -> CurriculumSchedule:
        """Baseline that omits the middle phase: first phase unchanged, its
        task trained alone (window 1), and the middle budget folded into the
        final phase so total steps match the full curriculum."""
        return self.schedule(
            steps_sat=0,
            steps_nat=self.values["schedule.steps_nat"] + self.values["schedule.steps_sat"],
            window=1,
        )

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            k=parse_k(self.values["decode.k"]),
            b=self.values["decode.b"],
            rescore=self.values["decode.rescore"],
            max_len=self.values["model.max_len"],
        )

    def optimizer_state(self) -> OptimizerState:
        return OptimizerState(
            d_model=self.values["model.d_model"],
            warmup_steps=self.values["optim.warmup_steps"],
            beta1=self.values["optim.beta1"],
            beta2=self.values["optim.beta2"],
            epsilon=self.values["optim.epsilon"],
            lr_scale=self.values["optim.lr_scale"],
        )

    def validate(self) -> None:
        if self.values["schedule.pacing"] not in PACING_FUNCTIONS:
            raise ConfigError(f"schedule.pacing must be one of {PACING_FUNCTIONS}")
        if self.values["data.len_min"] < 1 or self.values["data.len_max"] < self.values["data.len_min"]:
            raise ConfigError("data.len_min/len_max form an invalid range")
        if self.values["data.len_max"] + 1 + self.values["decode.b"] > self.values["model.max_len"]:
            raise ConfigError("model.max_len too small for data.len_max plus decode.b")
        try:
            parse_k(self.values["decode.k"])
            self.schedule()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def child_seed(self, *scope) -> int:
        """Stable derived seed for a named purpose, e.g. ('task', step)."""
        text = ":".join(str(s) for s in (self.seed,) + scope)
        return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _parse_line(line: str, where: str) -> Optional[tuple[str, str]]:
    stripped = line.split("#", 1)[0].strip()
    if not stripped:
        return None
    if "=" not in stripped:
        raise ConfigError(f"{where}: expected 'key = value', got {line.rstrip()!r}")
    key, value = stripped.split("=", 1)
    return key.strip(), value.strip()


def load_config(
    path: Optional[str | Path] = None,
    overrides: Optional[dict[str, str]] = None,
) -> ExperimentConfig:
    """Defaults <- file <- overrides <- PARATRANS_OUT, with unknown keys rejected."""
    values = {key: default for key, (_, default) in DEFAULTS.items()}

    def apply(key: str, raw, where: str):
        if key not in DEFAULTS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        ctor = DEFAULTS[key][0]
        try:
            values[key] = ctor(raw) if not isinstance(raw, bool) else raw
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from exc

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            parsed = _parse_line(line, f"{path}:{lineno}")
            if parsed:
                apply(parsed[0], parsed[1], f"{path}:{lineno}")
    for key, raw in (overrides or {}).items():
        apply(key, raw, "override")
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out:
        values["out_dir"] = env_out

    cfg = ExperimentConfig(values)
    cfg.validate()
    return cfg
