"""Run configuration: one YAML document drives a full pipeline run.

The fingerprint is a short stable hash of the canonicalized config; it
is embedded in every checkpoint and report so a finished run can be
traced back to the exact configuration that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .models import EncoderConfig
from .training import PhaseConfig, student_defaults, teacher_defaults


class ConfigError(ValueError):
    pass


DEFAULT_SWEEP_FAMILIES = ["motion_psf", "gaussian", "defocus"]
DEFAULT_SWEEP_PARAMS: dict[str, list[float]] = {
    "motion_psf": [0.0, 5.0, 10.0, 15.0],
    "gaussian": [0.0, 1.0, 2.0, 4.0],
    "defocus": [0.0, 0.5, 1.5, 2.5],
    "box": [0.0, 3.0, 7.0, 15.0],
    "bokeh": [0.0, 2.0, 4.0, 8.0],
    "radial": [0.0, 2.0, 5.0, 10.0],
}


@dataclass(frozen=True)
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    teacher: PhaseConfig = field(default_factory=teacher_defaults)
    student: PhaseConfig = field(default_factory=student_defaults)
    eval_families: tuple[str, ...] = tuple(DEFAULT_SWEEP_FAMILIES)
    eval_params: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    eval_seed: int = 2024
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if not self.eval_families:
            raise ConfigError("eval_families must be nonempty")
        if self.seed < 0 or self.eval_seed < 0:
            raise ConfigError("seeds must be >= 0")

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "teacher": self.teacher.to_dict(),
            "student": self.student.to_dict(),
            "eval_families": list(self.eval_families),
            "eval_params": list(self.eval_params),
            "eval_seed": self.eval_seed,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        kwargs = dict(data)
        if "encoder" in kwargs:
            kwargs["encoder"] = EncoderConfig.from_dict(kwargs["encoder"])
        if "teacher" in kwargs:
            kwargs["teacher"] = PhaseConfig.from_dict(kwargs["teacher"])
        if "student" in kwargs:
            kwargs["student"] = PhaseConfig.from_dict(kwargs["student"])
        if "eval_families" in kwargs:
            kwargs["eval_families"] = tuple(kwargs["eval_families"])
        if "eval_params" in kwargs:
            kwargs["eval_params"] = tuple(float(p) for p in kwargs["eval_params"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config fields: {exc}") from exc

    def fingerprint(self) -> str:
        """First 16 hex chars of the sha256 of the canonical JSON form.

        Seeds and the output directory are runtime inputs (every CLI entry
        point can override them), so they are excluded: the fingerprint
        identifies the experiment design, not one particular run of it.
        """
        payload = self.to_dict()
        for runtime_key in ("seed", "eval_seed", "out_dir"):
            payload.pop(runtime_key, None)
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def save_config(config: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
    return path


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    return RunConfig.from_dict(data)
