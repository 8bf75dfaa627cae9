"""Accuracy evaluation: clean, on-the-fly blur conditions, severity buckets.

Blurred conditions degrade each test image deterministically from a
fixed evaluation seed (per-image substream), after resize/center-crop
so kernel support is comparable across images. Decisions are argmax
over the two logits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .blur import (
    FAMILY_PARAM_MAX,
    convolve,
    parametric_kernel,
    radial_blur,
    rasterize_psf,
    straight_trajectory,
)
from .data import load_image, load_manifest, preprocess, resolve_path
from .models import FrozenEncoder, HeadStack
from .training import load_heads


class EvaluationError(ValueError):
    pass


SEVERITY_BUCKETS = (
    ("severity:[0.000,0.333)", 0.0, 1.0 / 3.0),
    ("severity:[0.333,0.667)", 1.0 / 3.0, 2.0 / 3.0),
    ("severity:[0.667,1.000]", 2.0 / 3.0, 1.0 + 1e-12),
)


def severity_bucket(b: float) -> str:
    if not 0.0 <= b <= 1.0:
        raise EvaluationError(f"severity {b} outside [0, 1]")
    for name, lo, hi in SEVERITY_BUCKETS:
        if lo <= b < hi:
            return name
    return SEVERITY_BUCKETS[-1][0]


@dataclass(frozen=True)
class EvalReport:
    """Accuracy summary for one evaluation condition."""

    condition: str
    overall_accuracy: float
    per_condition: dict[str, tuple[float, int]]
    per_class: dict[str, float]
    config_fingerprint: str = ""
    n_total: int = 0

    def __post_init__(self):
        for name, (acc, n) in self.per_condition.items():
            if not 0.0 <= acc <= 1.0:
                raise EvaluationError(f"accuracy for {name!r} outside [0, 1]: {acc}")
            if n < 0:
                raise EvaluationError(f"negative count for {name!r}")
        if not 0.0 <= self.overall_accuracy <= 1.0:
            raise EvaluationError("overall accuracy outside [0, 1]")
        total = sum(n for _, n in self.per_condition.values())
        if self.n_total and total != self.n_total:
            raise EvaluationError(
                f"per-condition counts sum to {total}, expected {self.n_total}"
            )
        if total:
            weighted = sum(acc * n for acc, n in self.per_condition.values()) / total
            if abs(weighted - self.overall_accuracy) > 1e-9:
                raise EvaluationError(
                    "overall accuracy inconsistent with per-condition breakdown"
                )

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "overall_accuracy": self.overall_accuracy,
            "per_condition": {
                k: {"accuracy": acc, "n": n} for k, (acc, n) in self.per_condition.items()
            },
            "per_class": dict(self.per_class),
            "config_fingerprint": self.config_fingerprint,
            "n_total": self.n_total,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            condition=data["condition"],
            overall_accuracy=data["overall_accuracy"],
            per_condition={
                k: (v["accuracy"], v["n"]) for k, v in data["per_condition"].items()
            },
            per_class=dict(data["per_class"]),
            config_fingerprint=data.get("config_fingerprint", ""),
            n_total=data.get("n_total", 0),
        )


def parse_condition(spec: str) -> tuple[str, Optional[str], Optional[float]]:
    """'clean' or 'blur:<family>:<param>' -> (kind, family, param)."""
    if spec == "clean":
        return ("clean", None, None)
    parts = spec.split(":")
    if len(parts) == 3 and parts[0] == "blur":
        family, param = parts[1], float(parts[2])
        if family not in FAMILY_PARAM_MAX:
            raise EvaluationError(f"unknown blur family {family!r}")
        if param < 0:
            raise EvaluationError(f"blur parameter must be >= 0, got {param}")
        return ("blur", family, param)
    raise EvaluationError(f"unknown condition {spec!r} (want 'clean' or 'blur:family:param')")


def condition_name(family: Optional[str], param: Optional[float]) -> str:
    if family is None:
        return "clean"
    return f"blur:{family}:{param:g}"


def _eval_kernel_size(family: str, param: float) -> int:
    if family == "motion_psf":
        half = int(math.ceil(param / 2.0)) + 2
    elif family == "gaussian":
        half = int(math.ceil(3.0 * param))
    elif family == "box":
        half = int(math.ceil(param / 2.0)) + 1
    elif family == "bokeh":
        half = int(math.ceil(param)) + 1
    elif family == "defocus":
        half = int(math.ceil(2.0 * param)) + 1
    else:
        raise EvaluationError(f"no kernel-size rule for family {family!r}")
    return 2 * max(1, half) + 1

def apply_eval_blur(
    image: np.ndarray, family: str, param: float, rng: np.random.Generator
) -> np.ndarray:
    """Degrade one evaluation image; param == 0 is an exact no-op.

    motion_psf uses a straight path of exactly ``param`` pixels with an
    rng-drawn direction, so the blur magnitude is identical across
    images while the orientation varies.
    """
    if param == 0:
        return np.asarray(image, dtype=np.float32)
    if family == "radial":
        return radial_blur(image, param)
    if family == "motion_psf":
        traj = straight_trajectory(param, direction=float(rng.uniform(0.0, np.pi)))
        kernel = rasterize_psf(
            traj, _eval_kernel_size(family, param), l_max=FAMILY_PARAM_MAX[family]
        )
    else:
        kernel = parametric_kernel(family, param, _eval_kernel_size(family, param))
    return convolve(image, kernel)


def _resolve_heads(checkpoint) -> tuple[HeadStack, dict]:
    if isinstance(checkpoint, HeadStack):
        return checkpoint, {}
    return load_heads(checkpoint)


def evaluate(
    checkpoint: Union[HeadStack, str, Path],
    manifest_path,
    condition: str,
    encoder: FrozenEncoder,
    eval_seed: int = 2024,
    batch_size: int = 32,
    image_size: int = 224,
) -> EvalReport:
    """Score a head checkpoint on a manifest under one condition.

    Severity buckets come from the manifest's own annotations when
    present, otherwise from the applied condition (param / family max);
    the buckets partition the evaluated samples, so the bucket
    accuracies recombine exactly to the overall number.
    """
    heads, meta = _resolve_heads(checkpoint)
    if meta.get("encoder_id") and meta["encoder_id"] != encoder.config.encoder_id:
        raise EvaluationError(
            f"checkpoint expects encoder {meta['encoder_id']!r}, "
            f"got {encoder.config.encoder_id!r}"
        )
    kind, family, param = parse_condition(condition)
    entries = load_manifest(manifest_path)
    if not entries:
        raise EvaluationError(f"empty manifest: {manifest_path}")

    cond_severity = 0.0
    if kind == "blur":
        cond_severity = min(1.0, param / FAMILY_PARAM_MAX[family])

    heads.eval()
    bucket_hits: dict[str, list[int]] = {}
    class_hits: dict[str, list[int]] = {"real": [], "fake": []}
    n_correct = 0
    for start in range(0, len(entries), batch_size):
        chunk = entries[start : start + batch_size]
        images, labels = [], []
        for offset, entry in enumerate(chunk):
            idx = start + offset
            img = load_image(resolve_path(manifest_path, entry))
            img = preprocess(img, image_size, "eval_centercrop")
            if kind == "blur":
                img = apply_eval_blur(img, family, param, np.random.default_rng([eval_seed, idx]))
            images.append(img)
            labels.append(entry.label_index)
        with torch.no_grad():
            _, logits = heads.project_and_classify(encoder.encode(np.stack(images)).pooled)
        preds = logits.argmax(dim=1).tolist()
        for entry, pred, label in zip(chunk, preds, labels):
            hit = int(pred == label)
            n_correct += hit
            b = entry.severity_b if entry.severity_b is not None else cond_severity
            bucket_hits.setdefault(severity_bucket(b), []).append(hit)
            class_hits[entry.label].append(hit)

    n_total = len(entries)
    per_condition = {
        name: (float(np.mean(hits)), len(hits)) for name, hits in sorted(bucket_hits.items())
    }
    per_class = {
        label: float(np.mean(hits)) for label, hits in class_hits.items() if hits
    }
    return EvalReport(
        condition=condition,
        overall_accuracy=n_correct / n_total,
        per_condition=per_condition,
        per_class=per_class,
        config_fingerprint=meta.get("fingerprint", ""),
        n_total=n_total,
    )


def blur_sweep(
    checkpoint: Union[HeadStack, str, Path],
    manifest_path,
    families: list[str],
    params: list[float],
    encoder: FrozenEncoder,
    eval_seed: int = 2024,
    out_csv=None,
    image_size: int = 224,
) -> list[EvalReport]:
    """Evaluate every (family, param) cell; optionally write a CSV grid.

    The CSV has one row per family and one accuracy column per param.
    param 0 in the grid is the identity condition for every family.
    """
    if not families or not params:
        raise EvaluationError("families and params must be nonempty")
    heads, _ = _resolve_heads(checkpoint)
    reports = []
    for family in families:
        for param in params:
            reports.append(
                evaluate(
                    heads if isinstance(checkpoint, HeadStack) else checkpoint,
                    manifest_path,
                    condition_name(family, param),
                    encoder,
                    eval_seed=eval_seed,
                    image_size=image_size,
                )
            )
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["family"] + [f"{p:g}" for p in params])
            it = iter(reports)
            for family in families:
                writer.writerow(
                    [family] + [f"{next(it).overall_accuracy:.6f}" for _ in params]
                )
    return reports


def compare_reports(a: EvalReport, b: EvalReport) -> dict:
    """Per-condition accuracy differences (a minus b) with sample counts."""
    if set(a.per_condition) != set(b.per_condition):
        raise EvaluationError(
            f"condition grids differ: {sorted(a.per_condition)} vs {sorted(b.per_condition)}"
        )
    per_condition = {
        key: {
            "delta": a.per_condition[key][0] - b.per_condition[key][0],
            "n_a": a.per_condition[key][1],
            "n_b": b.per_condition[key][1],
        }
        for key in sorted(a.per_condition)
    }
    per_class = {
        key: a.per_class[key] - b.per_class[key]
        for key in sorted(set(a.per_class) & set(b.per_class))
    }
    return {
        "overall_delta": a.overall_accuracy - b.overall_accuracy,
        "per_condition": per_condition,
        "per_class": per_class,
        "condition_a": a.condition,
        "condition_b": b.condition,
    }
