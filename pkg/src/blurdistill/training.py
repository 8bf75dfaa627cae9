"""Two-phase training: teacher on sharp views, student under degradation.

Determinism contract: a run is a pure function of (manifest, config,
seed). Per-sample augmentation randomness comes from
``default_rng([seed, epoch, index])`` streams, torch-side randomness
(dropout) from a single seeded global generator, and batches are
processed in a fixed order — so reruns are bit-identical and resuming
from an epoch checkpoint replays the exact remaining stream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
import torch

from .blur import BlurPolicy, PairedSample, jpeg_degrade, synthesize_pair
from .checkpoints import (
    arrays_to_state_dict,
    load_checkpoint,
    save_checkpoint,
    state_dict_to_arrays,
)
from .data import DataError, load_image, load_manifest, preprocess, resolve_path
from .losses import BatchViews, LossWeights, focal_loss, total_loss
from .models import FrozenEncoder, HeadConfig, HeadStack, build_heads


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentPolicy:
    """Photometric/geometric augmentation plus the student-phase blur."""

    brightness: float = 0.1
    contrast: float = 0.1
    saturation: float = 0.1
    hue: float = 0.05
    rotation_deg: float = 5.0
    jpeg_quality: tuple[int, int] = (85, 95)
    jpeg_p: float = 0.3
    blur_policy: Optional[BlurPolicy] = None
    blur_mode: str = "none"

    def __post_init__(self):
        if self.blur_mode not in ("none", "global", "ccmba", "mixed"):
            raise TrainingError(f"unknown blur_mode {self.blur_mode!r}")
        if not 0.0 <= self.jpeg_p <= 1.0:
            raise TrainingError("jpeg_p must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "brightness": self.brightness,
            "contrast": self.contrast,
            "saturation": self.saturation,
            "hue": self.hue,
            "rotation_deg": self.rotation_deg,
            "jpeg_quality": list(self.jpeg_quality),
            "jpeg_p": self.jpeg_p,
            "blur_policy": self.blur_policy.to_dict() if self.blur_policy else None,
            "blur_mode": self.blur_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentPolicy":
        kwargs = dict(data)
        kwargs["jpeg_quality"] = tuple(kwargs.get("jpeg_quality", (85, 95)))
        if kwargs.get("blur_policy"):
            kwargs["blur_policy"] = BlurPolicy.from_dict(kwargs["blur_policy"])
        return cls(**kwargs)


@dataclass(frozen=True)
class PhaseConfig:
    epochs: int
    base_lr: float
    weight_decay: float = 1e-4
    batch_size: int = 32
    schedule: str = "cosine"
    augmentation: AugmentPolicy = field(default_factory=AugmentPolicy)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    image_size: int = 224

    def __post_init__(self):
        if self.epochs < 0:
            raise TrainingError("epochs must be >= 0")
        if self.base_lr <= 0:
            raise TrainingError("base_lr must be > 0")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.schedule != "cosine":
            raise TrainingError(f"unsupported schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "base_lr": self.base_lr,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "schedule": self.schedule,
            "augmentation": self.augmentation.to_dict(),
            "loss_weights": self.loss_weights.to_dict(),
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhaseConfig":
        kwargs = dict(data)
        kwargs["augmentation"] = AugmentPolicy.from_dict(kwargs["augmentation"])
        kwargs["loss_weights"] = LossWeights.from_dict(kwargs["loss_weights"])
        return cls(**kwargs)


def teacher_defaults(**overrides) -> PhaseConfig:
    base = dict(epochs=4, base_lr=1e-4, weight_decay=1e-4)
    base.update(overrides)
    return PhaseConfig(**base)


def student_defaults(**overrides) -> PhaseConfig:
    base = dict(
        epochs=15,
        base_lr=5e-5,
        weight_decay=1e-4,
        augmentation=AugmentPolicy(blur_policy=BlurPolicy(), blur_mode="global"),
    )
    base.update(overrides)
    return PhaseConfig(**base)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps)); no warmup."""
    if total_steps <= 0:
        raise TrainingError("total_steps must be > 0")
    if not 0 <= step <= total_steps:
        raise TrainingError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------- augmentation


def _color_jitter(img: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    # fixed order: brightness, contrast, saturation, hue
    out = img.astype(np.float32)
    if policy.brightness > 0:
        out = out * (1.0 + rng.uniform(-policy.brightness, policy.brightness))
    if policy.contrast > 0:
        factor = 1.0 + rng.uniform(-policy.contrast, policy.contrast)
        mean = out.mean()
        out = mean + (out - mean) * factor
    if policy.saturation > 0:
        factor = 1.0 + rng.uniform(-policy.saturation, policy.saturation)
        luma = (0.299 * out[..., 0] + 0.587 * out[..., 1] + 0.114 * out[..., 2])[..., None]
        out = luma + (out - luma) * factor
    out = np.clip(out, 0.0, 1.0)
    if policy.hue > 0:
        shift = rng.uniform(-policy.hue, policy.hue) * 360.0
        hsv = cv2.cvtColor(out, cv2.COLOR_RGB2HSV)
        hsv[..., 0] = (hsv[..., 0] + shift) % 360.0
        out = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    return np.clip(out, 0.0, 1.0)


def _rotate(img: np.ndarray, max_deg: float, rng: np.random.Generator) -> np.ndarray:
    if max_deg <= 0:
        return img
    angle = float(rng.uniform(-max_deg, max_deg))
    h, w = img.shape[:2]
    matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, 1.0)
    out = cv2.warpAffine(
        img, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT
    )
    return np.clip(out, 0.0, 1.0)


def augment(image: np.ndarray, label: str, policy: AugmentPolicy, phase: str, rng: np.random.Generator):
    """Teacher phase -> augmented sharp image; student phase -> PairedSample.

    Color jitter and rotation always fire (random strength); JPEG fires
    with probability jpeg_p. Blur applies only in the student phase,
    after everything else, so the paired sharp view is the exact
    pre-blur input. Draw order is fixed for reproducibility.
    """
    if phase not in ("teacher", "student"):
        raise TrainingError(f"unknown phase {phase!r}")
    if phase == "teacher" and policy.blur_mode != "none":
        raise TrainingError("teacher phase requires blur_mode='none'")
    if phase == "student" and policy.blur_mode == "none":
        raise TrainingError("student phase requires a blur mode")
    out = _color_jitter(np.asarray(image, dtype=np.float32), policy, rng)
    out = _rotate(out, policy.rotation_deg, rng)
    if policy.jpeg_p > 0 and rng.random() < policy.jpeg_p:
        lo, hi = policy.jpeg_quality
        out = jpeg_degrade(out, int(rng.integers(lo, hi + 1)))
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    if phase == "teacher":
        return out
    blur_policy = policy.blur_policy or BlurPolicy()
    if blur_policy.mode != policy.blur_mode:
        blur_policy = replace(blur_policy, mode=policy.blur_mode)
    return synthesize_pair(out, label, blur_policy, rng)


# -------------------------------------------------------------------- plumbing


class _ImageStore:
    """Manifest-backed uint8 image cache (decoded once, converted per use)."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        self.entries = load_manifest(self.manifest_path)
        if not self.entries:
            raise TrainingError(f"empty manifest: {manifest_path}")
        labels = {e.label for e in self.entries}
        if labels != {"real", "fake"}:
            raise TrainingError(f"training needs both classes, manifest has {sorted(labels)}")
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.entries)

    def image(self, index: int) -> np.ndarray:
        if index not in self._cache:
            img = load_image(resolve_path(self.manifest_path, self.entries[index]))
            self._cache[index] = np.round(img * 255.0).astype(np.uint8)
        return self._cache[index].astype(np.float32) / 255.0


class StepLogger:
    """JSON-lines training log: one record per optimizer step."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def log(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def _sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0xD5]).permutation(n)


def _encode_pooled(encoder: FrozenEncoder, images: list[np.ndarray]) -> torch.Tensor:
    return encoder.encode(np.stack(images)).pooled


def _optimizer_arrays(optimizer: torch.optim.AdamW, prefix: str) -> dict[str, np.ndarray]:
    arrays = {}
    state = optimizer.state_dict()["state"]
    for pidx, entry in state.items():
        for key, value in entry.items():
            tag = f"{prefix}/{pidx}/{key}"
            if isinstance(value, torch.Tensor):
                arrays[tag] = value.detach().cpu().numpy()
            else:
                arrays[tag] = np.asarray(value, dtype=np.float64)
    return arrays


def _restore_optimizer(optimizer: torch.optim.AdamW, arrays: dict[str, np.ndarray], prefix: str):
    state: dict[int, dict] = {}
    for tag, arr in arrays.items():
        if not tag.startswith(prefix + "/"):
            continue
        _, pidx, key = tag.split("/", 2)
        entry = state.setdefault(int(pidx), {})
        entry[key] = torch.from_numpy(arr.copy())
    sd = optimizer.state_dict()
    sd["state"] = state
    optimizer.load_state_dict(sd)


@dataclass
class TrainResult:
    checkpoint_path: Path
    final_train_accuracy: float
    steps: int


def _train_accuracy(
    encoder: FrozenEncoder, heads: HeadStack, store: _ImageStore, image_size: int, batch: int = 32
) -> float:
    correct = 0
    for start in range(0, len(store), batch):
        idx = range(start, min(start + batch, len(store)))
        imgs = [preprocess(store.image(i), image_size, "eval_centercrop") for i in idx]
        labels = torch.tensor([store.entries[i].label_index for i in idx])
        with torch.no_grad():
            _, logits = heads.project_and_classify(_encode_pooled(encoder, imgs))
        correct += int((logits.argmax(dim=1) == labels).sum())
    return correct / len(store)


def _save_phase_checkpoint(
    path: Path,
    heads: HeadStack,
    optimizer,
    meta: dict,
    next_epoch: int,
    step: int,
):
    arrays = {f"heads/{k}": v for k, v in state_dict_to_arrays(heads.state_dict()).items()}
    arrays.update(_optimizer_arrays(optimizer, "opt"))
    arrays["rng/torch"] = torch.get_rng_state().numpy()
    save_checkpoint(path, arrays, {**meta, "next_epoch": next_epoch, "step": step})


def load_heads(
    path, expected_fingerprint: Optional[str] = None, allow_mismatch: bool = False
) -> tuple[HeadStack, dict]:
    """Rebuild a HeadStack (eval mode) from a phase checkpoint.

    When ``expected_fingerprint`` is given, the stored config
    fingerprint must match unless ``allow_mismatch`` overrides.
    """
    arrays, meta = load_checkpoint(path)
    if expected_fingerprint is not None and meta.get("fingerprint") != expected_fingerprint:
        if not allow_mismatch:
            raise TrainingError(
                f"checkpoint fingerprint {meta.get('fingerprint')!r} does not match "
                f"expected {expected_fingerprint!r} (pass allow_mismatch to override)"
            )
    heads = HeadStack(HeadConfig.from_dict(meta["head_config"]))
    state = {
        k.split("/", 1)[1]: v for k, v in arrays_to_state_dict(arrays).items()
        if k.startswith("heads/")
    }
    heads.load_state_dict(state)
    heads.eval()
    return heads, meta


def _resume_phase(path, heads: HeadStack, optimizer) -> tuple[int, int]:
    arrays, meta = load_checkpoint(path)
    state = {
        k.split("/", 1)[1]: v for k, v in arrays_to_state_dict(arrays).items()
        if k.startswith("heads/")
    }
    heads.load_state_dict(state)
    _restore_optimizer(optimizer, arrays, "opt")
    torch.set_rng_state(torch.from_numpy(arrays["rng/torch"]).to(torch.uint8))
    return int(meta["next_epoch"]), int(meta["step"])


def train_teacher(
    manifest_path,
    config: PhaseConfig,
    encoder: FrozenEncoder,
    out_dir,
    seed: int,
    fingerprint: str = "",
    resume_from=None,
    stop_after_epoch: Optional[int] = None,
) -> TrainResult:
    """Phase 1: fit the teacher heads on sharp augmented views (focal loss).

    ``stop_after_epoch`` simulates an interruption right after that
    epoch's boundary checkpoint (the cosine schedule still spans the
    full configured run); resume from ``*_last.ckpt`` to finish.
    """
    store = _ImageStore(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)
    heads = build_heads("teacher", encoder.embed_dim, seed=seed)
    heads.train(True)
    optimizer = torch.optim.AdamW(
        heads.parameters(), lr=config.base_lr, weight_decay=config.weight_decay
    )
    weights = config.loss_weights
    n = len(store)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = max(1, config.epochs * steps_per_epoch)
    meta = {
        "phase": "teacher",
        "fingerprint": fingerprint,
        "encoder_id": encoder.config.encoder_id,
        "head_config": heads.config.to_dict(),
        "phase_config": config.to_dict(),
        "seed": seed,
        "manifest": str(manifest_path),
    }
    start_epoch, step = 0, 0
    if resume_from is not None:
        start_epoch, step = _resume_phase(resume_from, heads, optimizer)
    logger = StepLogger(out_dir / "teacher_log.jsonl")
    try:
        for epoch in range(start_epoch, config.epochs):
            order = _epoch_order(seed, epoch, n)
            for start in range(0, n, config.batch_size):
                batch_idx = order[start : start + config.batch_size]
                imgs, labels = [], []
                for i in batch_idx:
                    rng = _sample_rng(seed, epoch, int(i))
                    img = augment(store.image(int(i)), store.entries[int(i)].label, config.augmentation, "teacher", rng)
                    imgs.append(preprocess(img, config.image_size, "train_randomcrop", rng))
                    labels.append(store.entries[int(i)].label_index)
                pooled = _encode_pooled(encoder, imgs)
                _, logits = heads.project_and_classify(pooled, train_mode=True)
                loss = focal_loss(
                    logits, torch.tensor(labels), alpha=weights.alpha_focal, gamma=weights.gamma_focal
                )
                lr = cosine_lr(step, total_steps, config.base_lr)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad()
                loss.backward()
                grad_norm = float(torch.nn.utils.clip_grad_norm_(heads.parameters(), 1.0))
                optimizer.step()
                step += 1
                logger.log(
                    {
                        "step": step,
                        "lr": lr,
                        "loss": {"cls": float(loss.detach())},
                        "grad_norm": grad_norm,
                    }
                )
            _save_phase_checkpoint(
                out_dir / "teacher_last.ckpt", heads, optimizer, meta, epoch + 1, step
            )
            if stop_after_epoch is not None and epoch >= stop_after_epoch:
                return TrainResult(
                    checkpoint_path=out_dir / "teacher_last.ckpt",
                    final_train_accuracy=float("nan"),
                    steps=step,
                )
    finally:
        logger.close()
    heads.eval()
    accuracy = _train_accuracy(encoder, heads, store, config.image_size)
    final_meta = {**meta, "next_epoch": config.epochs, "step": step, "train_accuracy": accuracy}
    arrays = {f"heads/{k}": v for k, v in state_dict_to_arrays(heads.state_dict()).items()}
    path = save_checkpoint(out_dir / "teacher.ckpt", arrays, final_meta)
    return TrainResult(checkpoint_path=path, final_train_accuracy=accuracy, steps=step)


def distill_student(
    manifest_path,
    teacher_ckpt,
    config: PhaseConfig,
    encoder: FrozenEncoder,
    out_dir,
    seed: int,
    fingerprint: str = "",
    resume_from=None,
    stop_after_epoch: Optional[int] = None,
) -> TrainResult:
    """Phase 2: optimize student heads on paired views; teacher stays frozen."""
    store = _ImageStore(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    teacher, teacher_meta = load_heads(teacher_ckpt)
    if teacher_meta.get("encoder_id") != encoder.config.encoder_id:
        raise TrainingError(
            f"teacher checkpoint was trained against encoder "
            f"{teacher_meta.get('encoder_id')!r}, not {encoder.config.encoder_id!r}"
        )
    teacher.requires_grad_(False)
    teacher_hash_before = teacher.weights_hash()
    encoder_hash_before = encoder.weights_hash()

    torch.manual_seed(seed)
    heads = build_heads("student", encoder.embed_dim, seed=seed)
    heads.train(True)
    optimizer = torch.optim.AdamW(
        heads.parameters(), lr=config.base_lr, weight_decay=config.weight_decay
    )
    weights = config.loss_weights
    n = len(store)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = max(1, config.epochs * steps_per_epoch)
    meta = {
        "phase": "student",
        "fingerprint": fingerprint,
        "encoder_id": encoder.config.encoder_id,
        "head_config": heads.config.to_dict(),
        "phase_config": config.to_dict(),
        "seed": seed,
        "manifest": str(manifest_path),
        "teacher_checkpoint": str(teacher_ckpt),
    }
    start_epoch, step = 0, 0
    if resume_from is not None:
        start_epoch, step = _resume_phase(resume_from, heads, optimizer)
    logger = StepLogger(out_dir / "student_log.jsonl")
    try:
        for epoch in range(start_epoch, config.epochs):
            order = _epoch_order(seed, epoch, n)
            for start in range(0, n, config.batch_size):
                batch_idx = order[start : start + config.batch_size]
                sharps, blurs, levels, labels = [], [], [], []
                for i in batch_idx:
                    rng = _sample_rng(seed, epoch, int(i))
                    entry = store.entries[int(i)]
                    pair: PairedSample = augment(
                        store.image(int(i)), entry.label, config.augmentation, "student", rng
                    )
                    # identical crop on both views so the pair stays aligned
                    crop_seed = int(rng.integers(2**31))
                    sharps.append(
                        preprocess(
                            pair.sharp,
                            config.image_size,
                            "train_randomcrop",
                            np.random.default_rng(crop_seed),
                        )
                    )
                    blurs.append(
                        preprocess(
                            pair.blurred,
                            config.image_size,
                            "train_randomcrop",
                            np.random.default_rng(crop_seed),
                        )
                    )
                    levels.append(pair.degradation.severity)
                    labels.append(entry.label_index)
                pooled_sharp = _encode_pooled(encoder, sharps)
                pooled_blur = _encode_pooled(encoder, blurs)
                with torch.no_grad():
                    f_t, u_t = teacher.project_and_classify(pooled_sharp, train_mode=False)
                z_blur, u_blur = heads.project_and_classify(pooled_blur, train_mode=True)
                z_sharp, u_sharp = heads.project_and_classify(pooled_sharp, train_mode=True)
                # classification, KD and alignment span both views (sharp
                # rows first); the teacher side is duplicated since its
                # sharp-view outputs are the target for either view.
                label_t = torch.tensor(labels)
                views = BatchViews(
                    teacher_logits=torch.cat([u_t, u_t], dim=0),
                    student_logits=torch.cat([u_sharp, u_blur], dim=0),
                    teacher_features=torch.cat([f_t, f_t], dim=0),
                    student_features=torch.cat([z_sharp, z_blur], dim=0),
                    embeddings=torch.cat([z_sharp, z_blur], dim=0),
                    blur_levels=torch.tensor([0.0] * len(sharps) + levels, dtype=torch.float32),
                    labels=torch.cat([label_t, label_t], dim=0),
                )
                breakdown = total_loss(views, weights)
                lr = cosine_lr(step, total_steps, config.base_lr)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad()
                breakdown.total.backward()
                grad_norm = float(torch.nn.utils.clip_grad_norm_(heads.parameters(), 1.0))
                optimizer.step()
                step += 1
                logger.log(
                    {"step": step, "lr": lr, "loss": breakdown.to_floats(), "grad_norm": grad_norm}
                )
            _save_phase_checkpoint(
                out_dir / "student_last.ckpt", heads, optimizer, meta, epoch + 1, step
            )
            if stop_after_epoch is not None and epoch >= stop_after_epoch:
                return TrainResult(
                    checkpoint_path=out_dir / "student_last.ckpt",
                    final_train_accuracy=float("nan"),
                    steps=step,
                )
    finally:
        logger.close()

    if teacher.weights_hash() != teacher_hash_before:
        raise TrainingError("teacher weights changed during distillation")
    if encoder.weights_hash() != encoder_hash_before:
        raise TrainingError("encoder weights changed during distillation")

    heads.eval()
    accuracy = _train_accuracy(encoder, heads, store, config.image_size)
    final_meta = {**meta, "next_epoch": config.epochs, "step": step, "train_accuracy": accuracy}
    arrays = {f"heads/{k}": v for k, v in state_dict_to_arrays(heads.state_dict()).items()}
    path = save_checkpoint(out_dir / "student.ckpt", arrays, final_meta)
    return TrainResult(checkpoint_path=path, final_train_accuracy=accuracy, steps=step)
