"""Manifests, image I/O, preprocessing, and the synthetic toy dataset.

The toy dataset stands in for web-scale corpora: the "real" class is
smoothed multi-scale (1/f^beta) noise texture with photograph-like
steep spectra, and the "fake" class is the same texture plus a
nearest-neighbor 2x-upsampled detail field. The detail's white
component folds into excess mid/high-frequency energy (the classic
generator fingerprint, fragile under any low-pass), while its coarse
lattice component mimics upsampling seam periodicity at a low spatial
frequency that motion blur cannot remove — so a sharp-trained detector
and a blur-trained detector have genuinely different cues available.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
from PIL import Image

from .analysis import spectrum_gap
from .models import IMAGENET_MEAN, IMAGENET_STD

BLUR_SCENARIOS = ("camera_shake", "object_motion", "low_light", "none")
TOY_IMAGE_SIZE = 256
# construction knobs, tuned so the sharp spectral gap clears 0.3 log units
# while the blurred-capture gap collapses (see dataset_meta.json of any run)
TOY_CONTRAST = 0.15
TOY_BETA_RANGE = (2.6, 3.0)
TOY_DETAIL_AMPLITUDE = 0.04
TOY_SEAM_AMPLITUDE = 0.05
TOY_SEAM_PERIOD = 16  # at half resolution; 32 px after the 2x upsample


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: str
    source: str = ""
    blur_scenario: Optional[str] = None
    severity_b: Optional[float] = None
    mask_path: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise DataError("entry id must be nonempty")
        if self.label not in ("real", "fake"):
            raise DataError(f"label must be 'real' or 'fake', got {self.label!r}")
        if self.blur_scenario is not None and self.blur_scenario not in BLUR_SCENARIOS:
            raise DataError(f"unknown blur scenario {self.blur_scenario!r}")
        if (self.severity_b is None) != (self.blur_scenario is None):
            raise DataError("severity_b and blur_scenario must be present together")
        if self.severity_b is not None and not 0.0 <= self.severity_b <= 1.0:
            raise DataError("severity_b must lie in [0, 1]")

    @property
    def label_index(self) -> int:
        return 0 if self.label == "real" else 1

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != ""}


REQUIRED_FIELDS = ("id", "path", "label")


def load_manifest(path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest; paths resolve relative to the file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    root = path.parent
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for field_name in REQUIRED_FIELDS:
                if field_name not in record:
                    raise DataError(f"{path}:{lineno}: missing field {field_name!r}")
            try:
                entry = ManifestEntry(**record)
            except TypeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if entry.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen.add(entry.id)
            resolved = root / entry.path
            if not resolved.exists():
                raise DataError(f"{path}:{lineno}: image not found: {resolved}")
            entries.append(entry)
    return entries


def write_manifest(entries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
    return path


def resolve_path(manifest_path, entry: ManifestEntry) -> Path:
    return Path(manifest_path).parent / entry.path


def load_image(path) -> np.ndarray:
    """Decode to float32 RGB in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return arr


def save_image(image: np.ndarray, path) -> Path:
    """Write a [0, 1] float image as 8-bit PNG (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(image)
    if arr.min() < -1e-6 or arr.max() > 1 + 1e-6:
        raise DataError("image values must lie in [0, 1]")
    u8 = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if u8.ndim == 2 else "RGB"
    Image.fromarray(u8, mode=mode).save(path, format="PNG")
    return path


def preprocess(
    image: np.ndarray,
    target_size: int = 224,
    mode: str = "eval_centercrop",
    rng: Optional[np.random.Generator] = None,
    resize_size: Optional[int] = None,
) -> np.ndarray:
    """Square resize then crop (random in training, centered otherwise).

    The resize target is 8/7 of the crop (512 -> 448 at full scale,
    256 -> 224 at desk scale). Images already at the crop size pass
    through untouched. Output stays in [0, 1]; channel normalization is
    applied at the encoder boundary, never here.
    """
    if mode not in ("train_randomcrop", "eval_centercrop"):
        raise DataError(f"unknown preprocess mode {mode!r}")
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected (H, W, 3) image, got {img.shape}")
    if min(img.shape[:2]) < 8:
        raise DataError(f"degenerate image size {img.shape[:2]}")
    if img.shape[:2] == (target_size, target_size):
        return img.copy()
    if resize_size is None:
        resize_size = int(round(target_size * 8 / 7))
    if resize_size < target_size:
        raise DataError("resize_size must be >= target_size")
    resized = cv2.resize(img, (resize_size, resize_size), interpolation=cv2.INTER_LINEAR)
    slack = resize_size - target_size
    if mode == "eval_centercrop" or slack == 0:
        oy = ox = slack // 2
    else:
        if rng is None:
            raise DataError("train_randomcrop requires an rng")
        oy = int(rng.integers(0, slack + 1))
        ox = int(rng.integers(0, slack + 1))
    return np.clip(resized[oy : oy + target_size, ox : ox + target_size], 0.0, 1.0)


def normalize_channels(image: np.ndarray) -> np.ndarray:
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    return (np.asarray(image, dtype=np.float32) - mean) / std


def denormalize_channels(image: np.ndarray) -> np.ndarray:
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    return np.asarray(image, dtype=np.float32) * std + mean


def cache_root() -> Path:
    return Path(os.environ.get("BLURDISTILL_CACHE", "~/.cache/blurdistill")).expanduser()


# ------------------------------------------------------------------ toy data


def _pink_field(rng: np.random.Generator, size: int, beta: float) -> np.ndarray:
    """Zero-mean unit-std Gaussian field with power spectrum ~ 1/f^beta."""
    spec = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = np.inf  # no DC component
    field = np.fft.ifft2(spec * radius ** (-beta / 2.0)).real
    return field / (field.std() + 1e-12)


def make_toy_real(rng: np.random.Generator, size: int = TOY_IMAGE_SIZE) -> np.ndarray:
    """Natural-spectrum texture: correlated-RGB noise with beta ~ U(2.6, 3)."""
    beta = rng.uniform(*TOY_BETA_RANGE)
    base = _pink_field(rng, size, beta)
    channels = []
    for _ in range(3):
        chan = base + 0.3 * _pink_field(rng, size, beta)
        channels.append(chan / np.sqrt(1.0 + 0.3**2))
    img = 0.5 + TOY_CONTRAST * np.stack(channels, axis=-1)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _seam_lattice(rng: np.random.Generator, size: int, period: int) -> np.ndarray:
    """Unit-std axis-aligned cosine lattice with random phases."""
    px, py = rng.uniform(0.0, period, size=2)
    x = np.arange(size)
    grid = np.cos(2 * np.pi * (x[None, :] + px) / period) + np.cos(
        2 * np.pi * (x[:, None] + py) / period
    )
    return grid / grid.std()


def make_toy_fake(rng: np.random.Generator, size: int = TOY_IMAGE_SIZE) -> np.ndarray:
    """Same texture plus an NN-2x-upsampled detail field.

    The detail is white noise (folds into mid/high-frequency excess —
    the blur-fragile fingerprint) plus a coarse random-phase lattice
    (upsampling seam periodicity at 32 px, which survives motion blur).
    """
    img = make_toy_real(rng, size)
    half = size // 2
    white = rng.normal(size=(half, half))
    white /= white.std() + 1e-12
    detail = TOY_DETAIL_AMPLITUDE * white + TOY_SEAM_AMPLITUDE * _seam_lattice(
        rng, half, TOY_SEAM_PERIOD
    )
    up = np.repeat(np.repeat(detail, 2, axis=0), 2, axis=1)
    out = img + up[..., None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def generate_toy_dataset(
    n_per_class: int,
    rng: np.random.Generator,
    out_dir,
    size: int = TOY_IMAGE_SIZE,
    fingerprint: str = "",
) -> Path:
    """Write a labeled toy corpus; returns the manifest path.

    Emits images/, manifest.jsonl, and dataset_meta.json carrying a
    construction-validity measurement: the (0.25, 0.5)-band spectrum
    gap between fakes and reals on up to 200 images per class.
    """
    if n_per_class < 10:
        raise DataError("n_per_class must be >= 10")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    gap_sample: dict[str, list[np.ndarray]] = {"real": [], "fake": []}
    for label, maker in (("real", make_toy_real), ("fake", make_toy_fake)):
        for i in range(n_per_class):
            img = maker(rng, size)
            rel = f"images/{label}_{i:04d}.png"
            save_image(img, out_dir / rel)
            if len(gap_sample[label]) < 200:
                # measure what will actually be read back (8-bit storage)
                gap_sample[label].append(np.round(img * 255.0) / 255.0)
            entries.append(
                ManifestEntry(
                    id=f"{label}_{i:04d}",
                    path=rel,
                    label=label,
                    source="toy_pink_noise" if label == "real" else "toy_nn_upsample",
                )
            )
    manifest_path = write_manifest(entries, out_dir / "manifest.jsonl")
    gap = spectrum_gap(gap_sample["real"], gap_sample["fake"], band=(0.25, 0.5))
    meta = {
        "n_per_class": n_per_class,
        "image_size": size,
        "construction_gap_band_0.25_0.5": gap,
        "contrast": TOY_CONTRAST,
        "beta_range": list(TOY_BETA_RANGE),
        "detail_amplitude": TOY_DETAIL_AMPLITUDE,
        "seam_amplitude": TOY_SEAM_AMPLITUDE,
        "seam_period": TOY_SEAM_PERIOD,
        "fingerprint": fingerprint,
    }
    with open(out_dir / "dataset_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest_path
