"""Motion-blur synthesis and co-degradations.

Images are float arrays in [0, 1], shaped (H, W) or (H, W, 3). Every
operation is a pure function of its inputs and an explicit
``numpy.random.Generator``, so the pipeline can be fanned out across
workers by splitting rng streams per sample.

Camera-shake blur is modelled as a random-walk trajectory rasterized
into a point-spread function (PSF) of unit mass; parametric kernel
families (gaussian, box, bokeh/defocus discs) cover the evaluation
sweeps. Co-degradations (JPEG, sensor noise, down-up resampling) mimic
the capture-and-transmission conditions under which blur occurs in the
wild. Boundary handling is reflective everywhere so that frame edges do
not leak blur severity as a trivial cue.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Optional

import cv2
import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.signal import fftconvolve

KERNEL_FAMILIES = ("motion_psf", "defocus", "gaussian", "box", "radial", "bokeh", "identity")

# Default maximum trajectory length in pixels; deployment-matched range is
# roughly 7-21 and everything downstream treats this as configurable.
DEFAULT_L_MAX = 15.0

# Normalizers mapping each family's parameter onto severity in [0, 1].
# Larger parameter always means larger severity (clamped at 1).
FAMILY_PARAM_MAX = {
    "motion_psf": DEFAULT_L_MAX,
    "defocus": 2.5,
    "gaussian": 4.0,
    "box": 15.0,
    "bokeh": 8.0,
    "radial": 10.0,
}

_MASS_TOL = 1e-6


class BlurError(ValueError):
    """Invalid blur parameter or malformed kernel."""


@dataclass(frozen=True)
class Trajectory:
    """Sub-pixel camera-shake path.

    ``points`` is an (n, 2) array of (x, y) coordinates in pixels,
    ``length`` its total arc length and ``direction`` the initial
    heading in [0, pi).
    """

    points: np.ndarray
    length: float
    direction: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise BlurError(f"trajectory points must be (n, 2), got {pts.shape}")
        if self.length < 0:
            raise BlurError("trajectory length must be >= 0")
        if not (0.0 <= self.direction < np.pi):
            raise BlurError("trajectory direction must lie in [0, pi)")
        if self.length == 0 and len(pts) != 1:
            raise BlurError("zero-length trajectory must have exactly one point")
        arc = float(np.sum(np.hypot(*np.diff(pts, axis=0).T))) if len(pts) > 1 else 0.0
        if self.length > 0 and abs(arc - self.length) > 0.01 * self.length:
            raise BlurError(f"arc length {arc:.4f} inconsistent with declared length {self.length:.4f}")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class BlurKernel:
    """Unit-mass 2D convolution kernel with provenance and severity.

    ``severity`` is the generating parameter normalized to [0, 1] by the
    family's maximum parameter (``FAMILY_PARAM_MAX``).
    """

    weights: np.ndarray
    family: str
    severity: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise BlurError("kernel weights must be 2D")
        if self.family not in KERNEL_FAMILIES:
            raise BlurError(f"unknown kernel family {self.family!r}")
        if np.any(w < 0):
            raise BlurError("kernel weights must be non-negative")
        total = float(w.sum())
        if abs(total - 1.0) > _MASS_TOL:
            raise BlurError(f"kernel mass {total} deviates from 1 by more than {_MASS_TOL}")
        if not 0.0 <= self.severity <= 1.0:
            raise BlurError("kernel severity must lie in [0, 1]")
        if self.family == "identity":
            center = (w.shape[0] // 2, w.shape[1] // 2)
            delta = np.zeros_like(w)
            delta[center] = 1.0
            if not np.array_equal(w, delta):
                raise BlurError("identity kernel must be a single central unit weight")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def meta(self) -> dict:
        return {"family": self.family, "severity": self.severity, "size": list(self.weights.shape)}


@dataclass(frozen=True)
class DegradationRecord:
    """Full description of how one blurred view was produced.

    ``defocus_sigma`` is kept alongside the motion kernel so the record
    reconstructs the complete degradation; co-degradation fields are
    ``None`` when the corresponding stage was skipped.
    """

    kernel: BlurKernel
    defocus_sigma: Optional[float] = None
    jpeg_quality: Optional[int] = None
    noise_sigma: Optional[float] = None
    resample_scale: Optional[float] = None
    mode: str = "global"

    def __post_init__(self):
        if self.jpeg_quality is not None and not (70 <= self.jpeg_quality <= 95):
            raise BlurError("jpeg_quality must lie in [70, 95]")
        if self.resample_scale is not None and not (0.0 < self.resample_scale < 1.0):
            raise BlurError("resample_scale must lie in (0, 1)")
        if self.mode not in ("global", "ccmba", "mixed"):
            raise BlurError(f"unknown degradation mode {self.mode!r}")

    @property
    def severity(self) -> float:
        """Blur severity b of the view, from the motion kernel."""
        return self.kernel.severity

    def to_json(self) -> dict:
        return {
            "kernel": {**self.kernel.meta(), "weights": self.kernel.weights.tolist()},
            "defocus_sigma": self.defocus_sigma,
            "jpeg_quality": self.jpeg_quality,
            "noise_sigma": self.noise_sigma,
            "resample_scale": self.resample_scale,
            "mode": self.mode,
        }


@dataclass(frozen=True)
class PairedSample:
    """A sharp image, its degraded counterpart and the degradation metadata."""

    sharp: np.ndarray
    blurred: np.ndarray
    label: str
    degradation: DegradationRecord

    def __post_init__(self):
        if self.sharp.shape != self.blurred.shape:
            raise BlurError("sharp and blurred views must have identical shapes")
        if self.label not in ("real", "fake"):
            raise BlurError(f"label must be 'real' or 'fake', got {self.label!r}")
        for name, img in (("sharp", self.sharp), ("blurred", self.blurred)):
            if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
                raise BlurError(f"{name} view has pixel values outside [0, 1]")


@dataclass(frozen=True)
class BlurPolicy:
    """Sampling policy for paired sharp/blurred views.

    Trajectory length is drawn uniformly from (0, l_max]; defocus and the
    co-degradations fire independently with their probabilities. ``mode``
    selects whole-image blurring ('global'), masked category-conditional
    blurring ('ccmba'), or an even coin flip between the two ('mixed').
    """

    l_max: float = DEFAULT_L_MAX
    jitter_std: float = 0.1
    p_defocus: float = 0.3
    sigma_defocus_max: float = 2.5
    p_jpeg: float = 0.2
    jpeg_quality_range: tuple[int, int] = (70, 95)
    p_noise: float = 0.2
    noise_sigma_range: tuple[float, float] = (0.002, 0.01)
    p_resample: float = 0.2
    resample_scale_range: tuple[float, float] = (0.5, 0.95)
    mode: str = "global"
    kernel_size: Optional[int] = None

    def __post_init__(self):
        if self.l_max <= 0:
            raise BlurError("l_max must be > 0")
        for name in ("p_defocus", "p_jpeg", "p_noise", "p_resample"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise BlurError(f"{name} must lie in [0, 1]")
        if self.mode not in ("global", "ccmba", "mixed"):
            raise BlurError(f"unknown blur mode {self.mode!r}")

    def resolved_kernel_size(self) -> int:
        if self.kernel_size is not None:
            return self.kernel_size
        size = int(np.ceil(self.l_max)) + 4
        return size + 1 if size % 2 == 0 else size

    def to_dict(self) -> dict:
        return {
            "l_max": self.l_max,
            "jitter_std": self.jitter_std,
            "p_defocus": self.p_defocus,
            "sigma_defocus_max": self.sigma_defocus_max,
            "p_jpeg": self.p_jpeg,
            "jpeg_quality_range": list(self.jpeg_quality_range),
            "p_noise": self.p_noise,
            "noise_sigma_range": list(self.noise_sigma_range),
            "p_resample": self.p_resample,
            "resample_scale_range": list(self.resample_scale_range),
            "mode": self.mode,
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BlurPolicy":
        kwargs = dict(data)
        for key in ("jpeg_quality_range", "noise_sigma_range", "resample_scale_range"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _as_float(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim not in (2, 3):
        raise BlurError(f"expected (H, W) or (H, W, C) image, got shape {img.shape}")
    return img.astype(np.float64, copy=False)


def sample_trajectory(rng: np.random.Generator, l_max: float, jitter_std: float) -> Trajectory:
    """Draw a camera-shake trajectory.

    Total arc length ~ Uniform(0, l_max) and the initial heading
    ~ Uniform(0, pi); the path is a chain of near-unit steps whose
    heading drifts by zero-mean Gaussian jitter of std ``jitter_std``
    per step. Zero jitter therefore yields a straight segment.
    """
    if l_max <= 0:
        raise BlurError("l_max must be > 0")
    if jitter_std < 0:
        raise BlurError("jitter_std must be >= 0")
    length = float(rng.uniform(0.0, l_max))
    direction = float(rng.uniform(0.0, np.pi))
    return _walk_trajectory(rng, length, direction, jitter_std)


def straight_trajectory(length: float, direction: float = 0.0) -> Trajectory:
    """Deterministic straight-line trajectory (zero jitter)."""
    return _walk_trajectory(None, float(length), float(direction), 0.0)


def _walk_trajectory(rng, length: float, direction: float, jitter_std: float) -> Trajectory:
    if length <= 0:
        return Trajectory(points=np.zeros((1, 2)), length=0.0, direction=direction)
    n_steps = max(1, int(np.ceil(length)))
    step = length / n_steps
    if jitter_std > 0:
        headings = direction + np.concatenate(([0.0], np.cumsum(rng.normal(0.0, jitter_std, n_steps - 1))))
    else:
        headings = np.full(n_steps, direction)
    deltas = step * np.stack([np.cos(headings), np.sin(headings)], axis=1)
    points = np.vstack([np.zeros((1, 2)), np.cumsum(deltas, axis=0)])
    return Trajectory(points=points, length=length, direction=direction)


def rasterize_psf(traj: Trajectory, kernel_size: int, l_max: float = DEFAULT_L_MAX) -> BlurKernel:
    """Rasterize a trajectory into a unit-mass motion PSF.

    The path is centered in the window, sampled at uniform arc-length
    spacing and deposited bilinearly; mass falling outside the window is
    clipped and the remainder renormalized. Severity is length / l_max,
    clamped to 1.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise BlurError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    severity = min(1.0, traj.length / l_max) if l_max > 0 else 0.0
    grid = np.zeros((kernel_size, kernel_size), dtype=np.float64)
    center = (kernel_size - 1) / 2.0

    pts = traj.points
    bbox_mid = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    pts = pts - bbox_mid + center  # (x, y), centered in the window

    if len(pts) == 1 or traj.length == 0:
        samples = pts
    else:
        # Resample the polyline at ~0.2 px spacing so each sample carries
        # equal dwell time regardless of the original vertex density.
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        cum = np.concatenate(([0.0], np.cumsum(seg_len)))
        n_samples = max(2, int(np.ceil(cum[-1] / 0.2)) + 1)
        t = np.linspace(0.0, cum[-1], n_samples)
        samples = np.stack(
            [np.interp(t, cum, pts[:, 0]), np.interp(t, cum, pts[:, 1])], axis=1
        )

    for x, y in samples:
        _deposit_bilinear(grid, x, y)

    total = grid.sum()
    if total <= 0:
        grid[kernel_size // 2, kernel_size // 2] = 1.0
    else:
        grid /= total
    return BlurKernel(weights=grid, family="motion_psf", severity=severity)


def _deposit_bilinear(grid: np.ndarray, x: float, y: float) -> None:
    h, w = grid.shape
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    dx, dy = x - x0, y - y0
    for yy, wy in ((y0, 1.0 - dy), (y0 + 1, dy)):
        for xx, wx in ((x0, 1.0 - dx), (x0 + 1, dx)):
            if wy * wx > 0 and 0 <= yy < h and 0 <= xx < w:
                grid[yy, xx] += wy * wx


def identity_kernel() -> BlurKernel:
    return BlurKernel(weights=np.array([[1.0]]), family="identity", severity=0.0)


def parametric_kernel(family: str, param: float, kernel_size: int) -> BlurKernel:
    """Construct a unit-mass kernel from a parametric family.

    gaussian: isotropic Gaussian of std ``param`` truncated to the window.
    box: uniform square of side ``param`` (fractional coverage at edges).
    bokeh: uniform disc over bins whose centers lie within radius ``param``.
    defocus: thin-lens disc, radius 2 * ``param`` (param is the blur std).
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise BlurError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    if family == "identity":
        return identity_kernel()
    if family not in ("gaussian", "box", "bokeh", "defocus"):
        raise BlurError(f"no parametric constructor for family {family!r}")

    half = kernel_size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    severity = min(1.0, param / FAMILY_PARAM_MAX[family])

    if family == "gaussian":
        if param <= 0:
            raise BlurError("gaussian sigma must be > 0")
        xx, yy = np.meshgrid(coords, coords)
        with np.errstate(under="ignore"):
            w = np.exp(-(xx**2 + yy**2) / (2.0 * param**2))
        if w.sum() <= 0:  # extreme sigma -> delta
            w = np.zeros_like(w)
            w[half, half] = 1.0
    elif family == "box":
        if param < 1:
            raise BlurError("box width must be >= 1")
        cover = np.clip(param / 2.0 - (np.abs(coords) - 0.5), 0.0, 1.0)
        w = np.outer(cover, cover)
    else:  # bokeh / defocus disc
        if family == "bokeh" and param < 1:
            raise BlurError("bokeh radius must be >= 1")
        if family == "defocus" and param <= 0:
            raise BlurError("defocus sigma must be > 0")
        radius = param if family == "bokeh" else 2.0 * param
        xx, yy = np.meshgrid(coords, coords)
        w = (xx**2 + yy**2 <= radius**2).astype(np.float64)
        if w.sum() == 0:
            w[half, half] = 1.0

    return BlurKernel(weights=w / w.sum(), family=family, severity=severity)


def convolve(image: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Per-channel 2D convolution with reflective padding, clamped to [0, 1]."""
    img = _as_float(image)
    w = kernel.weights
    kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    if ph == 0 and pw == 0:
        out = img * w[0, 0]
    else:
        h, wid = img.shape[:2]
        if ph > h or pw > wid:
            raise BlurError(f"kernel {w.shape} too large for image {img.shape[:2]}")

        def conv2d(channel):
            padded = np.pad(channel, ((ph, ph), (pw, pw)), mode="symmetric")
            return fftconvolve(padded, w, mode="valid")

        if img.ndim == 2:
            out = conv2d(img)
        else:
            out = np.stack([conv2d(img[..., c]) for c in range(img.shape[2])], axis=-1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def radial_blur(image: np.ndarray, strength: float) -> np.ndarray:
    """Rotational blur: average of 8 copies rotated about the image center.

    Rotation angles are linearly spaced in [-strength, +strength] degrees.
    """
    if strength < 0:
        raise BlurError("radial blur strength must be >= 0")
    img = _as_float(image)
    if strength == 0:
        return img.astype(np.float32)
    angles = np.linspace(-strength, strength, 8)
    acc = np.zeros_like(img)
    for angle in angles:
        acc += ndimage.rotate(img, angle, axes=(1, 0), reshape=False, order=1, mode="reflect")
    return np.clip(acc / len(angles), 0.0, 1.0).astype(np.float32)


def jpeg_degrade(image: np.ndarray, quality: int) -> np.ndarray:
    """Round-trip through a JPEG encode/decode at ``quality``.

    Chroma subsampling is disabled (4:4:4) so distortion is governed by
    the quality factor alone and a quality-100 round trip stays within
    quantization error of the input.
    """
    if not 1 <= quality <= 100:
        raise BlurError(f"JPEG quality must lie in [1, 100], got {quality}")
    img = _as_float(image)
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    pil = Image.fromarray(u8, mode="L" if img.ndim == 2 else "RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality), subsampling=0)
    buf.seek(0)
    decoded = np.asarray(Image.open(buf), dtype=np.float32) / 255.0
    return decoded.reshape(img.shape)


def add_sensor_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add zero-mean Gaussian pixel noise of std ``sigma``, clamped to [0, 1]."""
    if sigma < 0:
        raise BlurError("noise sigma must be >= 0")
    img = _as_float(image)
    if sigma == 0:
        return img.astype(np.float32)
    noisy = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def down_up_sample(image: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear downsample by ``scale`` then bilinear upsample back."""
    if not 0.0 < scale < 1.0:
        raise BlurError(f"resample scale must lie in (0, 1), got {scale}")
    img = _as_float(image).astype(np.float32)
    h, w = img.shape[:2]
    dh, dw = max(1, int(scale * h)), max(1, int(scale * w))
    small = cv2.resize(img, (dw, dh), interpolation=cv2.INTER_LINEAR)
    out = cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR)
    return np.clip(out.reshape(img.shape), 0.0, 1.0)


def quantize_8bit(image: np.ndarray) -> np.ndarray:
    """Round-trip through 8-bit storage (the floor that erases faint spectra)."""
    img = _as_float(image)
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def random_ellipse_mask(
    shape: tuple[int, int], rng: np.random.Generator, coverage: tuple[float, float] = (0.2, 0.6)
) -> np.ndarray:
    """Random filled ellipse covering a fraction of the frame in ``coverage``."""
    h, w = shape
    target = rng.uniform(*coverage)
    # Ellipse area = pi * a * b; draw the aspect then solve for the scale.
    aspect = rng.uniform(0.5, 2.0)
    area = target * h * w
    b = np.sqrt(area / (np.pi * aspect))
    a = aspect * b
    cy = rng.uniform(0.3 * h, 0.7 * h)
    cx = rng.uniform(0.3 * w, 0.7 * w)
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    xr = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    yr = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    return ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0).astype(np.float32)


def apply_ccmba(image: np.ndarray, mask: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """Category-conditional blur: blur where mask=1, keep the rest.

    The binary mask is feathered with a 7x7 box (3-pixel transition band
    each side) so the seam between regions does not itself become a cue.
    """
    img = _as_float(image)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != img.shape[:2]:
        raise BlurError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    blurred = convolve(img, kernel).astype(np.float64)
    feathered = ndimage.uniform_filter(mask, size=7, mode="reflect")
    if img.ndim == 3:
        feathered = feathered[..., None]
    out = feathered * blurred + (1.0 - feathered) * img
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synthesize_pair(
    image: np.ndarray,
    label: str,
    policy: BlurPolicy,
    rng: np.random.Generator,
    mask: Optional[np.ndarray] = None,
) -> PairedSample:
    """Produce a paired sharp/blurred sample under ``policy``.

    Composition order mirrors a capture-then-transmission pipeline:
    motion PSF, then defocus, down-up resampling, sensor noise, JPEG.
    The motion PSF is always applied (severity b = L / l_max); defocus
    and each co-degradation fire independently with their policy
    probabilities. All draws come from ``rng`` in a fixed order, so a
    seeded generator reproduces the sample bit for bit.
    """
    img = _as_float(image).astype(np.float32)
    if img.min() < 0 or img.max() > 1:
        raise BlurError("input image must have values in [0, 1]")

    traj = sample_trajectory(rng, policy.l_max, policy.jitter_std)
    kernel = rasterize_psf(traj, policy.resolved_kernel_size(), l_max=policy.l_max)

    mode = policy.mode
    if mode == "mixed":
        mode = "ccmba" if rng.random() < 0.5 else "global"
    if mode == "ccmba":
        region = mask if mask is not None else random_ellipse_mask(img.shape[:2], rng)
        blurred = apply_ccmba(img, region, kernel)
    else:
        blurred = convolve(img, kernel)

    defocus_sigma = None
    if rng.random() < policy.p_defocus:
        defocus_sigma = float(rng.uniform(0.0, policy.sigma_defocus_max))
        if defocus_sigma > 0:
            size = int(np.ceil(4.0 * policy.sigma_defocus_max)) | 1
            blurred = convolve(blurred, parametric_kernel("defocus", defocus_sigma, size))

    resample_scale = None
    if rng.random() < policy.p_resample:
        resample_scale = float(rng.uniform(*policy.resample_scale_range))
        blurred = down_up_sample(blurred, resample_scale)

    noise_sigma = None
    if rng.random() < policy.p_noise:
        noise_sigma = float(rng.uniform(*policy.noise_sigma_range))
        blurred = add_sensor_noise(blurred, noise_sigma, rng)

    jpeg_quality = None
    if rng.random() < policy.p_jpeg:
        lo, hi = policy.jpeg_quality_range
        jpeg_quality = int(rng.integers(lo, hi + 1))
        blurred = jpeg_degrade(blurred, jpeg_quality)

    record = DegradationRecord(
        kernel=kernel,
        defocus_sigma=defocus_sigma,
        jpeg_quality=jpeg_quality,
        noise_sigma=noise_sigma,
        resample_scale=resample_scale,
        mode=mode,
    )
    return PairedSample(sharp=img, blurred=blurred, label=label, degradation=record)
