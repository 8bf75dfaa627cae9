"""Diagnostics: radial spectra, attention similarity, patch similarity.

Three views of why blur breaks detectors and what survives it:

* radial power spectra expose the mid/high-frequency energy surplus of
  generated images — and how a low-pass blur erases it;
* attention-map similarity tracks how far a frozen encoder's class
  attention drifts as motion blur grows;
* patch-token Gram matrices show the token-level structure those
  attention maps summarize.

Every operation returns plain data (JSON-serializable via the dataclass
helpers); plotting lives at the CLI layer and is convenience output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blur import BlurError, convolve, rasterize_psf, straight_trajectory

LOG_EPS = 1e-12
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class RadialSpectrum:
    """Log annular power per normalized-frequency bin in [0, 0.5)."""

    bin_centers: tuple[float, ...]
    energy: tuple[float, ...]

    def __post_init__(self):
        if len(self.bin_centers) != len(self.energy):
            raise AnalysisError("bin/energy length mismatch")
        centers = np.asarray(self.bin_centers)
        if len(centers) > 1 and not (np.diff(centers) > 0).all():
            raise AnalysisError("bin centers must be strictly increasing")

    def to_json(self) -> dict:
        return {"bin_centers": list(self.bin_centers), "energy": list(self.energy)}


@dataclass(frozen=True)
class SimilarityCurve:
    """Mean clean-vs-blurred attention cosine per motion kernel size."""

    kernel_sizes: tuple[int, ...]
    similarity: tuple[float, ...]

    def __post_init__(self):
        if len(self.kernel_sizes) != len(self.similarity):
            raise AnalysisError("size/similarity length mismatch")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise AnalysisError("kernel sizes must be odd and >= 1")
        if any(not -1.0 - 1e-9 <= s <= 1.0 + 1e-9 for s in self.similarity):
            raise AnalysisError("similarities must lie in [-1, 1]")

    def to_json(self) -> dict:
        return {"kernel_sizes": list(self.kernel_sizes), "similarity": list(self.similarity)}


def _luma(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        r, g, b = LUMA_WEIGHTS
        return r * img[..., 0] + g * img[..., 1] + b * img[..., 2]
    if img.ndim == 2:
        return img
    raise AnalysisError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def radial_spectrum(image: np.ndarray, n_bins: int = 32) -> RadialSpectrum:
    """Annular average of |FFT|^2 of the mean-subtracted luma, log10 scale.

    Frequencies are normalized per axis so the radius r = |(fy, fx)|
    runs to 0.5 at the axis Nyquist; bins partition [0, 0.5) uniformly.
    """
    if n_bins < 4:
        raise AnalysisError("need at least 4 bins")
    luma = _luma(image)
    h, w = luma.shape
    if h < 8 or w < 8:
        raise AnalysisError(f"image too small for spectral analysis: {luma.shape}")
    luma = luma - luma.mean()
    power = np.abs(np.fft.fft2(luma)) ** 2
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    bins = np.minimum((radius / 0.5 * n_bins).astype(int), n_bins - 1)
    mask = radius < 0.5
    sums = np.bincount(bins[mask], weights=power[mask], minlength=n_bins)
    counts = np.bincount(bins[mask], minlength=n_bins)
    mean_power = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    energy = np.log10(mean_power + LOG_EPS)
    centers = (np.arange(n_bins) + 0.5) * (0.5 / n_bins)
    return RadialSpectrum(bin_centers=tuple(centers.tolist()), energy=tuple(energy.tolist()))


def _band_mean(spec: RadialSpectrum, lo: float, hi: float) -> float:
    centers = np.asarray(spec.bin_centers)
    energy = np.asarray(spec.energy)
    in_band = (centers >= lo) & (centers < hi)
    if not in_band.any():
        raise AnalysisError(f"no spectrum bins inside band ({lo}, {hi})")
    return float(energy[in_band].mean())


def spectrum_gap(
    real_images,
    fake_images,
    band: tuple[float, float] = (0.25, 0.5),
    n_bins: int = 32,
) -> float:
    """Mean in-band log-energy of fakes minus that of reals."""
    lo, hi = band
    if not (0.0 <= lo < hi <= 0.5):
        raise AnalysisError(f"band must satisfy 0 <= lo < hi <= 0.5, got {band}")
    reals = list(real_images)
    fakes = list(fake_images)
    if not reals or not fakes:
        raise AnalysisError("both image sets must be nonempty")
    real_mean = np.mean([_band_mean(radial_spectrum(im, n_bins), lo, hi) for im in reals])
    fake_mean = np.mean([_band_mean(radial_spectrum(im, n_bins), lo, hi) for im in fakes])
    return float(fake_mean - real_mean)


def _cosine_flat(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel().astype(np.float64)
    b = b.ravel().astype(np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise AnalysisError("zero attention map")
    return float(a @ b / (na * nb))


def attention_similarity(encoder, images, kernel_sizes, rng=None) -> SimilarityCurve:
    """Clean-vs-blurred class-attention cosine, per motion kernel size.

    Blur is a straight-line motion PSF spanning the kernel window
    (length = size - 1; size 1 is the identity). Each image keeps one
    fixed direction across all sizes — drawn from ``rng`` when given,
    horizontal otherwise — so the curve varies only in blur extent.
    """
    sizes = [int(k) for k in kernel_sizes]
    if not sizes:
        raise AnalysisError("kernel_sizes must be nonempty")
    if any(k < 1 or k % 2 == 0 for k in sizes):
        raise AnalysisError("kernel sizes must be odd and >= 1")
    imgs = list(images)
    if not imgs:
        raise AnalysisError("images must be nonempty")
    directions = [
        float(rng.uniform(0.0, np.pi)) if rng is not None else 0.0 for _ in imgs
    ]
    clean_attn = [encoder.encode(im).attention[0].numpy() for im in imgs]
    sims = []
    for size in sizes:
        values = []
        for img, direction, clean in zip(imgs, directions, clean_attn):
            if size == 1:
                blurred = np.asarray(img, dtype=np.float32)
            else:
                traj = straight_trajectory(float(size - 1), direction)
                blurred = convolve(img, rasterize_psf(traj, size, l_max=max(size - 1, 1)))
            blurred_attn = encoder.encode(blurred).attention[0].numpy()
            values.append(_cosine_flat(clean, blurred_attn))
        sims.append(float(np.mean(values)))
    return SimilarityCurve(kernel_sizes=tuple(sizes), similarity=tuple(sims))


def patch_similarity_matrix(encoder, image) -> np.ndarray:
    """P x P cosine Gram matrix of the encoder's patch tokens."""
    out = encoder.encode(image)
    tokens = out.tokens[0].numpy().astype(np.float64)  # (rows, cols, d)
    rows, cols, d = tokens.shape
    flat = tokens.reshape(rows * cols, d)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise AnalysisError("zero patch token")
    unit = flat / norms
    return unit @ unit.T
