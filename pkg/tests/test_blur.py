import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blurdistill import blur
from blurdistill.blur import (
    BlurError,
    BlurKernel,
    BlurPolicy,
    FAMILY_PARAM_MAX,
    add_sensor_noise,
    apply_ccmba,
    convolve,
    down_up_sample,
    identity_kernel,
    jpeg_degrade,
    parametric_kernel,
    quantize_8bit,
    radial_blur,
    random_ellipse_mask,
    rasterize_psf,
    sample_trajectory,
    straight_trajectory,
    synthesize_pair,
)

from conftest import make_smooth_image, make_textured_image
from oracles import naive_convolve


# ---------------------------------------------------------------- trajectories


@given(seed=st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_trajectory_arc_length_matches_declared(seed):
    rng = np.random.default_rng(seed)
    traj = sample_trajectory(rng, l_max=15.0, jitter_std=0.1)
    diffs = np.diff(traj.points, axis=0)
    arc = np.sum(np.hypot(diffs[:, 0], diffs[:, 1]))
    assert arc == pytest.approx(traj.length, abs=1e-9)
    assert 0.0 <= traj.length <= 15.0
    assert 0.0 <= traj.direction < np.pi


def test_trajectory_step_count():
    # n = max(1, ceil(L)) equal steps, so L = 4.3 gives 5 segments / 6 points.
    traj = straight_trajectory(4.3, 0.0)
    assert traj.points.shape == (6, 2)
    steps = np.hypot(*np.diff(traj.points, axis=0).T)
    np.testing.assert_allclose(steps, 4.3 / 5, atol=1e-12)


def test_straight_trajectory_is_a_line():
    traj = straight_trajectory(4.0, 0.0)
    np.testing.assert_allclose(traj.points[:, 1], 0.0, atol=1e-12)
    np.testing.assert_allclose(traj.points[:, 0], [0, 1, 2, 3, 4], atol=1e-12)


def test_zero_length_trajectory():
    traj = straight_trajectory(0.0)
    assert traj.points.shape == (1, 2)
    assert traj.length == 0.0


# --------------------------------------------------------------------- kernels


@given(seed=st.integers(0, 10_000))
@settings(max_examples=100, deadline=None)
def test_rasterized_psf_unit_mass_nonnegative(seed):
    rng = np.random.default_rng(seed)
    traj = sample_trajectory(rng, l_max=15.0, jitter_std=0.15)
    k = rasterize_psf(traj, 21)
    assert abs(k.weights.sum() - 1.0) <= 1e-6
    assert (k.weights >= 0).all()
    assert 0.0 <= k.severity <= 1.0


def test_zero_length_psf_is_delta():
    k = rasterize_psf(straight_trajectory(0.0), 9)
    expected = np.zeros((9, 9))
    expected[4, 4] = 1.0
    np.testing.assert_array_equal(k.weights, expected)
    assert k.severity == 0.0


def test_psf_severity_is_length_over_lmax():
    k = rasterize_psf(straight_trajectory(6.0), 15, l_max=15.0)
    assert k.severity == pytest.approx(6.0 / 15.0)
    k = rasterize_psf(straight_trajectory(9.0), 15, l_max=6.0)
    assert k.severity == 1.0  # clamped


def test_horizontal_psf_mass_stays_in_center_row():
    k = rasterize_psf(straight_trajectory(8.0, 0.0), 15)
    row_mass = k.weights.sum(axis=1)
    assert row_mass[7] == pytest.approx(1.0, abs=1e-9)
    # extent along the direction is about L + 1 pixels
    cols = np.nonzero(k.weights.sum(axis=0) > 1e-12)[0]
    assert 8 <= cols[-1] - cols[0] + 1 <= 10


def test_vertical_psf_mass_stays_in_center_column():
    k = rasterize_psf(straight_trajectory(8.0, np.pi / 2), 15)
    col_mass = k.weights.sum(axis=0)
    assert col_mass[7] == pytest.approx(1.0, abs=1e-9)


def test_identity_kernel():
    k = identity_kernel()
    assert k.weights.shape == (1, 1)
    assert k.weights[0, 0] == 1.0
    assert k.severity == 0.0


def test_bokeh_radius_one_is_plus_shape():
    k = parametric_kernel("bokeh", 1.0, 5)
    expected = np.zeros((5, 5))
    for dy, dx in [(0, 0), (0, 1), (0, -1), (1, 0), (-1, 0)]:
        expected[2 + dy, 2 + dx] = 1.0 / 5.0
    np.testing.assert_allclose(k.weights, expected, atol=1e-12)


def test_defocus_disc_radius_twice_sigma():
    # sigma 1.5 -> radius 3 -> 29 integer offsets with x^2 + y^2 <= 9
    k = parametric_kernel("defocus", 1.5, 9)
    support = k.weights > 0
    assert support.sum() == 29
    np.testing.assert_allclose(k.weights[support], 1.0 / 29.0, atol=1e-12)


def test_box_width_three():
    k = parametric_kernel("box", 3.0, 5)
    expected = np.zeros((5, 5))
    expected[1:4, 1:4] = 1.0 / 9.0
    np.testing.assert_allclose(k.weights, expected, atol=1e-12)


def test_box_fractional_coverage():
    # width 2: per-axis coverage [0, .5, 1, .5, 0] -> normalized outer product
    k = parametric_kernel("box", 2.0, 5)
    cover = np.array([0.0, 0.5, 1.0, 0.5, 0.0])
    expected = np.outer(cover, cover) / 4.0
    np.testing.assert_allclose(k.weights, expected, atol=1e-12)


def test_gaussian_kernel_symmetric_with_central_peak():
    k = parametric_kernel("gaussian", 1.2, 9)
    w = k.weights
    np.testing.assert_allclose(w, w[::-1, :], atol=1e-15)
    np.testing.assert_allclose(w, w[:, ::-1], atol=1e-15)
    np.testing.assert_allclose(w, w.T, atol=1e-15)
    assert w[4, 4] == w.max()


@given(
    family=st.sampled_from(["gaussian", "box", "bokeh", "defocus"]),
    frac=st.floats(0.05, 1.5),
)
@settings(max_examples=80, deadline=None)
def test_parametric_kernels_unit_mass_and_severity(family, frac):
    max_param = FAMILY_PARAM_MAX["defocus" if family == "defocus" else family]
    param = max(frac * max_param, 1.0 if family in ("box", "bokeh") else 1e-3)
    k = parametric_kernel(family, param, 31)
    assert abs(k.weights.sum() - 1.0) <= 1e-6
    assert (k.weights >= 0).all()
    assert k.severity == pytest.approx(min(1.0, param / max_param))


def test_kernel_validation_rejects_bad_mass():
    with pytest.raises(BlurError):
        BlurKernel(weights=np.full((3, 3), 0.2), family="gaussian", severity=0.5)


def test_kernel_validation_rejects_negative_weights():
    w = np.full((3, 3), 1.0 / 9.0)
    w[0, 0] = -w[0, 0]
    w[1, 1] += 2.0 / 9.0
    with pytest.raises(BlurError):
        BlurKernel(weights=w, family="gaussian", severity=0.5)


def test_even_kernel_size_rejected():
    with pytest.raises(BlurError):
        parametric_kernel("gaussian", 1.0, 8)
    with pytest.raises(BlurError):
        rasterize_psf(straight_trajectory(3.0), 10)


# ----------------------------------------------------------------- convolution


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("channels", [1, 3])
def test_convolve_matches_naive_oracle(seed, channels):
    img = make_smooth_image(seed, size=16, channels=channels)
    rng = np.random.default_rng(seed + 100)
    traj = sample_trajectory(rng, l_max=6.0, jitter_std=0.2)
    kernel = rasterize_psf(traj, 7, l_max=6.0)
    fast = convolve(img, kernel)
    slow = naive_convolve(img, kernel.weights)
    np.testing.assert_allclose(fast, slow, atol=1e-6)


def test_convolve_matches_oracle_on_textured_image(textured_image):
    kernel = parametric_kernel("gaussian", 1.0, 5)
    fast = convolve(textured_image, kernel)
    slow = naive_convolve(textured_image, kernel.weights)
    np.testing.assert_allclose(fast, slow, atol=1e-6)


def test_convolve_with_identity_is_noop(smooth_image):
    out = convolve(smooth_image, identity_kernel())
    np.testing.assert_allclose(out, smooth_image, atol=1e-7)


def test_convolve_preserves_mean_without_clipping(smooth_image):
    # unit-mass kernel + reflective boundary => mean is (nearly) preserved
    kernel = parametric_kernel("gaussian", 2.0, 9)
    out = convolve(smooth_image, kernel)
    assert out.mean() == pytest.approx(smooth_image.mean(), abs=2e-3)


def test_convolve_output_range_and_dtype(textured_image):
    out = convolve(textured_image, parametric_kernel("box", 5.0, 7))
    assert out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_convolve_rejects_oversized_kernel():
    img = np.zeros((8, 8), dtype=np.float32)
    with pytest.raises(BlurError):
        convolve(img, parametric_kernel("gaussian", 3.0, 21))


# ---------------------------------------------------------- image-space blurs


def test_radial_blur_zero_strength_is_identity(smooth_image):
    out = radial_blur(smooth_image, 0.0)
    np.testing.assert_allclose(out, smooth_image, atol=1e-7)


def test_radial_blur_smooths_texture(textured_image):
    out = radial_blur(textured_image, 5.0)
    assert out.shape == textured_image.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.var() < textured_image.var()


def test_jpeg_roundtrip_high_quality_close(smooth_image):
    out = jpeg_degrade(smooth_image, 100)
    assert np.abs(out - smooth_image).max() <= 0.02


def test_jpeg_lower_quality_distorts_more(textured_image):
    err70 = np.abs(jpeg_degrade(textured_image, 70) - textured_image).mean()
    err95 = np.abs(jpeg_degrade(textured_image, 95) - textured_image).mean()
    assert err70 > err95


def test_jpeg_grayscale_shape_preserved():
    img = make_smooth_image(3, size=24, channels=1)
    out = jpeg_degrade(img, 90)
    assert out.shape == img.shape


def test_noise_zero_sigma_identity(smooth_image, rng):
    out = add_sensor_noise(smooth_image, 0.0, rng)
    np.testing.assert_allclose(out, smooth_image, atol=1e-7)


def test_noise_statistics(rng):
    img = np.full((64, 64, 3), 0.5, dtype=np.float32)
    out = add_sensor_noise(img, 0.01, rng)
    resid = out - img
    assert abs(resid.mean()) < 1e-3
    assert resid.std() == pytest.approx(0.01, rel=0.1)


def test_down_up_sample_constant_image_exact():
    img = np.full((32, 32, 3), 0.42, dtype=np.float32)
    out = down_up_sample(img, 0.5)
    np.testing.assert_allclose(out, img, atol=1e-6)


def test_down_up_sample_removes_detail(textured_image):
    out = down_up_sample(textured_image, 0.5)
    assert out.shape == textured_image.shape
    assert out.var() < textured_image.var()


def test_quantize_8bit():
    img = np.array([[0.0, 0.5, 1.0], [0.123456, 0.9999, 1e-5]], dtype=np.float64)
    out = quantize_8bit(img)
    np.testing.assert_allclose(out, np.round(img * 255) / 255, atol=1e-7)


# ------------------------------------------------------------------ CCMBA mode


@given(seed=st.integers(0, 2_000))
@settings(max_examples=30, deadline=None)
def test_ellipse_mask_is_binary_with_sane_coverage(seed):
    g = np.random.default_rng(seed)
    mask = random_ellipse_mask((64, 64), g)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    coverage = mask.mean()
    assert 0.05 <= coverage <= 0.75


def test_ccmba_pure_regions_exact(smooth_image):
    kernel = parametric_kernel("gaussian", 1.5, 7)
    mask = np.zeros(smooth_image.shape[:2], dtype=np.float32)
    mask[:, :16] = 1.0
    out = apply_ccmba(smooth_image, mask, kernel)
    full = convolve(smooth_image, kernel)
    # 3-px feather band each side of the boundary at x=16
    np.testing.assert_allclose(out[:, :12], full[:, :12], atol=1e-6)
    np.testing.assert_allclose(out[:, 20:], smooth_image[:, 20:], atol=1e-6)
    band = out[:, 13:19]
    assert not np.allclose(band, full[:, 13:19], atol=1e-4)
    assert not np.allclose(band, smooth_image[:, 13:19], atol=1e-4)


def test_ccmba_rejects_mismatched_mask(smooth_image):
    with pytest.raises(BlurError):
        apply_ccmba(smooth_image, np.zeros((4, 4)), identity_kernel())


# ------------------------------------------------------------- paired sampling


def test_synthesize_pair_deterministic(smooth_image):
    policy = BlurPolicy(mode="mixed", p_defocus=0.5, p_jpeg=0.5, p_noise=0.5, p_resample=0.5)
    a = synthesize_pair(smooth_image, "real", policy, np.random.default_rng(42))
    b = synthesize_pair(smooth_image, "real", policy, np.random.default_rng(42))
    np.testing.assert_array_equal(a.blurred, b.blurred)
    assert a.degradation.to_json() == b.degradation.to_json()
    c = synthesize_pair(smooth_image, "real", policy, np.random.default_rng(43))
    assert not np.array_equal(a.blurred, c.blurred)


def test_synthesize_pair_vanishing_blur_budget(smooth_image):
    policy = BlurPolicy(l_max=1e-6, p_defocus=0.0, p_jpeg=0.0, p_noise=0.0, p_resample=0.0)
    pair = synthesize_pair(smooth_image, "fake", policy, np.random.default_rng(1))
    np.testing.assert_allclose(pair.blurred, pair.sharp, atol=1e-6)
    # severity stays relative to the policy cap, so only the pixels collapse
    assert 0.0 <= pair.degradation.severity <= 1.0


def test_synthesize_pair_record_consistency(smooth_image):
    policy = BlurPolicy(p_defocus=0.0, p_jpeg=0.0, p_noise=0.0, p_resample=0.0)
    pair = synthesize_pair(smooth_image, "real", policy, np.random.default_rng(5))
    rec = pair.degradation
    assert rec.defocus_sigma is None
    assert rec.jpeg_quality is None
    assert rec.noise_sigma is None
    assert rec.resample_scale is None
    assert rec.mode == "global"
    assert 0.0 <= rec.severity <= 1.0
    assert pair.sharp.shape == pair.blurred.shape


def test_synthesize_pair_ccmba_mode(smooth_image):
    policy = BlurPolicy(mode="ccmba", p_defocus=0.0, p_jpeg=0.0, p_noise=0.0, p_resample=0.0)
    pair = synthesize_pair(smooth_image, "real", policy, np.random.default_rng(9))
    assert pair.degradation.mode == "ccmba"


def test_synthesize_pair_rejects_bad_label(smooth_image):
    with pytest.raises(BlurError):
        synthesize_pair(smooth_image, "genuine", BlurPolicy(), np.random.default_rng(0))


def test_policy_dict_roundtrip():
    policy = BlurPolicy(l_max=10.0, p_jpeg=0.4, mode="mixed")
    again = BlurPolicy.from_dict(policy.to_dict())
    assert again == policy


def test_policy_validation():
    with pytest.raises(BlurError):
        BlurPolicy(l_max=0.0)
    with pytest.raises(BlurError):
        BlurPolicy(p_jpeg=1.5)
    with pytest.raises(BlurError):
        BlurPolicy(mode="sideways")


def test_default_kernel_size_odd_and_covers_lmax():
    policy = BlurPolicy(l_max=15.0)
    size = policy.resolved_kernel_size()
    assert size % 2 == 1
    assert size >= 15
