"""Evaluation protocol: conditions, severity buckets, sweeps, comparisons."""

import numpy as np
import pytest
import torch

from blurdistill.data import generate_toy_dataset, load_manifest, write_manifest, ManifestEntry
from blurdistill.evaluation import (
    EvalReport,
    EvaluationError,
    apply_eval_blur,
    blur_sweep,
    compare_reports,
    condition_name,
    evaluate,
    parse_condition,
    severity_bucket,
)
from blurdistill.models import EncoderConfig, FrozenEncoder, build_heads


@pytest.fixture(scope="module")
def encoder():
    return FrozenEncoder(EncoderConfig(image_size=32, patch_size=16, embed_dim=32, depth=1, num_heads=2))


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("evalcorpus")
    return generate_toy_dataset(10, np.random.default_rng(5), out, size=64)


@pytest.fixture(scope="module")
def heads(encoder):
    return build_heads("teacher", encoder.embed_dim, seed=21)


def _zeroed_heads(encoder):
    stack = build_heads("teacher", encoder.embed_dim, seed=0)
    with torch.no_grad():
        stack.classifier[-1].weight.zero_()
        stack.classifier[-1].bias.zero_()
    return stack


# ----------------------------------------------------------------- conditions


def test_parse_condition_forms():
    assert parse_condition("clean") == ("clean", None, None)
    assert parse_condition("blur:gaussian:2.0") == ("blur", "gaussian", 2.0)
    assert parse_condition("blur:motion_psf:15") == ("blur", "motion_psf", 15.0)


def test_parse_condition_rejects_garbage():
    for bad in ("sharp", "blur:gaussian", "blur:warp:3", "blur:gaussian:-1"):
        with pytest.raises(EvaluationError):
            parse_condition(bad)


def test_condition_name_roundtrip():
    assert condition_name(None, None) == "clean"
    assert parse_condition(condition_name("defocus", 1.5)) == ("blur", "defocus", 1.5)


def test_severity_bucket_edges():
    assert severity_bucket(0.0) == "severity:[0.000,0.333)"
    assert severity_bucket(1 / 3) == "severity:[0.333,0.667)"
    assert severity_bucket(0.67) == "severity:[0.667,1.000]"
    assert severity_bucket(1.0) == "severity:[0.667,1.000]"
    with pytest.raises(EvaluationError):
        severity_bucket(1.2)


def test_apply_eval_blur_zero_param_is_noop(rng):
    img = rng.uniform(0, 1, size=(32, 32, 3)).astype(np.float32)
    out = apply_eval_blur(img, "gaussian", 0.0, rng)
    np.testing.assert_array_equal(out, img)


def test_apply_eval_blur_smooths(rng):
    img = rng.uniform(0, 1, size=(32, 32, 3)).astype(np.float32)
    out = apply_eval_blur(img, "motion_psf", 9.0, np.random.default_rng(3))
    assert out.std() < img.std()


# ------------------------------------------------------------------- evaluate


def test_constant_classifier_scores_half(encoder, manifest):
    report = evaluate(_zeroed_heads(encoder), manifest, "clean", encoder, image_size=32)
    assert report.overall_accuracy == pytest.approx(0.5)
    assert report.n_total == 20


def test_evaluate_deterministic(encoder, manifest, heads):
    a = evaluate(heads, manifest, "blur:motion_psf:9", encoder, image_size=32)
    b = evaluate(heads, manifest, "blur:motion_psf:9", encoder, image_size=32)
    assert a == b


def test_evaluate_label_flip_symmetry(encoder, manifest, heads, tmp_path):
    report = evaluate(heads, manifest, "clean", encoder, image_size=32)
    flipped_entries = [
        ManifestEntry(
            id=e.id,
            path=str((manifest.parent / e.path).resolve()),
            label="fake" if e.label == "real" else "real",
            source=e.source,
        )
        for e in load_manifest(manifest)
    ]
    flipped = write_manifest(flipped_entries, tmp_path / "flipped.jsonl")
    flipped_report = evaluate(heads, flipped, "clean", encoder, image_size=32)
    assert flipped_report.overall_accuracy == pytest.approx(1.0 - report.overall_accuracy)


def test_evaluate_bucket_counts_partition(encoder, manifest, heads):
    report = evaluate(heads, manifest, "blur:motion_psf:9", encoder, image_size=32)
    assert sum(n for _, n in report.per_condition.values()) == report.n_total
    # L=9 of max 15 -> severity 0.6 -> middle bucket holds everything
    assert list(report.per_condition) == ["severity:[0.333,0.667)"]
    assert set(report.per_class) == {"real", "fake"}


def test_evaluate_uses_manifest_severity_annotations(encoder, heads, manifest, tmp_path):
    entries = load_manifest(manifest)
    annotated = [
        ManifestEntry(
            id=e.id,
            path=str((manifest.parent / e.path).resolve()),
            label=e.label,
            source=e.source,
            blur_scenario="camera_shake",
            severity_b=(i % 3) / 2.0,  # 0.0, 0.5, 1.0 cycling
        )
        for i, e in enumerate(entries)
    ]
    path = write_manifest(annotated, tmp_path / "annotated.jsonl")
    report = evaluate(heads, path, "clean", encoder, image_size=32)
    assert len(report.per_condition) == 3
    assert sum(n for _, n in report.per_condition.values()) == len(annotated)


def test_evaluate_unknown_condition_and_empty_manifest(encoder, heads, tmp_path, manifest):
    with pytest.raises(EvaluationError):
        evaluate(heads, manifest, "blurry", encoder, image_size=32)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(EvaluationError, match="empty"):
        evaluate(heads, empty, "clean", encoder, image_size=32)


def test_report_validation():
    with pytest.raises(EvaluationError):
        EvalReport("clean", 1.2, {}, {})
    with pytest.raises(EvaluationError):
        EvalReport("clean", 0.5, {"severity:[0.000,0.333)": (0.7, 10)}, {}, n_total=10)


def test_report_dict_roundtrip(encoder, manifest, heads):
    report = evaluate(heads, manifest, "clean", encoder, image_size=32)
    assert EvalReport.from_dict(report.to_dict()) == report


# ----------------------------------------------------------------- blur_sweep


def test_sweep_identity_cell_equals_clean(encoder, manifest, heads, tmp_path):
    clean = evaluate(heads, manifest, "clean", encoder, image_size=32)
    reports = blur_sweep(
        heads, manifest, ["motion_psf"], [0.0, 5.0], encoder,
        out_csv=tmp_path / "sweep.csv", image_size=32,
    )
    assert reports[0].overall_accuracy == clean.overall_accuracy
    assert reports[0].per_class == clean.per_class
    header, row = (tmp_path / "sweep.csv").read_text().splitlines()
    assert header == "family,0,5"
    assert row.startswith("motion_psf,")
    assert len(row.split(",")) == 3


def test_sweep_rejects_empty_grids(encoder, manifest, heads):
    with pytest.raises(EvaluationError):
        blur_sweep(heads, manifest, [], [1.0], encoder, image_size=32)
    with pytest.raises(EvaluationError):
        blur_sweep(heads, manifest, ["gaussian"], [], encoder, image_size=32)


# ------------------------------------------------------------- compare_reports


def test_compare_identical_reports_zero(encoder, manifest, heads):
    report = evaluate(heads, manifest, "clean", encoder, image_size=32)
    delta = compare_reports(report, report)
    assert delta["overall_delta"] == 0.0
    assert all(v["delta"] == 0.0 for v in delta["per_condition"].values())


def test_compare_swapped_negates(encoder, manifest, heads):
    a = evaluate(heads, manifest, "clean", encoder, image_size=32)
    b = evaluate(_zeroed_heads(encoder), manifest, "clean", encoder, image_size=32)
    ab = compare_reports(a, b)
    ba = compare_reports(b, a)
    assert ab["overall_delta"] == pytest.approx(-ba["overall_delta"])
    for key in ab["per_condition"]:
        assert ab["per_condition"][key]["delta"] == pytest.approx(
            -ba["per_condition"][key]["delta"]
        )


def test_compare_matches_hand_subtraction(encoder, manifest, heads):
    a = evaluate(heads, manifest, "clean", encoder, image_size=32)
    b = evaluate(_zeroed_heads(encoder), manifest, "clean", encoder, image_size=32)
    delta = compare_reports(a, b)
    assert delta["overall_delta"] == pytest.approx(a.overall_accuracy - b.overall_accuracy)
    for key, entry in delta["per_condition"].items():
        assert entry["delta"] == pytest.approx(
            a.per_condition[key][0] - b.per_condition[key][0]
        )


def test_compare_grid_mismatch_rejected(encoder, manifest, heads):
    clean = evaluate(heads, manifest, "clean", encoder, image_size=32)
    blurred = evaluate(heads, manifest, "blur:motion_psf:9", encoder, image_size=32)
    with pytest.raises(EvaluationError, match="grids"):
        compare_reports(clean, blurred)
