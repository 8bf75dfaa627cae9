"""Command-line pipeline: dataset generation through analysis plots.

Every subcommand is deterministic given its --seed, and all primary
outputs (manifests, images, checkpoints, reports, CSV grids) are
byte-stable across reruns with the same arguments.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .analysis import attention_similarity, patch_similarity_matrix, radial_spectrum, spectrum_gap
from .blur import BlurPolicy, synthesize_pair
from .checkpoints import load_checkpoint, save_json
from .config import DEFAULT_SWEEP_PARAMS, RunConfig, load_config
from .data import (
    ManifestEntry,
    generate_toy_dataset,
    load_image,
    load_manifest,
    preprocess,
    resolve_path,
    save_image,
    write_manifest,
)
from .evaluation import blur_sweep, compare_reports, evaluate, EvalReport
from .models import FrozenEncoder
from .training import distill_student, load_heads, train_teacher

_PLOT_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "eval_seed", None) is not None:
        config = replace(config, eval_seed=args.eval_seed)
    if getattr(args, "image_size", None) is not None:
        config = replace(
            config,
            teacher=replace(config.teacher, image_size=args.image_size),
            student=replace(config.student, image_size=args.image_size),
        )
    if getattr(args, "epochs", None) is not None:
        phase = "teacher" if args.command == "train-teacher" else "student"
        config = replace(config, **{phase: replace(getattr(config, phase), epochs=args.epochs)})
    if getattr(args, "batch_size", None) is not None:
        config = replace(
            config,
            teacher=replace(config.teacher, batch_size=args.batch_size),
            student=replace(config.student, batch_size=args.batch_size),
        )
    return config


def _check_fingerprint(args, meta: dict, config: RunConfig):
    if getattr(args, "config", None) is None:
        return
    expected = config.fingerprint()
    found = meta.get("fingerprint", "")
    if found and found != expected and not args.allow_fingerprint_mismatch:
        raise SystemExit(
            f"checkpoint fingerprint {found} != config fingerprint {expected}; "
            "pass --allow-fingerprint-mismatch to proceed"
        )


def cmd_gen_toy(args) -> int:
    rng = np.random.default_rng(args.seed)
    manifest = generate_toy_dataset(args.n_per_class, rng, args.out)
    print(manifest)
    return 0


_SCENARIO_BY_MODE = {"global": "camera_shake", "ccmba": "object_motion"}


def cmd_synth_pairs(args) -> int:
    entries = load_manifest(args.manifest)
    if not entries:
        raise SystemExit(f"empty manifest: {args.manifest}")
    policy = BlurPolicy(mode=args.mode, l_max=args.l_max, jitter_std=args.jitter_std)
    out_dir = Path(args.out)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    degraded_entries, records = [], []
    for idx, entry in enumerate(entries):
        rng = np.random.default_rng([args.seed, idx])
        image = load_image(resolve_path(args.manifest, entry))
        pair = synthesize_pair(image, entry.label, policy, rng)
        rel = f"images/{entry.id}_blur.png"
        save_image(pair.blurred, out_dir / rel)
        degraded_entries.append(
            ManifestEntry(
                id=f"{entry.id}_blur",
                path=rel,
                label=entry.label,
                source=entry.source,
                blur_scenario=_SCENARIO_BY_MODE[pair.degradation.mode],
                severity_b=pair.degradation.kernel.severity,
            )
        )
        records.append({"id": f"{entry.id}_blur", **pair.degradation.to_json()})
    manifest_path = write_manifest(degraded_entries, out_dir / "manifest.jsonl")
    save_json(
        out_dir / "degradations.json",
        {"policy": policy.to_dict(), "seed": args.seed, "records": records},
    )
    print(manifest_path)
    return 0


def cmd_train_teacher(args) -> int:
    config = _load_run_config(args)
    encoder = FrozenEncoder(config.encoder)
    result = train_teacher(
        args.manifest,
        config.teacher,
        encoder,
        args.out,
        seed=config.seed,
        fingerprint=config.fingerprint(),
    )
    print(f"{result.checkpoint_path} train_accuracy={result.final_train_accuracy:.4f}")
    return 0


def cmd_distill(args) -> int:
    config = _load_run_config(args)
    encoder = FrozenEncoder(config.encoder)
    result = distill_student(
        args.manifest,
        args.teacher_ckpt,
        config.student,
        encoder,
        args.out,
        seed=config.seed,
        fingerprint=config.fingerprint(),
    )
    print(f"{result.checkpoint_path} train_accuracy={result.final_train_accuracy:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    encoder = FrozenEncoder(config.encoder)
    heads, meta = load_heads(args.ckpt)
    _check_fingerprint(args, meta, config)
    report = evaluate(
        args.ckpt,
        args.manifest,
        args.condition,
        encoder,
        eval_seed=config.eval_seed,
        image_size=config.teacher.image_size,
    )
    save_json(args.out, report.to_dict())
    print(f"{args.out} overall_accuracy={report.overall_accuracy:.4f}")
    return 0


def cmd_blur_sweep(args) -> int:
    config = _load_run_config(args)
    encoder = FrozenEncoder(config.encoder)
    heads, meta = load_heads(args.ckpt)
    _check_fingerprint(args, meta, config)
    families = args.families.split(",") if args.families else list(config.eval_families)
    params = (
        [float(p) for p in args.params.split(",")]
        if args.params
        else list(config.eval_params)
    )
    out_dir = Path(args.out)
    reports = blur_sweep(
        args.ckpt,
        args.manifest,
        families,
        params,
        encoder,
        eval_seed=config.eval_seed,
        out_csv=out_dir / "sweep.csv",
        image_size=config.teacher.image_size,
    )
    save_json(out_dir / "sweep.json", {"reports": [r.to_dict() for r in reports]})
    print(out_dir / "sweep.csv")
    return 0


def _analysis_images(manifest_path, limit: int, image_size: int):
    """Load up to `limit` images per class, preprocessed for analysis."""
    entries = load_manifest(manifest_path)
    if not entries:
        raise SystemExit(f"empty manifest: {manifest_path}")
    by_label = {"real": [], "fake": []}
    for entry in entries:
        bucket = by_label[entry.label]
        if len(bucket) >= limit:
            continue
        img = preprocess(load_image(resolve_path(manifest_path, entry)), image_size, "eval_centercrop")
        bucket.append(img)
    return by_label


def cmd_analyze(args) -> int:
    config = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_size = config.teacher.image_size
    by_label = _analysis_images(args.manifest, args.limit, image_size)
    images = by_label["real"] + by_label["fake"]

    if args.kind == "spectrum":
        curves = {
            label: np.mean([radial_spectrum(img).energy for img in imgs], axis=0)
            for label, imgs in by_label.items()
            if imgs
        }
        bins = radial_spectrum(images[0]).bin_centers
        payload = {"bin_centers": list(bins), "curves": {k: list(v) for k, v in curves.items()}}
        if by_label["real"] and by_label["fake"]:
            payload["gap_band_0.25_0.5"] = spectrum_gap(by_label["real"], by_label["fake"])
        save_json(out_dir / "spectrum.json", payload)
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, energy in curves.items():
            ax.plot(bins, energy, label=label)
        ax.set_xlabel("normalized frequency")
        ax.set_ylabel("log10 power")
        ax.axvspan(0.25, 0.5, alpha=0.1, color="gray")
        ax.legend()
        fig.savefig(out_dir / "spectrum.png", **_PLOT_KWARGS)
        plt.close(fig)
        print(out_dir / "spectrum.json")
        return 0

    encoder = FrozenEncoder(config.encoder)
    if args.kind == "attention":
        sizes = [int(s) for s in args.sizes.split(",")]
        curve = attention_similarity(
            encoder, images, sizes, rng=np.random.default_rng(config.eval_seed)
        )
        save_json(out_dir / "attention.json", curve.to_json())
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(curve.kernel_sizes, curve.similarity, marker="o")
        ax.set_xlabel("motion kernel size")
        ax.set_ylabel("attention cosine similarity")
        ax.set_ylim(0, 1.05)
        fig.savefig(out_dir / "attention.png", **_PLOT_KWARGS)
        plt.close(fig)
        print(out_dir / "attention.json")
        return 0

    # patchsim: mean patch-token Gram matrix per class
    payload = {}
    fig, axes = plt.subplots(1, max(1, len([k for k, v in by_label.items() if v])), figsize=(10, 4))
    axes = np.atleast_1d(axes)
    plot_idx = 0
    for label, imgs in by_label.items():
        if not imgs:
            continue
        mean_gram = np.mean([patch_similarity_matrix(encoder, img) for img in imgs], axis=0)
        payload[label] = [[round(float(v), 6) for v in row] for row in mean_gram]
        axes[plot_idx].imshow(mean_gram, vmin=-1, vmax=1, cmap="coolwarm")
        axes[plot_idx].set_title(label)
        plot_idx += 1
    save_json(out_dir / "patchsim.json", payload)
    fig.savefig(out_dir / "patchsim.png", **_PLOT_KWARGS)
    plt.close(fig)
    print(out_dir / "patchsim.json")
    return 0


def cmd_compare(args) -> int:
    import json

    with open(args.report_a, "r", encoding="utf-8") as fh:
        a = EvalReport.from_dict(json.load(fh))
    with open(args.report_b, "r", encoding="utf-8") as fh:
        b = EvalReport.from_dict(json.load(fh))
    delta = compare_reports(a, b)
    if args.out:
        save_json(args.out, delta)
    print(f"overall_delta={delta['overall_delta']:+.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blurdistill", description="Blur-robust detector distillation pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate the synthetic real/fake texture dataset")
    p.add_argument("--n-per-class", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("synth-pairs", help="degrade a manifest into blurred counterparts")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mode", choices=["global", "ccmba", "mixed"], default="global")
    p.add_argument("--l-max", type=float, default=15.0)
    p.add_argument("--jitter-std", type=float, default=0.3)
    p.set_defaults(func=cmd_synth_pairs)

    for name, handler in (("train-teacher", cmd_train_teacher), ("distill", cmd_distill)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a manifest")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--config", default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--image-size", type=int, default=None)
        if name == "distill":
            p.add_argument("--teacher-ckpt", required=True)
        p.set_defaults(func=handler)

    p = sub.add_parser("evaluate", help="score a checkpoint under one condition")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--condition", default="clean")
    p.add_argument("--seed", dest="eval_seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--allow-fingerprint-mismatch", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("blur-sweep", help="grid of blur conditions -> CSV + reports")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--families", default=None, help="comma list, e.g. motion_psf,gaussian")
    p.add_argument("--params", default=None, help="comma list, e.g. 0,5,10,15")
    p.add_argument("--seed", dest="eval_seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--allow-fingerprint-mismatch", action="store_true")
    p.set_defaults(func=cmd_blur_sweep)

    p = sub.add_parser("analyze", help="spectral / attention / patch-similarity analyses")
    p.add_argument("kind", choices=["spectrum", "attention", "patchsim"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", default=None, help="unused by spectrum; reserved for parity")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=32)
    p.add_argument("--sizes", default="1,5,9,13,17")
    p.add_argument("--seed", dest="eval_seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="delta table between two evaluation reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
