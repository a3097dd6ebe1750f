"""Command-line interface: train / attack / eval / analyze-freq / sweep-lambda.

The CLI is a thin layer over the library: every subcommand parses
arguments, loads checkpoints/manifests, calls the corresponding library
functions, and writes files.  All pixel-unit arguments (budgets, radii,
step sizes) are in 0-255 units here and divided by 255 once.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import evaluation, plots
from .attacks import (
    DEFAULT_ENSEMBLE_WEIGHT,
    attack_plan_from_name,
    plan_from_config,
)
from .embedder import EmbedderModel
from .errors import FacecloakError
from .evaluation import (
    EvalReport,
    calibrate_threshold,
    generate_adv_set,
    lambda_ablation,
    ssim,
    transfer_matrix,
)
from .freq import band_spectrum, jpeg_attenuation_profile, masked_accuracy_sweep
from .imaging import POSITIVE, load_image, load_pair_images, load_pairs, save_image
from .training import (
    IdentityDataset,
    TrainConfig,
    adversarial_train,
    prime_config,
    subprime_config,
)


def _parse_qualities(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip().lower()
        out.append(None if tok in ("none", "w/o", "off") else int(tok))
    return tuple(out)


def _load_sources(args):
    strong = EmbedderModel.load(args.source)
    if args.source2 is None:
        return ((strong, 1.0),)
    light = EmbedderModel.load(args.source2)
    return ((strong, 1.0), (light, args.ensemble_weight))


def _build_plan(args, sources):
    if args.plan is not None:
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan = plan_from_config(json.load(fh), sources=sources)
    else:
        plan = attack_plan_from_name(args.attack, sources=sources)
    overrides = {}
    if args.epsilon_255 is not None:
        overrides["epsilon"] = args.epsilon_255 / 255.0
    if args.step_255 is not None:
        overrides["step_size"] = args.step_255 / 255.0
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.dct_low_cutoff is not None:
        overrides["dct_low_cutoff"] = args.dct_low_cutoff
    if args.wrap_jpeg_quality is not None:
        overrides["jpeg_wrapper_quality"] = args.wrap_jpeg_quality
    if overrides:
        plan = replace(plan, **overrides)
    return plan


def cmd_train(args):
    dataset = IdentityDataset.from_folder(args.data, size=args.size)
    if args.preset == "prime":
        cfg = prime_config()
    elif args.preset == "subprime":
        cfg = subprime_config()
    elif args.preset == "standard":
        cfg = TrainConfig(radius=0.0, epochs=20, lr_drop_epochs=(10,))
    else:
        cfg = TrainConfig()
    overrides = {"dataset_id": os.path.basename(os.path.abspath(args.data)),
                 "seed": args.seed, "input_size": args.size}
    if args.radius is not None:
        overrides["radius"] = args.radius
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
        drops = tuple(d for d in cfg.lr_drop_epochs if d <= args.epochs)
        overrides["lr_drop_epochs"] = args.lr_drops or drops
    elif args.lr_drops:
        overrides["lr_drop_epochs"] = args.lr_drops
    if args.arch is not None:
        overrides["architecture_id"] = args.arch
    if args.embed_dim is not None:
        overrides["embed_dim"] = args.embed_dim
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    cfg = replace(cfg, **overrides)
    model = adversarial_train(cfg, dataset, out_path=args.out, log_every=args.log_every)
    print(f"trained {model.model_id()} ({cfg.epochs} epochs, radius {cfg.radius}) -> {args.out}")


def cmd_attack(args):
    sources = _load_sources(args)
    plan = _build_plan(args, sources)
    manifest = load_pairs(args.pairs)
    positives = manifest.positives()
    probes, enrolled, _ = load_pair_images(positives, size=sources[0][0].input_size)
    if any(t.config()["kind"] == "admix" for t in plan.transforms):
        plan = plan.with_admix_pool(enrolled[::-1].copy())
    os.makedirs(args.out, exist_ok=True)
    adv_dir = os.path.join(args.out, "adv")
    os.makedirs(adv_dir, exist_ok=True)
    adv_set = generate_adv_set(
        plan, probes, enrolled, attack_id=args.attack or "plan", chunk_size=args.chunk_size
    )
    records = []
    for i, entry in enumerate(positives):
        name = f"pair_{i:04d}.png"
        save_image(adv_set.adv_probes[i], os.path.join(adv_dir, name))
        if args.save_jpeg_quality is not None:
            save_image(
                adv_set.adv_probes[i],
                os.path.join(adv_dir, f"pair_{i:04d}_q{args.save_jpeg_quality}.jpg"),
                fmt="jpeg",
                quality=args.save_jpeg_quality,
            )
        delta = adv_set.adv_probes[i].astype(np.float64) - probes[i].astype(np.float64)
        records.append(
            {
                "pair_index": i,
                "probe": entry.probe_path,
                "enrolled": entry.enrolled_path,
                "subject": entry.subject_id,
                "adv_path": os.path.join("adv", name),
                "linf_255": float(np.abs(delta).max() * 255.0),
                "ssim": ssim(probes[i], adv_set.adv_probes[i]),
                "plan_digest": adv_set.plan_digest,
            }
        )
    with open(os.path.join(args.out, "results.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    meta = {
        "attack_id": adv_set.attack_id,
        "plan": plan.config(),
        "source_paths": [args.source] + ([args.source2] if args.source2 else []),
        "manifest": os.path.abspath(args.pairs),
        "seed": plan.seed,
        "n_pairs": len(positives),
    }
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"{adv_set.attack_id}: wrote {len(positives)} adversarial probes to {args.out}")


def cmd_eval(args):
    with open(os.path.join(args.adv, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    manifest = load_pairs(args.pairs or meta["manifest"])
    targets = []
    for path in args.target:
        model = EmbedderModel.load(path)
        probes, enrolled, labels = load_pair_images(manifest, size=model.input_size)
        rule = calibrate_threshold(model, probes, enrolled, labels)
        targets.append((os.path.splitext(os.path.basename(path))[0], model, rule))
    positives = manifest.positives()
    size = targets[0][1].input_size
    probes, enrolled, _ = load_pair_images(positives, size=size)
    adv_probes = np.stack(
        [
            load_image(os.path.join(args.adv, f"adv/pair_{i:04d}.png"), size=size)
            for i in range(len(positives))
        ]
    )
    adv_set = evaluation.AdvSet(
        attack_id=meta["attack_id"],
        source_ids=tuple(s[0] for s in meta["plan"]["sources"]),
        seed=meta["seed"],
        probes=probes,
        enrolled=enrolled,
        adv_probes=adv_probes,
    )
    report = transfer_matrix(
        [adv_set], targets, qualities=_parse_qualities(args.jpeg_quality),
        include_sources=True,
    )
    report.provenance = {"adv_dir": os.path.abspath(args.adv), "meta": meta}
    report.save(args.out)
    os.makedirs(os.path.join(args.out, "plots"), exist_ok=True)
    plots.plot_asr_bars(report, os.path.join(args.out, "plots", "asr.png"))
    for row in report.sorted_rows():
        q = "w/o" if row.jpeg_quality is None else f"q{row.jpeg_quality}"
        print(f"{row.attack_id} -> {row.target_id} [{q}]: asr {row.asr:.3f}")
    print(f"report written to {args.out}")


def cmd_analyze_freq(args):
    model = EmbedderModel.load(args.model)
    manifest = load_pairs(args.pairs)
    probes, enrolled, labels = load_pair_images(manifest, size=model.input_size)
    rule = calibrate_threshold(model, probes, enrolled, labels)
    pos = [i for i, l in enumerate(labels) if l == POSITIVE]
    p_pos, e_pos = probes[pos], enrolled[pos]
    os.makedirs(args.out, exist_ok=True)

    rows = masked_accuracy_sweep(model, rule, (p_pos, e_pos))
    with open(os.path.join(args.out, "masked_accuracy.csv"), "w", encoding="utf-8") as fh:
        fh.write("band,accuracy_drop\n")
        for band, drop in rows:
            fh.write(f"{band},{drop!r}\n")
    plots.plot_accuracy_drop(rows, os.path.join(args.out, "masked_accuracy.png"))

    plan = attack_plan_from_name(
        args.attack, sources=[(model, 1.0)],
        **({"seed": args.seed} if args.seed is not None else {}),
    )
    adv_set = generate_adv_set(plan, p_pos, e_pos, attack_id=args.attack)
    deltas = adv_set.adv_probes.astype(np.float64) - p_pos.astype(np.float64)
    mean_profile = band_spectrum(deltas[0])
    for d in deltas[1:]:
        mean_profile.band_energy += band_spectrum(d).band_energy
    mean_profile.band_energy /= len(deltas)
    mean_profile.to_csv(os.path.join(args.out, "perturbation_spectrum.csv"))

    atten = jpeg_attenuation_profile(p_pos, adv_set.adv_probes, args.jpeg_quality)
    atten.to_csv(os.path.join(args.out, f"attenuation_q{args.jpeg_quality}.csv"))
    plots.plot_band_profiles(
        {"perturbation": mean_profile, f"stripped@q{args.jpeg_quality}": atten},
        os.path.join(args.out, "spectra.png"),
    )
    print(f"frequency analysis written to {args.out}")


def cmd_sweep_lambda(args):
    strong = EmbedderModel.load(args.f1)
    light = EmbedderModel.load(args.f2)
    target_model = EmbedderModel.load(args.target)
    manifest = load_pairs(args.pairs)
    probes, enrolled, labels = load_pair_images(manifest, size=strong.input_size)
    rule = calibrate_threshold(target_model, probes, enrolled, labels)
    pos = [i for i, l in enumerate(labels) if l == POSITIVE]
    p_pos, e_pos = probes[pos], enrolled[pos]
    plan = attack_plan_from_name(
        args.attack, **({"seed": args.seed} if args.seed is not None else {})
    )
    grid = tuple(float(x) for x in args.grid.split(","))
    quality = None if args.jpeg_quality.lower() == "none" else int(args.jpeg_quality)
    curve = lambda_ablation(
        plan, strong, light, p_pos, e_pos,
        ("target", target_model, rule), lambda_grid=grid, quality=quality,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "lambda_curve.csv"), "w", encoding="utf-8") as fh:
        fh.write("lambda,asr\n")
        for lam, asr in curve:
            fh.write(f"{lam!r},{asr!r}\n")
    plots.plot_lambda_curve(curve, os.path.join(args.out, "lambda_curve.png"))
    for lam, asr in curve:
        print(f"lambda {lam:4.2f}: asr {asr:.3f}")
    print(f"sweep written to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="facecloak",
        description="Compression-resistant adversarial perturbations for face verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedder (standard or robust)")
    p.add_argument("--data", required=True, help="identity tree: <root>/<subject>/*.png")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--preset", choices=["prime", "subprime", "standard", "none"],
                   default="none", help="recipe presets; prime = strongly robust")
    p.add_argument("--radius", type=float, default=None, help="training radius, 0-255 units")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr-drops", type=lambda s: tuple(int(x) for x in s.split(",")),
                   default=None)
    p.add_argument("--arch", default=None, help="conv4 | conv4_slim | conv4_pool | tiny")
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--size", type=int, default=112)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="generate adversarial probes for a pair manifest")
    p.add_argument("--pairs", required=True, help="TSV pair manifest")
    p.add_argument("--source", required=True, help="source model checkpoint")
    p.add_argument("--source2", default=None,
                   help="optional second (lightly robust) source for the ensemble")
    p.add_argument("--ensemble-weight", type=float, default=DEFAULT_ENSEMBLE_WEIGHT,
                   help="weight on the second source's loss")
    p.add_argument("--attack", default="MI",
                   help="named stack: FGSM | MI | TI | SI | DI-MI | ADMIX | ADMIX-DI-MI")
    p.add_argument("--plan", default=None, help="JSON plan file (overrides --attack)")
    p.add_argument("--epsilon-255", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-255", type=float, default=None)
    p.add_argument("--dct-low-cutoff", type=int, default=None)
    p.add_argument("--wrap-jpeg-quality", type=int, default=None,
                   help="differentiate through the approximate codec at this quality")
    p.add_argument("--save-jpeg-quality", type=int, default=None,
                   help="additionally save each adversarial probe as JPEG at this quality")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chunk-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="transfer-evaluate an attack output directory")
    p.add_argument("--adv", required=True, help="directory produced by `attack`")
    p.add_argument("--target", action="append", required=True,
                   help="target checkpoint (repeatable)")
    p.add_argument("--pairs", default=None, help="manifest override")
    p.add_argument("--jpeg-quality", default="none,75,50",
                   help="comma list of qualities; 'none' = uncompressed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-freq", help="frequency lab: sweeps and spectra")
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--attack", default="FGSM")
    p.add_argument("--jpeg-quality", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_freq)

    p = sub.add_parser("sweep-lambda", help="ablate the ensemble weight")
    p.add_argument("--f1", required=True, help="strongly robust source checkpoint")
    p.add_argument("--f2", required=True, help="lightly robust source checkpoint")
    p.add_argument("--target", required=True, help="target checkpoint")
    p.add_argument("--pairs", required=True)
    p.add_argument("--attack", default="MI")
    p.add_argument("--grid", default="0,0.1,0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--jpeg-quality", default="none")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_lambda)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except FacecloakError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
