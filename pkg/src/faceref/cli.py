"""Unified command-line entry point.

Subcommands: degrade, build-pool, synth-refs, synth-dataset, train,
restore, evaluate. Every run writes a reproducibility stamp (config
snapshot + seed + version) next to its outputs, and the analytical
subcommands emit machine-readable JSON plus rendered figures.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .backbone import ToyRestorationModel, load_checkpoint, save_checkpoint
from .config import AppConfig, load_config
from .data import (ImageStatisticsExtractor, load_manifest, make_corpus,
                   pixel_similarity, toy_identity_generator)
from .degradation import DegradationRanges, make_training_pair
from .errors import FaceRefError
from .identity import EMBEDDER_REGISTRY, RECOGNIZER_REGISTRY, PixelFaceRecognizer
from .imio import list_images, read_image, write_image
from .inference import SamplerConfig, restore
from .metrics import ids, lmd, psnr, run_external_metric, ssim
from .refpool import PosePool, build_pose_pool, synthesize_reference_set
from .training import TrainingConfig, run_training


def _write_stamp(out_dir, args, config):
    os.makedirs(out_dir, exist_ok=True)
    stamp = {
        "version": __version__,
        "argv": sys.argv[1:],
        "seed": getattr(args, "seed", None),
        "config": config.to_json() if config is not None else None,
    }
    with open(os.path.join(out_dir, "run_stamp.json"), "w") as f:
        json.dump(stamp, f, indent=2)


def _app_config(args):
    config = load_config(args.config) if getattr(args, "config", None) \
        else AppConfig().validate()
    return config


def _parse_range(text, integral=False):
    lo, hi = (float(v) for v in text.split(","))
    if integral:
        lo, hi = int(lo), int(hi)
    return (lo, hi)


def _build_model(config, seed=0):
    embedder = EMBEDDER_REGISTRY[config.encoder.embedder](dim=config.encoder.dim)
    recognizer = RECOGNIZER_REGISTRY[config.encoder.recognizer]()
    return ToyRestorationModel(
        token_dim=config.encoder.dim,
        channels=config.model.channels,
        latent_scale=config.model.latent_scale,
        timesteps=config.model.timesteps,
        embedder=embedder, recognizer=recognizer, seed=seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_degrade(args):
    config = _app_config(args)
    ranges = config.degradation
    overrides = {}
    if args.sigma:
        overrides["sigma_range"] = _parse_range(args.sigma)
    if args.scale:
        overrides["r_range"] = _parse_range(args.scale, integral=True)
    if args.noise:
        overrides["delta_range"] = _parse_range(args.noise)
    if args.quality:
        overrides["q_range"] = _parse_range(args.quality, integral=True)
    if overrides:
        ranges = DegradationRanges(**{**vars(ranges), **overrides})
    ranges.validate()
    _write_stamp(args.out, args, config)

    paths = list_images(getattr(args, "in"))
    if not paths:
        raise FaceRefError(f"no images found in {getattr(args, 'in')}")

    def degrade_one(idx_path):
        idx, path = idx_path
        rng = np.random.default_rng([args.seed, idx])
        lq, _ = make_training_pair(read_image(path), ranges, rng)
        out_path = os.path.join(args.out, os.path.basename(path))
        write_image(out_path, lq)
        return out_path

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        written = list(pool.map(degrade_one, enumerate(paths)))
    print(f"degraded {len(written)} images -> {args.out}")
    return 0


def cmd_build_pool(args):
    config = _app_config(args)
    c1 = args.c1 if args.c1 is not None else config.pool.c1
    c2 = args.c2 if args.c2 is not None else config.pool.c2
    rng = np.random.default_rng(args.seed)
    paths = list_images(args.images)
    images = ((os.path.splitext(os.path.basename(p))[0], read_image(p))
              for p in paths)
    pool = build_pose_pool(images, ImageStatisticsExtractor(), c1, c2, rng)
    pool.save(args.out)
    _write_stamp(os.path.dirname(os.path.abspath(args.out)) or ".", args, config)
    nonempty = len(pool.nonempty_indices())
    print(f"pool: {len(paths)} images -> {nonempty} nonempty of {c1 * c2} "
          f"subsets; {len(pool.skipped)} skipped")
    return 0


def cmd_synth_refs(args):
    config = _app_config(args)
    gate = config.pool.gate()
    if args.delta is not None or args.max_attempts is not None:
        from .refpool import IdentityGateConfig
        gate = IdentityGateConfig(
            delta=args.delta if args.delta is not None else gate.delta,
            max_attempts=args.max_attempts if args.max_attempts is not None
            else gate.max_attempts)
    pool = PosePool.load(args.pool)
    pose_images = {os.path.splitext(os.path.basename(p))[0]: read_image(p)
                   for p in list_images(args.pose_images)}
    identity = read_image(args.identity)
    rng = np.random.default_rng(args.seed)
    refs, report = synthesize_reference_set(
        identity, pool, toy_identity_generator, pixel_similarity, gate,
        args.n_refs, rng, pose_images=pose_images)
    _write_stamp(args.out, args, config)
    for k, ref in enumerate(refs):
        write_image(os.path.join(args.out, f"ref{k}.png"), ref)
    with open(os.path.join(args.out, "synthesis_report.json"), "w") as f:
        json.dump(report.to_json(), f, indent=2)
    print(f"synthesized {len(refs)}/{args.n_refs} references -> {args.out}")
    return 0


def cmd_synth_dataset(args):
    _write_stamp(args.out, args, None)
    records, manifest = make_corpus(args.identities, args.per_identity,
                                    size=args.size, seed=args.seed,
                                    out_dir=args.out)
    print(f"wrote {len(records)} images and manifest -> {args.out}")
    return 0


def cmd_train(args):
    config = _app_config(args)
    tc = config.training
    stage = {"one": "one_stage", "1": "stage1", "2": "stage2"}[args.stage]
    tc = TrainingConfig(stage=stage,
                        dropout_prob=tc.dropout_prob,
                        learning_rate=args.lr if args.lr else tc.learning_rate,
                        iterations=args.iterations if args.iterations is not None
                        else tc.iterations,
                        batch_size=tc.batch_size,
                        seed=args.seed if args.seed is not None else tc.seed,
                        max_refs=tc.max_refs)
    _write_stamp(args.out, args, config)

    manifest = load_manifest(args.data)
    items = []
    for i, entry in enumerate(manifest.entries):
        hq = read_image(entry.path)
        rng = np.random.default_rng([tc.seed, i])
        lq, _ = make_training_pair(hq, config.degradation, rng)
        items.append({"hq": hq, "lq": lq,
                      "refs": [read_image(p) for p in entry.references]})

    model = _build_model(config, seed=tc.seed)
    if args.resume:
        load_checkpoint(model, args.resume)
    report = run_training(tc, items, model, out_dir=args.out)
    report.save(os.path.join(args.out, "training_report.json"))
    if report.losses:
        from .figures import save_loss_curve
        save_loss_curve(report.losses,
                        os.path.join(args.out, "loss_curve.png"),
                        title=f"{stage} loss")
    print(f"trained {tc.iterations} iterations ({stage}); "
          f"final loss {report.losses[-1] if report.losses else float('nan'):.4f}")
    return 0


def _refs_for(lq_path, refs_arg):
    stem = os.path.splitext(os.path.basename(lq_path))[0]
    if os.path.isdir(refs_arg):
        return [read_image(p) for p in list_images(refs_arg)]
    manifest = load_manifest(refs_arg)
    for entry in manifest.entries:
        if entry.image_id == stem or \
                os.path.splitext(os.path.basename(entry.path))[0] == stem:
            return [read_image(p) for p in entry.references]
    return []


def cmd_restore(args):
    config = _app_config(args)
    sampler = SamplerConfig(steps=args.steps,
                            t_start=args.t_start,
                            lambda_cfg=getattr(args, "lambda"),
                            seed=args.seed,
                            cfg_space=args.cfg_space)
    _write_stamp(args.out, args, config)
    model = _build_model(config, seed=args.seed)
    if args.checkpoint:
        load_checkpoint(model, args.checkpoint)

    results = []
    for lq_path in list_images(args.lq):
        lq = read_image(lq_path)
        refs = _refs_for(lq_path, args.refs) if args.refs else []
        out, info = restore(lq, refs, model, sampler)
        name = os.path.basename(lq_path)
        out_path = os.path.join(args.out, name)
        write_image(out_path, out)
        if args.emit_comparison:
            from .figures import save_comparison_grid
            grid_path = os.path.join(
                args.out, os.path.splitext(name)[0] + "_comparison.png")
            save_comparison_grid(lq, out, refs, grid_path)
        results.append({"image": name, **info})
    with open(os.path.join(args.out, "restore_report.json"), "w") as f:
        json.dump(results, f, indent=2)
    print(f"restored {len(results)} images -> {args.out}")
    return 0


def cmd_evaluate(args):
    config = _app_config(args)
    with open(args.pairs) as f:
        pairs = json.load(f)["pairs"]

    recognizer = PixelFaceRecognizer()
    rows = []
    for pair in pairs:
        out = read_image(pair["output"])
        target = read_image(pair["target"])
        row = {
            "id": pair["id"],
            "psnr": psnr(out, target),
            "ssim": ssim(out, target, window=config.metrics.ssim_window,
                         sigma=config.metrics.ssim_sigma),
        }
        if args.landmarks:
            lm_path = os.path.join(args.landmarks, pair["id"] + ".json")
            with open(lm_path) as f:
                lm = json.load(f)
            row["lmd"] = lmd(lm["output"], lm["target"])
        if args.embeddings:
            emb = np.load(os.path.join(args.embeddings, pair["id"] + ".npz"))
            row["ids"] = ids(emb["output"], emb["target"])
        else:
            row["ids"] = ids(recognizer(out), recognizer(target))
        rows.append(row)

    metric_names = [k for k in ("psnr", "ssim", "lmd", "ids")
                    if all(k in r for r in rows)]
    means = {name: float(np.mean([r[name] for r in rows]))
             for name in metric_names}

    report = {"pairs": rows, "means": means, "external": {}}
    for name, cmd in args.external_metric or []:
        report["external"][name] = run_external_metric(
            name, cmd.split(), args.pairs)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_stamp(out_dir, args, config)
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2)
    csv_path = os.path.splitext(args.out)[0] + ".csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["id"] + metric_names)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in ["id"] + metric_names})
    from .figures import save_metric_summary
    save_metric_summary(means, os.path.splitext(args.out)[0] + ".png")
    print(json.dumps(means, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="faceref",
        description="Personalized reference-guided blind face restoration "
                    "toolkit (desk-scale toy backbone).")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("degrade", help="synthesize LQ images from HQ inputs")
    p.add_argument("--in", required=True, help="input image directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", help="blur range a,b")
    p.add_argument("--scale", help="resample scale range a,b (integers)")
    p.add_argument("--noise", help="noise std range a,b (8-bit units)")
    p.add_argument("--quality", help="JPEG quality range a,b (integers)")
    p.add_argument("--jobs", type=int, default=os.cpu_count())
    p.add_argument("--config")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("build-pool", help="two-level pose/expression pool")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c1", type=int)
    p.add_argument("--c2", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("synth-refs", help="gated same-identity references")
    p.add_argument("--pool", required=True)
    p.add_argument("--identity", required=True)
    p.add_argument("--pose-images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-refs", type=int, default=4)
    p.add_argument("--delta", type=float)
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth_refs)

    p = sub.add_parser("synth-dataset", help="procedural test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--identities", type=int, default=16)
    p.add_argument("--per-identity", type=int, default=5)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_dataset)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--config")
    p.add_argument("--stage", required=True, choices=["one", "1", "2"])
    p.add_argument("--data", required=True, help="dataset manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to load before training")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", help="restore LQ images with references")
    p.add_argument("--lq", required=True)
    p.add_argument("--refs", help="reference directory or manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--t-start", type=int)
    p.add_argument("--cfg-space", choices=["latent", "noise"],
                   default="latent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint")
    p.add_argument("--emit-comparison", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("evaluate", help="PSNR/SSIM/LMD/IDS report")
    p.add_argument("--pairs", required=True, help="pairs manifest JSON")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--landmarks", help="directory of <id>.json landmark files")
    p.add_argument("--embeddings", help="directory of <id>.npz embeddings")
    p.add_argument("--external-metric", nargs=2, action="append",
                   metavar=("NAME", "CMD"))
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)
    return parser


def run(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except FaceRefError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
