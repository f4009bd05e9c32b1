"""Command-line interface.

Subcommands: synth, project, train, score, eval, crossval, oracle.
Every run writes a resolved-config snapshot next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, kernel_oracle
from .checkpoint import save_checkpoint
from .config import RunConfig, load_config, save_config
from .features import projection_stats
from .ingest import (SynthConfig, parse_ply, read_manifest, save_dataset,
                     synth_dataset)
from .projection import render
from .ranklosses import eval_metrics, logistic4_fit

log = logging.getLogger("pcq")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")


def _resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return load_config(getattr(args, "config", None), overrides)


def _load_dataset(data_dir, config: RunConfig):
    data = Path(data_dir)
    manifest = read_manifest(data / "manifest.csv", config.scale_min,
                             config.scale_max)
    clouds = []
    for path, _, _ in manifest.entries:
        cloud = parse_ply((data / path).read_bytes(), cloud_id=path)
        clouds.append(cloud)
    return harness.prepare_samples(clouds, manifest, config)


def _write_snapshot(config: RunConfig, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "resolved_config.txt")


def _write_score_report(scores, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "level", "description", "confidence",
                    "score", "p1", "p2", "p3", "p4", "p5"])
        for sc in scores:
            w.writerow([sc.sample_id, sc.level, sc.description,
                        f"{sc.confidence:.6f}", f"{sc.score:.6f}"]
                       + [f"{p:.6f}" for p in sc.probabilities])


def cmd_synth(args) -> int:
    cfg = SynthConfig(n_shapes=args.shapes, n_points=args.points,
                      scale_min=args.scale_min, scale_max=args.scale_max,
                      seed=args.seed)
    clouds, manifest = synth_dataset(cfg)
    save_dataset(clouds, manifest, args.out)
    print(f"wrote {len(clouds)} clouds and manifest.csv to {args.out}")
    return 0


def cmd_project(args) -> int:
    from PIL import Image

    config = _resolve_config(args)
    cloud = parse_ply(Path(args.input).read_bytes(), cloud_id=args.input)
    proj = render(cloud, config.image_size, tau_density=config.tau_density,
                  k_blur=config.k_blur)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in range(6):
        tex = (proj.textures[f] * 255).round().astype(np.uint8)
        dep = (proj.depths[f] * 255).round().astype(np.uint8)
        Image.fromarray(tex).save(out / f"view{f}_texture.png")
        Image.fromarray(dep).save(out / f"view{f}_depth.png")
    sidecar = {"rho": proj.density,
               "delta_rho": config.tau_density - proj.density,
               "R": proj.blur_radius}
    (out / "projection.json").write_text(json.dumps(sidecar, indent=2))
    _write_snapshot(config, out)
    print(f"wrote 12 views and projection.json to {out}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    _write_snapshot(config, out)
    samples = _load_dataset(args.data, config)
    contents = sorted({s.content_id for s in samples})
    result = harness.train(samples, contents, config, log_every=args.log_every)
    result.model.save(out / "checkpoint.ckpt")
    (out / "history.json").write_text(json.dumps(result.history))
    print(f"trained {config.epochs} epochs; checkpoint at "
          f"{out / 'checkpoint.ckpt'}")
    return 0


def cmd_score(args) -> int:
    model = harness.QualityModel.load(args.checkpoint)
    config = model.config
    out = Path(args.out)
    _write_snapshot(config, out)
    data = Path(args.data)
    if (data / "manifest.csv").exists():
        samples = _load_dataset(data, config)
        projs = [s.proj for s in samples]
    else:  # single PLY file
        cloud = parse_ply(data.read_bytes(), cloud_id=data.name)
        projs = [render(cloud, config.image_size,
                        tau_density=config.tau_density, k_blur=config.k_blur)]
    scores = model.score_batch(projs)
    _write_score_report(scores, out / "scores.csv")
    print(f"scored {len(scores)} samples -> {out / 'scores.csv'}")
    return 0


def cmd_eval(args) -> int:
    pred, mos = [], []
    with open(args.csv, newline="") as f:
        r = csv.DictReader(f)
        for row in r:
            pred.append(float(row[args.pred_col]))
            mos.append(float(row[args.mos_col]))
    pred, mos = np.array(pred), np.array(mos)
    if args.logistic4:
        pred = logistic4_fit(pred, mos).mapped
    metrics = eval_metrics(pred, mos)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_crossval(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    _write_snapshot(config, out)
    samples = _load_dataset(args.data, config)
    report = harness.crossval(samples, config)
    (out / "crossval.json").write_text(json.dumps(report, indent=2))
    with open(out / "crossval_folds.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["fold", "plcc", "srocc", "krocc", "rmse"])
        for fold in report["folds"]:
            w.writerow([fold["fold"], fold["plcc"], fold["srocc"],
                        fold["krocc"], fold["rmse"]])
    print(json.dumps(report["mean"], indent=2))
    return 0


def cmd_oracle(args) -> int:
    config = _resolve_config(args)
    out = Path(args.out)
    _write_snapshot(config, out)
    samples = _load_dataset(args.data, config)
    contents = sorted({s.content_id for s in samples})
    folds = harness.make_folds(contents, config.folds, config.seed)
    test_contents = set(folds[0])
    feats = {s.sample_id: projection_stats(s.proj) for s in samples}
    by_level = {j: [] for j in range(1, 6)}
    conf_by_level = {j: [] for j in range(1, 6)}
    for s in samples:
        if s.content_id not in test_contents:
            by_level[s.label.level].append(feats[s.sample_id])
            conf_by_level[s.label.level].append(s.label.confidence)
    model = kernel_oracle.fit(
        {j: np.stack(v) for j, v in by_level.items()},
        {j: np.array(v) for j, v in conf_by_level.items()},
        lambda1=args.lambda1, lambda2=args.lambda2, iters=args.iters,
        kernel=args.kernel, delta=config.delta)
    test = [s for s in samples if s.content_id in test_contents]
    pred = np.array([kernel_oracle.predict(model, feats[s.sample_id])[2]
                     for s in test])
    mos = np.array([s.mos for s in test])
    mapped = logistic4_fit(pred, mos).mapped
    metrics = eval_metrics(mapped, mos)
    save_checkpoint(out / "oracle.ckpt",
                    {"kernel_oracle": kernel_oracle.model_section(model)})
    (out / "oracle_metrics.json").write_text(json.dumps(metrics, indent=2))
    print(json.dumps(metrics, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pcq", description="No-reference point cloud quality assessment")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic distorted dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--shapes", type=int, default=8)
    s.add_argument("--points", type=int, default=2048)
    s.add_argument("--scale-min", type=float, default=0.0)
    s.add_argument("--scale-max", type=float, default=100.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("project", help="dump the six projection views")
    s.add_argument("--input", required=True, help="PLY file")
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("train", help="train on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log-every", type=int, default=0)
    _add_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score samples with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True,
                   help="dataset directory with manifest.csv, or one PLY")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", help="metrics for a predictions CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--pred-col", default="pred")
    s.add_argument("--mos-col", default="mos")
    s.add_argument("--logistic4", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("crossval", help="content-disjoint cross-validation")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("oracle", help="kernel ridge reference model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kernel", choices=["linear", "rbf"], default="linear")
    s.add_argument("--lambda1", type=float, default=0.1)
    s.add_argument("--lambda2", type=float, default=0.1)
    s.add_argument("--iters", type=int, default=10)
    _add_config_flags(s)
    s.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
