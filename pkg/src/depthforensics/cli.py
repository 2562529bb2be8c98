"""Command-line interface.

Subcommands: gen-data, make-gt, train, eval, ablate, viz. The output root
defaults to $DEPTHFORENSICS_OUT (falling back to ./df-runs). Every contract
violation exits nonzero with a one-line machine-parsable error:

    error[CODE]: message

Exit codes: 0 success, 2 usage, 3 contract violation, 4 data/format error,
5 numeric failure during training.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, viz
from .checkpoint import load_checkpoint, save_checkpoint
from .depth_gt import GtRecord, PatchGrid, normalize_patch_depth, patch_average, write_gt_records
from .exceptions import (
    ContractViolation,
    DataFormatError,
    DepthForensicsError,
    NonFiniteLossError,
)
from .synth import (
    FAKE,
    SynthProfile,
    generate_fake_sample,
    generate_real_sample,
    make_dataset,
    mini_profile,
    read_dataset,
    write_dataset,
)

EXIT_CODES = {"CONTRACT": 3, "DATA": 4, "NUMERIC": 5}

PROFILES = {"mini": mini_profile, "paper": SynthProfile}


def _out_root():
    return Path(os.environ.get("DEPTHFORENSICS_OUT", "df-runs"))


def _load_config(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise DataFormatError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"config file {path} is not valid JSON: {e}") from e
    data_root = raw.pop("data_root", None)
    if data_root is None:
        raise ContractViolation("config must set data_root")
    out_dir = raw.pop("out_dir", None)
    try:
        config = harness.TrainConfig.from_dict(raw)
    except TypeError as e:
        raise ContractViolation(f"bad config key: {e}") from e
    return config, Path(data_root), out_dir


def cmd_gen_data(args):
    profile = PROFILES[args.profile]()
    out = Path(args.out) if args.out else _out_root() / "dataset"
    manifest, records = make_dataset(
        count=args.count,
        global_seed=args.seed,
        profile=profile,
        quality=args.quality,
        fake_ratio=args.fake_ratio,
    )
    write_dataset(out, manifest, records)
    counts = {s: len(ids) for s, ids in manifest.splits.items()}
    print(f"wrote {manifest.count} samples to {out} splits={counts}")
    return 0


def cmd_make_gt(args):
    manifest, by_split = read_dataset(args.data)
    profile = SynthProfile(**{**manifest.profile, "lam": args.lam})
    grid = PatchGrid(profile.image_size, profile.image_size, args.patches)
    out = Path(args.out) if args.out else _out_root() / "ground-truth"
    out.mkdir(parents=True, exist_ok=True)
    for split, records in by_split.items():
        gt_records = []
        for rec in records:
            gen = generate_fake_sample if rec.label == FAKE else generate_real_sample
            fresh = gen(rec.seed, profile, manifest.quality, sample_id=rec.sample_id)
            values = normalize_patch_depth(patch_average(fresh.depth, grid))
            gt_records.append(
                GtRecord(rec.sample_id, args.lam, args.patches, args.patches, values)
            )
        write_gt_records(
            out / f"{split}.gt",
            gt_records,
            provenance={
                "oracle": "elliptical-dome",
                "seed": manifest.global_seed,
                "lambda": args.lam,
                "patches_per_side": args.patches,
            },
        )
    print(f"wrote ground-truth files for {sorted(by_split)} to {out}")
    return 0


def cmd_train(args):
    config, data_root, out_dir = _load_config(args.config)
    _, splits = read_dataset(data_root)
    out = Path(out_dir) if out_dir else _out_root() / f"train-{config.config_hash()}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = harness.train(config, splits)
    except NonFiniteLossError as e:
        if e.snapshot is not None:
            with open(out / "diagnostic.json", "w") as f:
                json.dump(e.snapshot, f, indent=2)
        raise
    ckpt = save_checkpoint(out / "checkpoint.npz", result.model, seed=config.seed)
    with open(out / "runlog.json", "w") as f:
        f.write(result.run_log.to_json())
    last = result.run_log.steps[-1]
    print(
        f"trained {config.model.fusion} model: {len(result.run_log.steps)} steps, "
        f"final l_total={last['l_total']:.4f}, checkpoint={ckpt}"
    )
    return 0


def cmd_eval(args):
    model, meta = load_checkpoint(args.ckpt)
    _, splits = read_dataset(args.data)
    if args.split not in splits:
        raise ContractViolation(f"dataset has no split {args.split!r}")
    report = harness.evaluate(
        model, splits[args.split], args.split, seed=meta.get("seed", 0)
    )
    if args.out:
        report.save(args.out)
    print(report.to_json())
    return 0


def cmd_ablate(args):
    config, data_root, out_dir = _load_config(args.config)
    _, splits = read_dataset(data_root)
    variants = args.variants.split(",") if args.variants else list(harness.ABLATION_VARIANTS)
    rows = harness.ablate(config, splits, variants=variants, seeds=tuple(range(args.seeds)))
    table = harness.format_ablation_table(rows)
    out = Path(out_dir) if out_dir else _out_root() / f"ablate-{config.config_hash()}"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.json", "w") as f:
        json.dump([dataclasses.asdict(r) for r in rows], f, indent=2)
    with open(out / "ablation.txt", "w") as f:
        f.write(table + "\n")
    print(table)
    return 0


def cmd_viz(args):
    model, _ = load_checkpoint(args.ckpt)
    _, splits = read_dataset(args.data)
    if args.split not in splits:
        raise ContractViolation(f"dataset has no split {args.split!r}")
    out = Path(args.out) if args.out else _out_root() / "viz"
    paths = viz.visualize(model, splits[args.split], out, max_count=args.n)
    print(f"wrote {len(paths)} panels to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="depthforensics",
        description="Depth-assisted face manipulation detection, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--quality", choices=("high", "low"), default="high")
    p.add_argument("--out", default=None)
    p.add_argument("--profile", choices=sorted(PROFILES), default="mini")
    p.add_argument("--fake-ratio", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("make-gt", help="write patch-depth ground-truth files")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=int, default=50)
    p.add_argument("--patches", type=int, default=14)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_make_gt)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation variant sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--variants", default=None, help="comma-separated subset")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("viz", help="write per-sample inspection panels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DepthForensicsError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.code, 1)


if __name__ == "__main__":
    sys.exit(main())
