"""Command-line entry point: ``segdehaze <command> ...``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import io
from ..errors import ConfigError, DataError
from ..segbackend import TIERS, SegmenterKind, segment
from ..segcodec import OverlapPolicy, encode, load_mask_dir, save_mask_dir
from . import config as cfgmod
from . import data, experiment

log = logging.getLogger("segdehaze")


def _resolve_config(args):
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.ExperimentConfig()
    overrides = list(getattr(args, "set", None) or [])
    for flag, key in (("seed", "seed"), ("epochs", "train.epochs"), ("tier_model", "model.size_tier")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if getattr(args, "grid", None):
        overrides.append(f"grid={json.dumps(args.grid)}")
    if getattr(args, "dataset", None):
        overrides.append(f"dataset={json.dumps(str(args.dataset))}")
    if getattr(args, "out", None):
        overrides.append(f"output_dir={json.dumps(str(args.out))}")
    return cfgmod.apply_overrides(cfg, overrides)


def _common(p, out_required=True):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=out_required)


def cmd_synth(args):
    cfg = _resolve_config(args)
    if args.count is not None:
        cfg.scenes.train_count, cfg.scenes.val_count = args.count, 0
    out = data.synth_to_disk(cfg.scenes, cfg.seed, args.out, bits=args.bits)
    cfg.save(out / "config.json")
    print(f"wrote {cfg.scenes.count} scenes to {out}")


def cmd_ingest(args):
    ds = data.ingest(args.root, args.layout)
    for w in ds.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(ds)} pairs")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        ds.to_manifest(args.out / "manifest.json")
        print(f"manifest written to {args.out / 'manifest.json'}")


def cmd_encode_mask(args):
    if args.mask_dir:
        masks = load_mask_dir(args.mask_dir)
    else:
        spec = TIERS[args.tier]
        if spec.kind is SegmenterKind.ORACLE:
            raise ConfigError("encode-mask from an image supports the small and middle tiers")
        masks = segment(spec, image=io.read_image(args.image))
    io.write_gray8(args.out, encode(masks, OverlapPolicy(args.policy)))
    print(f"{len(masks)} segments -> {args.out}")


def cmd_segment(args):
    spec = TIERS[args.tier]
    if spec.kind is SegmenterKind.ORACLE:
        if not args.labels:
            raise ConfigError("the oracle tier needs --labels")
        from ..segcodec import SegMaskSet

        masks = SegMaskSet.from_labels(io.read_labels16(args.labels))
    else:
        masks = segment(spec, image=io.read_image(args.image))
    save_mask_dir(masks, args.out)
    print(f"{len(masks)} masks -> {args.out}")


def cmd_degradation(args):
    cfg = _resolve_config(args)
    overrides = []
    if args.betas is not None:
        overrides.append(f"degradation.betas={json.dumps(args.betas)}")
    if args.tier:
        overrides.append(f"degradation.tier={json.dumps(args.tier)}")
    cfg = cfgmod.apply_overrides(cfg, overrides)
    if not cfg.degradation.betas:
        raise ConfigError("the density list is empty")
    curve = experiment.run_degradation(cfg, args.out)
    cfg.save(args.out / "config.json")
    for b, r in zip(curve.densities, curve.detection_rate):
        print(f"beta {b:g}: {r:.1f}%")


def cmd_train(args):
    cfg = _resolve_config(args)
    results = experiment.run_experiment(cfg, args.out, log_fn=print if args.verbose else None, resume=args.resume)
    print((Path(cfg.output_dir) / "table.txt").read_text())
    return results


def cmd_eval(args):
    result = experiment.evaluate_checkpoint(
        args.checkpoint,
        args.dataset,
        args.variant,
        args.tier,
        args.out,
        predehaze=args.predehaze,
        n_val=args.val_count,
        seed=args.seed or 0,
    )
    print(json.dumps(result, indent=1))


def cmd_report(args):
    from .. import metrics

    entries = experiment.collect_results(args.runs)
    if not entries:
        raise DataError("no finished cells found")
    print(metrics.report(entries, args.out))


def build_parser():
    parser = argparse.ArgumentParser(prog="segdehaze", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic hazy/clean dataset")
    _common(p)
    p.add_argument("--count", type=int, help="number of scenes (overrides train+val counts)")
    p.add_argument("--bits", type=int, choices=(8, 16), default=16)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a paired dataset folder")
    p.add_argument("root", type=Path)
    p.add_argument("--layout", choices=[v.value for v in data.Layout], default="pair_dirs")
    p.add_argument("--out", type=Path, help="directory for the normalized manifest")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("encode-mask", help="grayscale-code a mask set")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", type=Path)
    src.add_argument("--mask-dir", type=Path)
    p.add_argument("--tier", choices=sorted(TIERS), default="middle")
    p.add_argument("--policy", choices=[v.value for v in OverlapPolicy], default="last_wins")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_encode_mask)

    p = sub.add_parser("segment", help="segment an image into a mask directory")
    p.add_argument("image", type=Path, nargs="?")
    p.add_argument("--tier", choices=sorted(TIERS), default="middle")
    p.add_argument("--labels", type=Path, help="16-bit label PNG for the oracle tier")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("degradation", help="segment count vs haze density sweep")
    _common(p)
    p.add_argument("--betas", type=float, nargs="*")
    p.add_argument("--tier", choices=sorted(TIERS))
    p.set_defaults(func=cmd_degradation)

    p = sub.add_parser("train", help="train and evaluate an experiment grid")
    _common(p, out_required=False)
    p.add_argument("--grid", nargs="+", metavar="VARIANT[:TIER]")
    p.add_argument("--epochs", type=int)
    p.add_argument("--model-tier", dest="tier_model", choices=["tiny", "small", "base"])
    p.add_argument("--dataset", type=Path, help="manifest of an on-disk dataset")
    p.add_argument("--resume", action="store_true", help="skip cells that already finished")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--tier", choices=sorted(TIERS))
    p.add_argument("--predehaze", type=Path, help="baseline checkpoint for dehaze_seg")
    p.add_argument("--val-count", type=int, help="score only the held-out split of this size")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tabulate finished results directories")
    p.add_argument("runs", type=Path, nargs="+")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataError) as exc:
        parser.exit(2, f"error: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
