"""End-to-end experiment runs: training grids, evaluation and degradation sweeps.

A results directory from :func:`run_experiment` looks like::

    <out>/config.json             resolved configuration
    <out>/<cell>/record.jsonl     one line per epoch
    <out>/<cell>/model.ckpt       checkpoint container
    <out>/<cell>/metrics.json     final scores and loss history
    <out>/<cell>/DONE             written last
    <out>/table.txt, table.csv, loss_curves.csv
    <out>/DONE

A missing ``DONE`` marks an interrupted run.
"""

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import metrics
from ..dehazenet import (
    MaskVariant,
    Sample,
    TrainRecord,
    assemble_input,
    infer,
    load_checkpoint,
    save_checkpoint,
    train,
)
from ..errors import ConfigError
from ..scatter import synth_scene
from ..segbackend import TIERS, mean_degradation, segment, tier as lookup_tier
from . import data

log = logging.getLogger(__name__)

SENTINEL = "DONE"


def cell_name(variant, tier_name):
    return variant.value if tier_name is None else f"{variant.value}-{tier_name}"


def load_samples(config):
    """Return ``(train_samples, val_samples, dataset_label)`` for a config."""
    if config.dataset:
        ds = data.ingest(config.dataset, data.Layout.MANIFEST)
        use_masks = all(e.masks is not None for e in ds.entries)
        samples = [ds.sample(i, use_masks=False) for i in range(len(ds))]
        if use_masks:
            for i, s in enumerate(samples):
                s.context.masks = ds.load_masks(i)
        n_val = config.val_count
        label = Path(config.dataset).stem if Path(config.dataset).is_file() else Path(config.dataset).name
    else:
        scenes = data.make_scenes(config.scenes, config.seed)
        samples = [data.scene_sample(s) for s in scenes]
        n_val = config.scenes.val_count
        label = "synthetic"
    train_idx, val_idx = data.split_indices(len(samples), n_val, config.seed)
    return [samples[i] for i in train_idx], [samples[i] for i in val_idx], label


def _with_context(samples, **changes):
    return [Sample(s.hazy, s.clean, replace(s.context, **changes)) for s in samples]


def _read_done_cell(cell_dir):
    metrics_path = cell_dir / "metrics.json"
    if not (cell_dir / SENTINEL).is_file() or not metrics_path.is_file():
        return None
    return json.loads(metrics_path.read_text())


def run_experiment(config, out_dir=None, log_fn=None, resume=False):
    """Train every grid cell, evaluate on the held-out split and write a report.

    Returns a dict mapping cell names to their metrics.
    """
    config.validate()
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SENTINEL).unlink(missing_ok=True)
    config.save(out / "config.json")

    train_set, val_set, label = load_samples(config)
    model_cfg = config.model.model_config()
    cells = config.cells()
    models, results, entries = {}, {}, []

    def baseline_model():
        key = (MaskVariant.HAZE_GRAY, None)
        if key not in models:
            models[key] = _train_cell(MaskVariant.HAZE_GRAY, None, None)
        return models[key]

    def _train_cell(variant, tier_name, cell_dir):
        ctx = {}
        if tier_name is not None:
            ctx["segmenter"] = lookup_tier(tier_name)
        if variant is MaskVariant.DEHAZE_SEG:
            ctx["predehaze"] = baseline_model()
        tr = _with_context(train_set, **ctx)
        va = _with_context(val_set, **ctx)
        if log_fn:
            log_fn(f"training {cell_name(variant, tier_name)}")
        model, record = train(tr, variant, model_cfg, config.train, config.seed, va, log=log_fn)
        if cell_dir is not None:
            _write_cell(cell_dir, model, record, variant, tier_name, config, label)
            results[cell_dir.name] = json.loads((cell_dir / "metrics.json").read_text())
        return model

    # the baseline trains first so DEHAZE_SEG cells can reuse it
    for variant, tier_name in sorted(cells, key=lambda c: c[0] is not MaskVariant.HAZE_GRAY):
        name = cell_name(variant, tier_name)
        cell_dir = out / name
        done = _read_done_cell(cell_dir) if resume else None
        if done is not None:
            results[name] = done
            if variant is MaskVariant.HAZE_GRAY:
                models[(variant, None)] = load_checkpoint(cell_dir / "model.ckpt")[0]
            continue
        cell_dir.mkdir(exist_ok=True)
        (cell_dir / SENTINEL).unlink(missing_ok=True)
        models[(variant, tier_name)] = _train_cell(variant, tier_name, cell_dir)

    for variant, tier_name in cells:
        m = results[cell_name(variant, tier_name)]
        entries.append(
            metrics.ResultEntry(
                label,
                cell_name(variant, tier_name),
                metrics.QualityScore(m["final_psnr"], m["final_ssim"]),
                m["train_loss"],
            )
        )
    metrics.report(entries, out)
    (out / SENTINEL).write_text("ok\n")
    return results


def _write_cell(cell_dir, model, record, variant, tier_name, config, label):
    record.write_jsonl(cell_dir / "record.jsonl")
    save_checkpoint(
        cell_dir / "model.ckpt",
        model,
        config.seed,
        extra={"variant": variant.value, "tier": tier_name, "dataset": label},
    )
    summary = {
        "dataset": label,
        "variant": variant.value,
        "tier": tier_name,
        "seed": config.seed,
        "final_psnr": record.final_psnr,
        "final_ssim": record.final_ssim,
        "train_loss": record.train_loss,
        "val_psnr": record.val_psnr,
        "config": record.config,
        "hyper": record.hyper,
    }
    (cell_dir / "metrics.json").write_text(json.dumps(summary, indent=1) + "\n")
    config.save(cell_dir / "config.json")
    (cell_dir / SENTINEL).write_text("ok\n")


def evaluate_checkpoint(checkpoint, dataset, variant, tier_name=None, out_dir=None,
                        predehaze=None, n_val=None, seed=0):
    """Score a saved model on a manifest dataset (optionally only its held-out split)."""
    model, header = load_checkpoint(checkpoint)
    variant = MaskVariant(variant)
    ds = data.ingest(dataset, data.Layout.MANIFEST)
    indices = range(len(ds)) if n_val is None else ds.split(n_val, seed)[1]
    pre = load_checkpoint(predehaze)[0] if predehaze else None
    if variant is MaskVariant.DEHAZE_SEG and pre is None:
        raise ConfigError("evaluating DEHAZE_SEG needs a pre-dehaze checkpoint")
    spec = lookup_tier(tier_name) if tier_name else None
    rows = []
    for i in indices:
        s = ds.sample(i)
        ctx = replace(s.context, segmenter=spec, predehaze=pre)
        x = assemble_input(s.hazy, variant, ctx)
        if model.config.input_channels == 3:
            x = x[:, :, :3]
        out = infer(model, x)
        rows.append((ds.entries[i].name, metrics.psnr(out, s.clean), metrics.ssim(out, s.clean)))
    result = {
        "checkpoint": str(checkpoint),
        "variant": variant.value,
        "tier": tier_name,
        "count": len(rows),
        "mean_psnr": float(np.mean([r[1] for r in rows])),
        "mean_ssim": float(np.mean([r[2] for r in rows])),
    }
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "per_image.csv", "w") as fh:
            fh.write("name,psnr_db,ssim\n")
            for name, p, s in rows:
                fh.write(f"{name},{p:.6f},{s:.6f}\n")
        (out_dir / "metrics.json").write_text(json.dumps(result, indent=1) + "\n")
    return result


def degradation_scenes(config):
    block = config.degradation
    return [synth_scene(data.scene_seed(config.seed, i), block.scene_config()) for i in range(block.scenes)]


def run_degradation(config, out_dir=None):
    """Sweep uniform haze density over a seeded scene batch for one segmenter tier."""
    block = config.degradation
    betas = list(block.betas)
    if not betas:
        raise ConfigError("degradation needs at least one density")
    spec = lookup_tier(block.tier)
    scenes = degradation_scenes(config)
    curve = mean_degradation(scenes, betas, spec)
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        curve.write_csv(out_dir / "degradation.csv")
        lines = [f"tier {block.tier}, {len(scenes)} scenes"]
        lines += [
            f"beta {b:g}: mean segments {c:.2f}, detection rate {r:.1f}%"
            for b, c, r in zip(curve.densities, curve.counts, curve.detection_rate)
        ]
        (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return curve


def segment_count_table(scenes, beta, tiers=("small", "middle", "oracle")):
    """Table-1 style rows: mean segments per tier on clean and hazy renderings."""

    def seg(tier_name, scene, hazy):
        image = scene.hazy(density=beta) if hazy else scene.radiance
        return segment(TIERS[tier_name], image=image, scene=scene)

    return metrics.segment_stats(scenes, list(tiers), seg)


def collect_results(run_dirs):
    """Gather finished cells from one or more results directories for reporting."""
    entries = []
    for run in run_dirs:
        run = Path(run)
        for cell in sorted(p for p in run.iterdir() if p.is_dir()):
            m = _read_done_cell(cell)
            if m is None:
                continue
            entries.append(
                metrics.ResultEntry(
                    m["dataset"],
                    cell.name if len(run_dirs) == 1 else f"{run.name}/{cell.name}",
                    metrics.QualityScore(m["final_psnr"], m["final_ssim"]),
                    m["train_loss"],
                )
            )
    return entries


def read_record(path):
    return TrainRecord.read_jsonl(path)
