"""Image quality and segmentation statistics, plus table/curve reporting."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, GroupingError, ShapeError
from .segcodec import luma

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images with peak 1, capped at 99."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _window_sums(x, k):
    # summed-area table; entry (i, j) is the sum of the k x k window at (i, j)
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


def ssim(a, b, window=SSIM_WINDOW):
    """Mean SSIM over all ``window`` x ``window`` patches (stride 1) of the luma.

    RGB inputs are reduced to Rec. 601 luma first.  Local statistics are
    unweighted, with population variances.
    """
    a, b = _pair(a, b)
    if a.ndim == 3:
        a, b = luma(a), luma(b)
    if a.shape[0] < window or a.shape[1] < window:
        raise ShapeError(f"image {a.shape} is smaller than the {window}x{window} window")
    n = window * window
    mu_a = _window_sums(a, window) / n
    mu_b = _window_sums(b, window) / n
    var_a = _window_sums(a * a, window) / n - mu_a**2
    var_b = _window_sums(b * b, window) / n - mu_b**2
    cov = _window_sums(a * b, window) / n - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class QualityScore:
    psnr_db: float
    ssim: float

    @classmethod
    def of(cls, output, target):
        return cls(psnr(output, target), ssim(output, target))


@dataclass
class SegStatsRow:
    label: str
    mean_segments: float
    percent: float


def segment_stats(dataset, tiers, segment_fn):
    """Mean segment counts per (tier, hazy/clean) with Table-1 style percentages.

    ``dataset`` is a sequence of items understood by ``segment_fn(tier, item,
    hazy: bool) -> SegMaskSet``.  ``tiers`` lists tier names from weakest to
    strongest; the reference (100%) is the strongest tier on clean images.
    """
    dataset = list(dataset)
    if not dataset:
        raise DataError("empty dataset")
    means = {}
    for name in tiers:
        for hazy in (False, True):
            counts = [len(segment_fn(name, item, hazy)) for item in dataset]
            means[(name, hazy)] = float(np.mean(counts))
    reference = means[(tiers[-1], False)]
    rows = []
    for name in tiers:
        for hazy in (False, True):
            m = means[(name, hazy)]
            pct = 100.0 * m / reference if reference else float("nan")
            rows.append(SegStatsRow(f"{'haze' if hazy else 'nohaze'} {name}", m, pct))
    return rows


def format_seg_stats(rows):
    width = max(len(r.label) for r in rows)
    return "\n".join(f"{r.label:<{width}}  {r.mean_segments:8.2f} ({r.percent:.0f}%)" for r in rows)


@dataclass
class ResultEntry:
    dataset: str
    variant: str
    score: QualityScore
    loss_history: list = None


def psnr_gaps(values):
    """Percentage shortfall of each PSNR against the best one."""
    best = max(values)
    return [100.0 * (best - v) / best if best else 0.0 for v in values]


def build_table(results):
    """Group entries into ``{dataset: {variant: entry}}`` keeping first-seen order."""
    table = {}
    for r in results:
        if not r.dataset or not r.variant:
            raise GroupingError("every result needs a dataset and a variant label")
        row = table.setdefault(r.dataset, {})
        if r.variant in row:
            raise GroupingError(f"duplicate result for ({r.dataset}, {r.variant})")
        row[r.variant] = r
    if not table:
        raise GroupingError("no results to report")
    return table


def format_table(results):
    """Aligned text table; each cell reads ``PSNR(gap%) / SSIM``."""
    table = build_table(results)
    variants = []
    for row in table.values():
        variants += [v for v in row if v not in variants]
    lines = [["dataset", *variants]]
    for dataset, row in table.items():
        present = [v for v in variants if v in row]
        gaps = dict(zip(present, psnr_gaps([row[v].score.psnr_db for v in present])))
        cells = [dataset]
        for v in variants:
            if v in row:
                s = row[v].score
                cells.append(f"{s.psnr_db:.2f}({gaps[v]:.0f}%) / {s.ssim:.3f}")
            else:
                cells.append("-")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(lines[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines)


def write_table_csv(results, path):
    table = build_table(results)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "variant", "psnr_db", "gap_percent", "ssim"])
        for dataset, row in table.items():
            gaps = psnr_gaps([e.score.psnr_db for e in row.values()])
            for (variant, e), gap in zip(row.items(), gaps):
                writer.writerow([dataset, variant, f"{e.score.psnr_db:.6f}", f"{gap:.4f}", f"{e.score.ssim:.6f}"])


def write_curves_csv(series, path):
    """Write ``{name: [loss per epoch]}`` as one CSV column per series.

    Series of unequal length are truncated to the shortest, and a leading
    comment line records the truncation.
    """
    names = list(series)
    lengths = [len(series[n]) for n in names]
    n_epochs = min(lengths) if lengths else 0
    with open(path, "w", newline="") as fh:
        if len(set(lengths)) > 1:
            fh.write(f"# truncated to {n_epochs} epochs (lengths {lengths})\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", *names])
        for i in range(n_epochs):
            writer.writerow([i + 1, *(f"{series[n][i]:.8g}" for n in names)])
    return n_epochs


def report(results, out_dir):
    """Write ``table.txt``, ``table.csv`` and ``loss_curves.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = format_table(results)
    (out_dir / "table.txt").write_text(text + "\n")
    write_table_csv(results, out_dir / "table.csv")
    curves = {f"{r.dataset}:{r.variant}": r.loss_history for r in results if r.loss_history}
    if curves:
        write_curves_csv(curves, out_dir / "loss_curves.csv")
    return text
