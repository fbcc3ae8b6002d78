"""Interchangeable segmenters and the haze-degradation harness.

Three backends produce :class:`~segdehaze.segcodec.SegMaskSet` objects, always
ordered by descending area:

* ``ORACLE`` returns the ground-truth regions of a synthetic scene and never
  looks at the pixels, so it is blind to haze.
* ``CONNECTED_COMPONENTS`` quantizes luma and extracts 4-connected components.
  Coarse settings play the part of a small segmentation model, finer ones a
  middle-sized model.
* ``FILE`` reads precomputed masks (for example from an offline large model).
"""

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage.measure import label as label_components

from .errors import ConfigError, DataError
from .segcodec import SegMaskSet, load_mask_dir, luma, sort_by_area


class SegmenterKind(enum.Enum):
    ORACLE = "oracle"
    CONNECTED_COMPONENTS = "cc"
    FILE = "file"


@dataclass(frozen=True)
class SegmenterSpec:
    kind: SegmenterKind = SegmenterKind.CONNECTED_COMPONENTS
    levels: int = 8
    min_area: int = 16
    mask_dir: str = None

    def __post_init__(self):
        object.__setattr__(self, "kind", SegmenterKind(self.kind))
        if self.levels < 2:
            raise ConfigError("quantization needs at least 2 levels")
        if self.min_area < 1:
            raise ConfigError("minimum segment area must be at least 1 pixel")
        if self.kind is SegmenterKind.FILE and not self.mask_dir:
            raise ConfigError("FILE segmenter needs a mask directory")


# capability tiers standing in for small / middle / large segmentation models
TIERS = {
    "small": SegmenterSpec(SegmenterKind.CONNECTED_COMPONENTS, levels=4, min_area=64),
    "middle": SegmenterSpec(SegmenterKind.CONNECTED_COMPONENTS, levels=8, min_area=16),
    "oracle": SegmenterSpec(SegmenterKind.ORACLE),
}
TIERS["large"] = TIERS["oracle"]


def tier(name):
    try:
        return TIERS[name]
    except KeyError:
        raise ConfigError(f"unknown segmenter tier {name!r}; choose from {sorted(TIERS)}") from None


def oracle_segment(scene):
    return SegMaskSet.from_labels(scene.regions)


def cc_segment(image, spec=None):
    """Quantize luma into ``spec.levels`` bins and split into 4-connected components.

    Components smaller than ``spec.min_area`` are dropped; the rest are ordered by
    descending area, ties going to the component met first in raster order.
    """
    spec = spec or TIERS["middle"]
    if spec.kind is not SegmenterKind.CONNECTED_COMPONENTS:
        raise ConfigError(f"cc_segment called with a {spec.kind.name} spec")
    y = luma(image)
    q = np.minimum(np.floor(y * spec.levels), spec.levels - 1).astype(np.int64)
    comps = label_components(q, background=-1, connectivity=1)
    areas = np.bincount(comps.reshape(-1))
    keep = np.flatnonzero(areas >= spec.min_area)
    keep = keep[keep > 0]
    order = keep[np.lexsort((keep, -areas[keep]))]
    return SegMaskSet([comps == c for c in order], y.shape)


def load_masks(path, frame_id=None):
    """Load one frame's masks, in manifest order, from ``path/frame_id``."""
    directory = Path(path) if frame_id is None else Path(path) / str(frame_id)
    return load_mask_dir(directory)


def segment(spec, image=None, scene=None, frame_id=None):
    """Run whichever backend ``spec`` names."""
    if spec.kind is SegmenterKind.ORACLE:
        if scene is None or scene.regions is None:
            raise DataError("the oracle segmenter needs the scene's region labels")
        return oracle_segment(scene)
    if spec.kind is SegmenterKind.CONNECTED_COMPONENTS:
        if image is None:
            raise DataError("connected-component segmentation needs an image")
        return cc_segment(image, spec)
    if frame_id is None:
        raise DataError("the file segmenter needs a frame id")
    return sort_by_area(load_masks(spec.mask_dir, frame_id))


@dataclass
class DegradationCurve:
    densities: list
    detection_rate: list
    counts: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "segment_count", "detection_rate_percent"])
            for beta, count, rate in zip(self.densities, self.counts, self.detection_rate):
                writer.writerow([f"{beta:g}", f"{count:g}", f"{rate:.6f}"])


def _check_betas(betas):
    betas = [float(b) for b in betas]
    if not betas:
        raise ConfigError("need at least one density")
    if betas[0] != 0.0:
        raise ConfigError("the first density must be 0 (the haze-free baseline)")
    if any(b < a for a, b in zip(betas, betas[1:])):
        raise ConfigError("densities must be sorted ascending")
    return betas


def degradation_curve(scene, betas, spec):
    """Segment the scene under uniform haze at each density and compare to clean.

    The detection rate is the segment count at a density as a percentage of the
    count on the haze-free rendering by the same segmenter.
    """
    betas = _check_betas(betas)
    counts = []
    for beta in betas:
        image = scene.hazy(density=beta)
        counts.append(len(segment(spec, image=image, scene=scene)))
    if counts[0] == 0:
        raise DataError("the segmenter found no segments in the haze-free image")
    rates = [100.0 * c / counts[0] for c in counts]
    return DegradationCurve(betas, rates, counts)


def mean_degradation(scenes, betas, spec):
    """Average per-scene detection rates and segment counts over a batch."""
    curves = [degradation_curve(s, betas, spec) for s in scenes]
    if not curves:
        raise DataError("no scenes given")
    rates = np.mean([c.detection_rate for c in curves], axis=0)
    counts = np.mean([c.counts for c in curves], axis=0)
    return DegradationCurve(list(curves[0].densities), rates.tolist(), counts.tolist())
