"""Synthetic scene batches and on-disk paired datasets.

A dataset manifest (``manifest.json``) looks like::

    {"format": "segdehaze-dataset", "version": 1,
     "entries": [{"name": "scene_0000",
                  "hazy": "scene_0000/hazy.png", "clean": "scene_0000/clean.png",
                  "labels": "scene_0000/labels.png", "depth": "scene_0000/depth.hzf",
                  "transmission": "scene_0000/t.hzf", "beta": "scene_0000/beta.hzf",
                  "airlight": [0.9, 0.9, 0.9], "masks": null}, ...]}

Paths are relative to the manifest's directory.  Only ``name``, ``hazy`` and
``clean`` are required.
"""

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import io
from ..dehazenet import InputContext, Sample
from ..errors import DataError, FormatError
from ..scatter import Scene, synth_scene
from ..segbackend import load_masks

log = logging.getLogger(__name__)

DATASET_FORMAT = "segdehaze-dataset"
DATASET_VERSION = 1
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def scene_seed(seed, index):
    """Per-scene seed that depends only on the experiment seed and the index."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def make_scene(block, seed, index):
    rng = np.random.default_rng(scene_seed(seed, index))
    lo, hi = block.k_range
    k = int(rng.integers(lo, hi + 1))
    return synth_scene(int(rng.integers(2**31)), block.scene_config(k))


def make_scenes(block, seed, count=None):
    return [make_scene(block, seed, i) for i in range(block.count if count is None else count)]


def split_indices(n, n_val, seed):
    """Seeded train/validation split; returns sorted index lists."""
    if not 0 <= n_val < n:
        raise DataError(f"cannot hold out {n_val} of {n} items")
    perm = np.random.default_rng([int(seed), 0x5EED]).permutation(n)
    return sorted(perm[n_val:].tolist()), sorted(perm[:n_val].tolist())


def scene_sample(scene, segmenter=None):
    hazy = scene.hazy()
    return Sample(hazy, scene.radiance, InputContext(clean=scene.radiance, scene=scene, segmenter=segmenter))


def synth_to_disk(block, seed, out_dir, bits=16):
    """Write ``block.count`` scenes plus a manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(block.count):
        scene = make_scene(block, seed, i)
        name = f"scene_{i:04d}"
        d = out_dir / name
        d.mkdir(exist_ok=True)
        t = scene.transmission()
        io.write_image(d / "clean.png", scene.radiance, bits)
        io.write_image(d / "hazy.png", scene.hazy(), bits)
        io.write_labels16(d / "labels.png", scene.regions)
        io.write_float_field(d / "depth.hzf", scene.depth)
        io.write_float_field(d / "t.hzf", t)
        io.write_float_field(d / "beta.hzf", scene.density)
        entries.append(
            {
                "name": name,
                "hazy": f"{name}/hazy.png",
                "clean": f"{name}/clean.png",
                "labels": f"{name}/labels.png",
                "depth": f"{name}/depth.hzf",
                "transmission": f"{name}/t.hzf",
                "beta": f"{name}/beta.hzf",
                "airlight": [float(v) for v in scene.airlight],
                "masks": None,
            }
        )
    write_manifest(out_dir / "manifest.json", entries)
    return out_dir


def write_manifest(path, entries):
    doc = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "entries": entries}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


class Layout(enum.Enum):
    PAIR_DIRS = "pair_dirs"
    MANIFEST = "manifest"


@dataclass
class PairEntry:
    name: str
    hazy: Path
    clean: Path
    labels: Path = None
    masks: Path = None
    depth: Path = None
    transmission: Path = None
    beta: Path = None
    airlight: list = None


@dataclass
class PairedDataset:
    root: Path
    entries: list
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def split(self, n_val, seed):
        return split_indices(len(self), n_val, seed)

    def load_scene(self, i):
        """Scene-like record for entry ``i``; labels are present only if the entry has them."""
        e = self.entries[i]
        clean = io.read_image(e.clean)
        regions = io.read_labels16(e.labels) if e.labels else None
        depth = io.read_float_field(e.depth) if e.depth else None
        beta = io.read_float_field(e.beta) if e.beta else None
        airlight = np.asarray(e.airlight) if e.airlight is not None else None
        return Scene(clean, depth, regions, airlight, beta)

    def load_masks(self, i):
        e = self.entries[i]
        if e.masks is None:
            raise DataError(f"entry {e.name} has no mask directory")
        return load_masks(e.masks)

    def sample(self, i, segmenter=None, use_masks=False):
        e = self.entries[i]
        hazy = io.read_image(e.hazy)
        scene = self.load_scene(i)
        masks = self.load_masks(i) if use_masks else None
        return Sample(hazy, scene.radiance, InputContext(clean=scene.radiance, scene=scene, masks=masks, segmenter=segmenter, frame_id=e.name))

    def to_manifest(self, path):
        base = Path(path).parent.resolve()

        def rel(p):
            if p is None:
                return None
            p = Path(p).resolve()
            try:
                return str(p.relative_to(base))
            except ValueError:
                return str(p)

        entries = [
            {
                "name": e.name,
                "hazy": rel(e.hazy),
                "clean": rel(e.clean),
                "labels": rel(e.labels),
                "masks": rel(e.masks),
                "depth": rel(e.depth),
                "transmission": rel(e.transmission),
                "beta": rel(e.beta),
                "airlight": e.airlight,
            }
            for e in self.entries
        ]
        write_manifest(path, entries)


def _image_files(directory):
    return {p.stem: p for p in sorted(Path(directory).iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def _image_shape(path):
    return io.read_image(path).shape


def _ingest_pair_dirs(root):
    hazy_dir, gt_dir = root / "hazy", root / "gt"
    if not hazy_dir.is_dir() or not gt_dir.is_dir():
        raise DataError(f"{root} must contain hazy/ and gt/ directories")
    hazy, gt = _image_files(hazy_dir), _image_files(gt_dir)
    warnings = []
    for stem in sorted(set(hazy) - set(gt)):
        warnings.append(f"orphan hazy file without ground truth: {hazy[stem]}")
    for stem in sorted(set(gt) - set(hazy)):
        warnings.append(f"orphan ground-truth file without hazy input: {gt[stem]}")
    entries = []
    mask_root = root / "masks"
    for stem in sorted(set(hazy) & set(gt)):
        hs, gs = _image_shape(hazy[stem]), _image_shape(gt[stem])
        if hs != gs:
            warnings.append(f"shape mismatch for {stem}: hazy {hs} vs gt {gs}")
            continue
        masks = mask_root / stem if (mask_root / stem / "manifest.json").is_file() else None
        entries.append(PairEntry(stem, hazy[stem], gt[stem], masks=masks))
    return entries, warnings


def _ingest_manifest(root):
    path = root / "manifest.json" if root.is_dir() else root
    base = path.parent
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"no manifest at {path}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if doc.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: not a {DATASET_FORMAT} manifest")
    entries, warnings = [], []

    def resolve(v):
        return None if v is None else base / v

    for raw in doc.get("entries", []):
        e = PairEntry(
            raw["name"],
            resolve(raw["hazy"]),
            resolve(raw["clean"]),
            labels=resolve(raw.get("labels")),
            masks=resolve(raw.get("masks")),
            depth=resolve(raw.get("depth")),
            transmission=resolve(raw.get("transmission")),
            beta=resolve(raw.get("beta")),
            airlight=raw.get("airlight"),
        )
        missing = [str(p) for p in (e.hazy, e.clean) if not p.is_file()]
        if missing:
            warnings.append(f"{e.name}: missing files {missing}")
            continue
        hs, gs = _image_shape(e.hazy), _image_shape(e.clean)
        if hs != gs:
            warnings.append(f"shape mismatch for {e.name}: hazy {hs} vs clean {gs}")
            continue
        entries.append(e)
    return entries, warnings


def ingest(root, layout=Layout.PAIR_DIRS):
    """Validate a dataset folder and return a :class:`PairedDataset`.

    Unmatched or malformed pairs are logged as warnings and skipped; an empty
    result raises :class:`DataError`.
    """
    root = Path(root)
    layout = Layout(layout)
    if layout is Layout.PAIR_DIRS:
        entries, warnings = _ingest_pair_dirs(root)
    else:
        entries, warnings = _ingest_manifest(root)
    for w in warnings:
        log.warning(w)
    if not entries:
        raise DataError(f"no usable image pairs under {root}")
    return PairedDataset(root, entries, warnings)
