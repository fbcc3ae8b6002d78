"""Grayscale coding of segmentation masks.

A list of binary masks is folded into one 8-bit raster.  Mask ``id`` gets the
code ``2 (id + 1)`` while ``id < 127`` (even values climbing from 2 to 254) and
``2 (255 - id) - 1`` after that (odd values falling from 255 to 1).  Zero is
reserved for pixels that no mask covers.

Two on-disk forms of a mask set are supported:

* a directory holding ``manifest.json`` plus one 1-bit PNG per mask;
* a run-length text container (see :func:`dumps_rle`).
"""

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import CapacityError, FormatError, MaskValidationError, ShapeError

MAX_SEGMENTS = 255
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "segmaskset-dir"
RLE_MAGIC = "SEGRLE"
FORMAT_VERSION = 1


class OverlapPolicy(enum.Enum):
    LAST_WINS = "last_wins"
    ADDITIVE_SATURATE = "additive_saturate"


@dataclass(eq=False)
class SegMaskSet:
    """Ordered binary masks; a mask's position in the list is its id."""

    masks: list = field(default_factory=list)
    shape: tuple = None

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        if self.shape is None and self.masks:
            self.shape = self.masks[0].shape
        if self.shape is not None:
            self.shape = tuple(int(s) for s in self.shape)

    def __len__(self):
        return len(self.masks)

    def __iter__(self):
        return iter(enumerate(self.masks))

    def __getitem__(self, i):
        return self.masks[i]

    def __eq__(self, other):
        if not isinstance(other, SegMaskSet):
            return NotImplemented
        return (
            self.shape == other.shape
            and len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks))
        )

    @property
    def areas(self):
        return [int(m.sum()) for m in self.masks]

    def validate(self):
        for i, m in self:
            if m.shape != self.shape:
                raise ShapeError(f"mask {i} has shape {m.shape}, expected {self.shape}")
            if not m.any():
                raise MaskValidationError(f"mask {i} is empty")
        return self

    @classmethod
    def from_labels(cls, labels, order=None):
        """One mask per label value, in ``order`` (default: descending area)."""
        labels = np.asarray(labels)
        values, counts = np.unique(labels, return_counts=True)
        if order is None:
            order = values[np.lexsort((values, -counts))]
        return cls([labels == v for v in order], labels.shape)


def sort_by_area(masks):
    """Reorder a mask set by descending pixel area (stable on ties)."""
    areas = np.array(masks.areas)
    order = np.argsort(-areas, kind="stable")
    return SegMaskSet([masks.masks[i] for i in order], masks.shape)


def gray_value_for_id(segment_id):
    segment_id = int(segment_id)
    if segment_id < 0:
        raise ValueError("segment id must be non-negative")
    if segment_id >= MAX_SEGMENTS:
        raise CapacityError(f"segment id {segment_id} exceeds the code space (max 254)")
    if segment_id < 127:
        return 2 * (segment_id + 1)
    return 2 * (255 - segment_id) - 1


def id_for_gray_value(value):
    value = int(value)
    if not 1 <= value <= 255:
        raise ValueError(f"gray value {value} is not a segment code")
    if value % 2 == 0:
        return value // 2 - 1
    return 255 - (value + 1) // 2


# lookup tables over the whole code space
_CODE = np.array([gray_value_for_id(i) for i in range(MAX_SEGMENTS)], dtype=np.int64)
_ID_OF = np.full(256, -1, dtype=np.int64)
_ID_OF[_CODE] = np.arange(MAX_SEGMENTS)


def encode(masks, overlap_policy=OverlapPolicy.LAST_WINS):
    """Fold a mask set into a uint8 gray raster."""
    if not isinstance(masks, SegMaskSet):
        masks = SegMaskSet(list(masks))
    if len(masks) > MAX_SEGMENTS:
        raise CapacityError(f"{len(masks)} masks exceed the {MAX_SEGMENTS}-code space")
    if masks.shape is None:
        raise ShapeError("cannot encode an empty mask set without a shape")
    policy = OverlapPolicy(overlap_policy)
    out = np.zeros(masks.shape, dtype=np.int64)
    for i, m in masks:
        if m.shape != masks.shape:
            raise ShapeError(f"mask {i} has shape {m.shape}, expected {masks.shape}")
        if policy is OverlapPolicy.LAST_WINS:
            out[m] = _CODE[i]
        else:
            out += m * _CODE[i]
    return np.minimum(out, 255).astype(np.uint8)


def decode(gray):
    """Split a LAST_WINS gray raster from disjoint masks back into its mask set."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise FormatError(f"gray mask must be 2-D, got {gray.shape}")
    if not np.issubdtype(gray.dtype, np.integer):
        if not np.array_equal(gray, np.round(gray)):
            raise FormatError("gray mask holds non-integer values")
    if gray.size and (gray.min() < 0 or gray.max() > 255):
        raise FormatError("gray mask values must lie in 0..255")
    gray = gray.astype(np.int64)
    present = np.unique(gray[gray > 0])
    ids = np.sort(_ID_OF[present])
    if ids.size and not np.array_equal(ids, np.arange(ids.size)):
        missing = sorted(set(range(int(ids[-1]) + 1)) - set(ids.tolist()))
        raise FormatError(f"gray mask has no pixels for segment ids {missing[:10]}")
    return SegMaskSet([gray == _CODE[i] for i in ids], gray.shape)


def luma(image):
    """Rec. 601 luma of an RGB image in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3, got {image.shape}")
    return image @ LUMA_WEIGHTS


def save_mask_dir(masks, directory):
    """Write ``manifest.json`` and ``mask_###.png`` files into ``directory``."""
    masks.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, m in masks:
        name = f"mask_{i:03d}.png"
        io.write_bitmask(directory / name, m)
        entries.append({"id": i, "file": name, "area": int(m.sum())})
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": FORMAT_VERSION,
        "height": masks.shape[0],
        "width": masks.shape[1],
        "masks": entries,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1))
    return directory


def load_mask_dir(directory):
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        shape = (int(manifest["height"]), int(manifest["width"]))
        entries = manifest["masks"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{manifest_path}: unexpected format {manifest.get('format')!r}")

    masks = []
    for position, entry in enumerate(entries):
        if int(entry["id"]) != position:
            raise FormatError(f"{manifest_path}: entry {position} carries id {entry['id']}")
        path = directory / entry["file"]
        if not path.is_file():
            raise FileNotFoundError(f"mask file {path} listed in manifest is missing")
        m = io.read_bitmask(path)
        if m.shape != shape:
            raise MaskValidationError(f"{path}: shape {m.shape} does not match {shape}")
        if not m.any():
            raise MaskValidationError(f"{path}: mask is empty")
        if "area" in entry and int(entry["area"]) != int(m.sum()):
            raise MaskValidationError(f"{path}: area {int(m.sum())} != manifest {entry['area']}")
        masks.append(m)
    return SegMaskSet(masks, shape)


def _runs(mask):
    flat = mask.reshape(-1).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat.size and flat[0]:
        runs.insert(0, 0)
    return runs


def dumps_rle(masks):
    """Serialize a mask set as run-length text.

    Layout, one record per line::

        SEGRLE 1
        <height> <width> <count>
        <id> <area> <run> <run> ...      (one line per mask)

    Runs cover the row-major flattened mask and alternate between unset and
    set pixels, always starting with an unset run (possibly of length 0).
    """
    masks.validate()
    h, w = masks.shape
    lines = [f"{RLE_MAGIC} {FORMAT_VERSION}", f"{h} {w} {len(masks)}"]
    for i, m in masks:
        lines.append(" ".join(str(v) for v in [i, int(m.sum()), *_runs(m)]))
    return "\n".join(lines) + "\n"


def loads_rle(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        magic, version = lines[0].split()
        h, w, count = (int(v) for v in lines[1].split())
    except (IndexError, ValueError) as exc:
        raise FormatError(f"bad RLE header: {exc}") from exc
    if magic != RLE_MAGIC or int(version) != FORMAT_VERSION:
        raise FormatError(f"unsupported RLE container {magic} {version}")
    if len(lines) != count + 2:
        raise FormatError(f"header promises {count} masks, found {len(lines) - 2}")
    masks = []
    for position, line in enumerate(lines[2:]):
        fields = [int(v) for v in line.split()]
        seg_id, area, runs = fields[0], fields[1], fields[2:]
        if seg_id != position:
            raise FormatError(f"mask record {position} carries id {seg_id}")
        if sum(runs) != h * w:
            raise FormatError(f"mask {seg_id}: runs cover {sum(runs)} pixels, expected {h * w}")
        values = np.arange(len(runs)) % 2 == 1
        m = np.repeat(values, runs).reshape(h, w)
        if int(m.sum()) != area:
            raise FormatError(f"mask {seg_id}: decoded area {int(m.sum())} != {area}")
        masks.append(m)
    return SegMaskSet(masks, (h, w)).validate()
