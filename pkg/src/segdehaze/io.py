"""Raster serialization.

Float fields (depth, transmission, density) use a small flat binary container::

    offset  size  content
    0       4     magic b"HZF1"
    4       4     height, uint32 little-endian
    8       4     width, uint32 little-endian
    12      4*H*W payload, float32 little-endian, row-major

Images go to PNG: RGB at 8 or 16 bits, gray segment masks at 8 bits,
region labels at 16 bits and individual binary masks at 1 bit.
"""

import struct
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError

FLOAT_MAGIC = b"HZF1"
_HEADER = struct.Struct("<4sII")


def write_float_field(path, field):
    field = np.asarray(field)
    if field.ndim != 2:
        raise ShapeError(f"expected a 2-D field, got shape {field.shape}")
    h, w = field.shape
    payload = np.ascontiguousarray(field, dtype="<f4").tobytes()
    Path(path).write_bytes(_HEADER.pack(FLOAT_MAGIC, h, w) + payload)


def read_float_field(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, h, w = _HEADER.unpack_from(data)
    if magic != FLOAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w).astype(np.float32)


def write_image(path, image, bits=16):
    """Write an H x W x 3 float image in [0, 1] as an RGB PNG."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3, got {image.shape}")
    if bits == 8:
        raw = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    elif bits == 16:
        raw = np.round(np.clip(image, 0, 1) * 65535).astype(np.uint16)
    else:
        raise ValueError("bits must be 8 or 16")
    if not cv2.imwrite(str(path), cv2.cvtColor(raw, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")


def read_image(path):
    """Read an 8- or 16-bit RGB (or gray) PNG into float64 in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(path)
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    elif raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2RGB)
    else:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    peak = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(np.float64) / peak


def write_gray8(path, values):
    values = np.asarray(values)
    if values.min(initial=0) < 0 or values.max(initial=0) > 255:
        raise ValueError("gray values must lie in 0..255")
    Image.fromarray(values.astype(np.uint8), mode="L").save(path)


def read_gray8(path):
    with Image.open(path) as im:
        if im.mode != "L":
            raise FormatError(f"{path}: expected an 8-bit gray PNG, got mode {im.mode}")
        return np.array(im, dtype=np.uint8)


def write_labels16(path, labels):
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    if not cv2.imwrite(str(path), labels.astype(np.uint16)):
        raise OSError(f"could not write {path}")


def read_labels16(path):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(path)
    return raw.astype(np.int64)


def write_bitmask(path, mask):
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)


def read_bitmask(path):
    with Image.open(path) as im:
        return np.array(im.convert("1"), dtype=bool)
