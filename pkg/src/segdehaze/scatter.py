"""Atmospheric scattering: haze synthesis, analytic inverses and procedural scenes.

All images are float arrays of shape (H, W, 3) in [0, 1]; scalar fields
(depth, density, transmission) are (H, W).  Airlight is a global 3-vector.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

DEPTH_MODES = ("ramp", "radial", "region")
DENSITY_MODES = ("uniform", "gradient", "blobs")

_RANGE_TOL = 1e-9


def _as_field(name, value, shape=None):
    arr = np.asarray(value, dtype=np.float64)
    if shape is not None:
        if arr.ndim == 0:
            arr = np.full(shape, float(arr))
        elif arr.shape != shape:
            raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _as_airlight(airlight):
    a = np.asarray(airlight, dtype=np.float64).reshape(-1)
    if a.size == 1:
        a = np.repeat(a, 3)
    if a.shape != (3,):
        raise ShapeError(f"airlight must be a 3-vector, got {np.shape(airlight)}")
    if a.min() < 0 or a.max() > 1:
        raise DomainError("airlight must lie in [0, 1]")
    return a


def _check_image(name, image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"{name} must be H x W x 3, got {image.shape}")
    return image


def transmission(depth, density):
    """Exponential attenuation ``t = exp(-beta * d)``.

    ``density`` may be a scalar (uniform haze) or a field matching ``depth``.
    """
    depth = _as_field("depth", depth)
    if depth.ndim != 2:
        raise ShapeError(f"depth must be 2-D, got {depth.shape}")
    beta = _as_field("density", density, depth.shape)
    if depth.min() < 0 or beta.min() < 0:
        raise DomainError("depth and density must be non-negative")
    return np.exp(-beta * depth)


def apply_haze(radiance, t, airlight):
    """Render ``I = R t + L (1 - t)`` per channel."""
    radiance = _check_image("radiance", radiance)
    t = _as_field("transmission", t, radiance.shape[:2])
    a = _as_airlight(airlight)
    if t.min() < -_RANGE_TOL or t.max() > 1 + _RANGE_TOL:
        raise DomainError("transmission must lie in [0, 1]")
    if radiance.min() < -_RANGE_TOL or radiance.max() > 1 + _RANGE_TOL:
        raise DomainError("radiance must lie in [0, 1]")
    tt = t[:, :, None]
    hazy = radiance * tt + a * (1.0 - tt)
    # convex combination; clip only absorbs rounding
    return np.clip(hazy, 0.0, 1.0)


def analytic_dehaze(image, t, airlight, t_floor=0.05):
    """Invert the scattering model given transmission and airlight.

    Transmission is clamped to ``t_floor`` before it is used, so pixels with
    ``t < t_floor`` are treated as if their transmission were exactly the floor.
    """
    if t_floor <= 0:
        raise DomainError("t_floor must be positive")
    image = _check_image("image", image)
    t = _as_field("transmission", t, image.shape[:2])
    a = _as_airlight(airlight)
    tc = np.maximum(t, t_floor)[:, :, None]
    return np.clip((image - a * (1.0 - tc)) / tc, 0.0, 1.0)


class Recovery(NamedTuple):
    radiance: np.ndarray
    transmission: np.ndarray
    unrecoverable: list


def mask_guided_recover(image, regions, airlight, eps=1e-9):
    """Recover piecewise-constant radiance from a hazy image and its segmentation.

    Inside a region ``s`` every pixel satisfies ``I(x) - L = t(x) (R_s - L)``, so
    the offsets from airlight are all parallel.  The common direction comes from
    the leading singular vector of the stacked offsets; the scale is fixed by
    taking the largest transmission in each region to be 1.

    Regions whose pixels all equal the airlight carry no signal. They are
    filled with ``L``, given ``t = 0`` and listed in ``unrecoverable``.
    """
    image = _check_image("image", image)
    regions = np.asarray(regions)
    if regions.shape != image.shape[:2]:
        raise ShapeError(f"regions {regions.shape} do not match image {image.shape[:2]}")
    a = _as_airlight(airlight)

    flat_labels = regions.reshape(-1)
    offsets = image.reshape(-1, 3) - a
    out = np.empty_like(offsets)
    t_out = np.empty(flat_labels.shape, dtype=np.float64)
    unrecoverable = []

    order = np.argsort(flat_labels, kind="stable")
    labels, starts = np.unique(flat_labels[order], return_index=True)
    bounds = np.append(starts, flat_labels.size)
    for label, lo, hi in zip(labels, bounds[:-1], bounds[1:]):
        idx = order[lo:hi]
        d = offsets[idx]
        if np.abs(d).max() <= eps:
            unrecoverable.append(int(label))
            out[idx] = 0.0
            t_out[idx] = 0.0
            continue
        _, _, vt = np.linalg.svd(d, full_matrices=False)
        u = vt[0]
        proj = d @ u
        if proj[np.argmax(np.abs(proj))] < 0:
            u, proj = -u, -proj
        peak = proj.max()
        out[idx] = peak * u
        t_out[idx] = np.clip(proj / peak, 0.0, 1.0)

    radiance = np.clip(out + a, 0.0, 1.0).reshape(image.shape)
    return Recovery(radiance, t_out.reshape(regions.shape), unrecoverable)


def normalize_region_peak(t, regions):
    """Rescale ``t`` so that its maximum inside every region equals 1."""
    t = np.asarray(t, dtype=np.float64)
    regions = np.asarray(regions)
    peak = np.zeros(int(regions.max()) + 1)
    np.maximum.at(peak, regions.reshape(-1), t.reshape(-1))
    if (peak[np.unique(regions)] <= 0).any():
        raise DomainError("a region has zero transmission everywhere")
    return t / peak[regions]


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    regions: int = 16
    depth_mode: str = "region"
    depth_range: tuple = (1.0, 10.0)
    density_mode: str = "uniform"
    beta_range: tuple = (0.1, 0.1)
    blobs: int = 4
    blob_sigma: tuple = (0.1, 0.3)  # blob radius range, as a fraction of the longer side
    airlight_range: tuple = (0.8, 1.0)
    airlight_tint: float = 0.0

    def validate(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError("scene dimensions must be positive")
        if not 1 <= self.regions <= self.height * self.width:
            raise ConfigError(
                f"region count {self.regions} must lie in 1..{self.height * self.width}"
            )
        if self.depth_mode not in DEPTH_MODES:
            raise ConfigError(f"unknown depth mode {self.depth_mode!r}")
        if self.density_mode not in DENSITY_MODES:
            raise ConfigError(f"unknown density mode {self.density_mode!r}")
        near, far = self.depth_range
        if not 0 <= near <= far:
            raise ConfigError("depth_range must satisfy 0 <= near <= far")
        lo, hi = self.beta_range
        if not 0 <= lo <= hi:
            raise ConfigError("beta_range must satisfy 0 <= lo <= hi")
        alo, ahi = self.airlight_range
        if not 0 <= alo <= ahi <= 1:
            raise ConfigError("airlight_range must lie within [0, 1]")
        if self.blobs < 1:
            raise ConfigError("blobs must be at least 1")
        slo, shi = self.blob_sigma
        if not 0 < slo <= shi:
            raise ConfigError("blob_sigma must satisfy 0 < lo <= hi")


@dataclass
class Scene:
    radiance: np.ndarray
    depth: np.ndarray
    regions: np.ndarray
    airlight: np.ndarray
    density: np.ndarray = field(default=None)

    @property
    def shape(self):
        return self.regions.shape

    def transmission(self, density=None):
        beta = self.density if density is None else density
        return transmission(self.depth, beta)

    def hazy(self, density=None):
        return apply_haze(self.radiance, self.transmission(density), self.airlight)


def _voronoi(rng, h, w, k):
    # distinct pixel centres as sites: every site owns at least its own pixel
    sites = rng.choice(h * w, size=k, replace=False)
    sy, sx = np.divmod(sites, w)
    yy, xx = np.mgrid[0:h, 0:w]
    labels = np.zeros((h, w), dtype=np.int64)
    best = np.full((h, w), np.inf)
    for i in range(k):
        dist = (yy - sy[i]) ** 2 + (xx - sx[i]) ** 2
        closer = dist < best
        labels[closer] = i
        best[closer] = dist[closer]
    return labels


def _depth_field(rng, cfg, labels):
    h, w = cfg.height, cfg.width
    near, far = cfg.depth_range
    if cfg.depth_mode == "ramp":
        profile = np.linspace(1.0, 0.0, h) if h > 1 else np.zeros(1)
        return np.repeat((near + (far - near) * profile)[:, None], w, axis=1)
    if cfg.depth_mode == "radial":
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        yy, xx = np.mgrid[0:h, 0:w]
        r = np.hypot(yy - cy, xx - cx)
        r = r / r.max() if r.max() > 0 else r
        return near + (far - near) * r
    per_region = rng.uniform(near, far, size=int(labels.max()) + 1)
    return per_region[labels]


def _density_field(rng, cfg):
    h, w = cfg.height, cfg.width
    lo, hi = cfg.beta_range
    if cfg.density_mode == "uniform":
        return np.full((h, w), rng.uniform(lo, hi))
    yy, xx = np.mgrid[0:h, 0:w]
    if cfg.density_mode == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        s = np.cos(theta) * xx / max(w - 1, 1) + np.sin(theta) * yy / max(h - 1, 1)
    else:
        s = np.zeros((h, w))
        for _ in range(cfg.blobs):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sigma = rng.uniform(*cfg.blob_sigma) * max(h, w)
            s += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    span = s.max() - s.min()
    s = (s - s.min()) / span if span > 0 else np.zeros_like(s)
    return lo + (hi - lo) * s


def synth_scene(seed, config=None):
    """Generate a deterministic piecewise-constant scene.

    Regions are the Voronoi cells of ``config.regions`` distinct random pixel
    sites, each with a constant colour drawn uniformly from [0.05, 0.95] per
    channel.  Depth and haze density follow the configured modes.
    """
    cfg = config or SceneConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    labels = _voronoi(rng, cfg.height, cfg.width, cfg.regions)
    colours = rng.uniform(0.05, 0.95, size=(cfg.regions, 3))
    depth = _depth_field(rng, cfg, labels)
    density = _density_field(rng, cfg)
    base = rng.uniform(*cfg.airlight_range)
    tint = rng.uniform(-cfg.airlight_tint, cfg.airlight_tint, size=3)
    airlight = np.clip(base + tint, 0.0, 1.0)
    return Scene(colours[labels], depth, labels, airlight, density)
