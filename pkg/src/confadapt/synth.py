"""Procedural rectified stereo scenes with exact ground truth.

A scene is a stack of textured planar layers: a background plane covering the
whole frame plus foreground rectangles/ellipses, painted far-to-near. Every
layer carries its own texture attached to the surface and a plane
``d(x, y) = d0 + gx*(x - cx) + gy*(y - cy)`` in left-image coordinates. The
right view is rendered by solving, per layer, for the left coordinate that
lands on each right pixel, so occlusions are geometrically exact.

Two styles stand in for a source and a target domain:

* ``A``: strong multi-scale texture, small disparities.
* ``B``: weak coarse texture, larger disparities, and a global brightness
  offset on the right view only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from . import formats


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 64
    width: int = 128
    domain: str = "A"
    layers: int = 4
    disparity_range: tuple = (2.0, 12.0)
    noise: float = 0.01
    slant: float = 0.02
    texture_cells: tuple = (2, 4, 8)
    contrast: tuple = (0.18, 0.28)
    brightness_shift: float = 0.0
    integer_disparity: bool = False

    def __post_init__(self):
        lo, hi = self.disparity_range
        if not 0 <= lo < hi:
            raise ValueError(f"bad disparity range {self.disparity_range}")
        if self.layers < 1:
            raise ValueError("a scene needs at least one layer")

    @classmethod
    def domain_a(cls, seed=0, **kw):
        return cls(seed=seed, **kw)

    @classmethod
    def domain_b(cls, seed=0, **kw):
        base = dict(domain="B", disparity_range=(6.0, 18.0), texture_cells=(6, 12, 24),
                    contrast=(0.05, 0.09), brightness_shift=0.15, noise=0.01)
        base.update(kw)
        return cls(seed=seed, **base)

    @classmethod
    def for_domain(cls, domain, seed=0, **kw):
        return cls.domain_a(seed, **kw) if domain.upper() == "A" else cls.domain_b(seed, **kw)


@dataclass
class Scene:
    left: np.ndarray
    right: np.ndarray
    gt: np.ndarray
    occlusion: np.ndarray
    gt_right: np.ndarray
    spec: SceneSpec = field(repr=False, default=None)

    def __iter__(self):
        yield from (self.left, self.right, self.gt, self.occlusion)


@dataclass
class _Layer:
    d0: float
    gx: float
    gy: float
    cx: float
    cy: float
    shape: str
    box: tuple  # (cx, cy, rx, ry) for foreground shapes
    texture: list  # [(grid, cell, amplitude)]
    mean: float

    def disparity(self, x, y):
        return self.d0 + self.gx * (x - self.cx) + self.gy * (y - self.cy)

    def left_x(self, xr, y):
        """Left coordinate whose match lands on right coordinate ``xr``."""
        return (xr + self.d0 - self.gx * self.cx + self.gy * (y - self.cy)) / (1.0 - self.gx)

    def covers(self, x, y):
        if self.shape == "background":
            return np.ones(np.broadcast(x, y).shape, dtype=bool)
        bx, by, rx, ry = self.box
        if self.shape == "rect":
            return (np.abs(x - bx) <= rx) & (np.abs(y - by) <= ry)
        return ((x - bx) / rx) ** 2 + ((y - by) / ry) ** 2 <= 1.0

    def intensity(self, x, y, pad):
        val = np.full(np.broadcast(x, y).shape, self.mean, dtype=np.float64)
        for grid, cell, amp in self.texture:
            coords = np.stack([(y + pad) / cell, (x + pad) / cell])
            val += amp * map_coordinates(grid, coords, order=3, mode="nearest")
        return val


def _make_layer(rng, spec, shape, d_lo, d_hi, pad, ext_w):
    h, w = spec.height, spec.width
    gx, gy = rng.uniform(-spec.slant, spec.slant, size=2)
    if spec.integer_disparity:
        gx = gy = 0.0
    cx, cy = w / 2.0, h / 2.0
    # keep the plane inside [d_lo, d_hi] over the frame
    span = abs(gx) * w / 2 + abs(gy) * h / 2
    lo, hi = d_lo + span, max(d_lo + span, d_hi - span)
    d0 = rng.uniform(lo, hi)
    if spec.integer_disparity:
        d0 = float(np.round(d0))
    if shape == "background":
        box = (cx, cy, w, h)
    else:
        box = (rng.uniform(0.1 * w, 0.9 * w), rng.uniform(0.15 * h, 0.85 * h),
               rng.uniform(0.08 * w, 0.22 * w), rng.uniform(0.15 * h, 0.4 * h))
    contrast = rng.uniform(*spec.contrast)
    texture = []
    for i, cell in enumerate(spec.texture_cells):
        gh = int(np.ceil((h + 2 * pad) / cell)) + 4
        gw = int(np.ceil((ext_w + 2 * pad) / cell)) + 4
        grid = rng.standard_normal((gh, gw))
        texture.append((grid, float(cell), contrast / (1.0 + 0.5 * i)))
    mean = rng.uniform(0.3, 0.6)
    return _Layer(d0, gx, gy, cx, cy, shape, box, texture, mean)


def generate(spec):
    """Render one scene; returns a :class:`Scene` (unpacks as left, right, gt, occlusion)."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    d_lo, d_hi = spec.disparity_range
    pad = 8
    ext_w = w + int(np.ceil(d_hi)) + 8
    bg_hi = d_lo + 0.4 * (d_hi - d_lo)
    layers = [_make_layer(rng, spec, "background", d_lo, bg_hi, pad, ext_w)]
    fg = [_make_layer(rng, spec, rng.choice(["rect", "ellipse"]), d_lo, d_hi, pad, ext_w)
          for _ in range(spec.layers - 1)]
    layers += sorted(fg, key=lambda layer: layer.d0)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    vis_l = np.zeros((h, w), dtype=np.int64)
    for i, layer in enumerate(layers):
        vis_l[layer.covers(xs, ys)] = i
    left = np.zeros((h, w))
    gt = np.zeros((h, w))
    for i, layer in enumerate(layers):
        m = vis_l == i
        left[m] = layer.intensity(xs[m], ys[m], pad)
        gt[m] = layer.disparity(xs[m], ys[m])

    vis_r = np.zeros((h, w), dtype=np.int64)
    src_x = np.zeros((h, w))
    for i, layer in enumerate(layers):
        lx = layer.left_x(xs, ys)
        m = layer.covers(lx, ys)
        vis_r[m] = i
        src_x[m] = lx[m]
    right = np.zeros((h, w))
    gt_right = np.zeros((h, w))
    for i, layer in enumerate(layers):
        m = vis_r == i
        right[m] = layer.intensity(src_x[m], ys[m], pad)
        gt_right[m] = layer.disparity(src_x[m], ys[m])

    xr = xs - gt
    occluded = xr < 0
    for i, layer in enumerate(layers):
        nearer = vis_l < i
        if not nearer.any():
            continue
        lx = layer.left_x(xr[nearer], ys[nearer])
        hit = layer.covers(lx, ys[nearer])
        occ = occluded[nearer]
        occluded[nearer] = occ | hit

    left += rng.normal(0.0, spec.noise, size=left.shape) if spec.noise > 0 else 0.0
    right += rng.normal(0.0, spec.noise, size=right.shape) if spec.noise > 0 else 0.0
    right += spec.brightness_shift
    left = np.clip(left, 0.0, 1.0).astype(np.float32)
    right = np.clip(right, 0.0, 1.0).astype(np.float32)
    return Scene(left, right, gt.astype(np.float32), occluded, gt_right.astype(np.float32), spec)


def generate_set(domain, n, seed=0, **kw):
    """``n`` scenes of one domain with seeds ``seed, seed+1, ...``."""
    return [generate(SceneSpec.for_domain(domain, seed + i, **kw)) for i in range(n)]


def mean_gradient(img):
    """Mean absolute finite-difference gradient magnitude (texture strength)."""
    img = np.asarray(img, dtype=np.float64)
    gx = np.abs(np.diff(img, axis=1)).mean()
    gy = np.abs(np.diff(img, axis=0)).mean()
    return 0.5 * (gx + gy)


def save_scene(scene, directory, name):
    """Persist as ``name_left.png``, ``name_right.png``, ``name_gt.pfm``, ``name_occ.pgm``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    formats.write_image(scene.left, d / f"{name}_left.png")
    formats.write_image(scene.right, d / f"{name}_right.png")
    formats.write_disparity(scene.gt, d / f"{name}_gt.pfm", "pfm")
    formats.write_mask(scene.occlusion, d / f"{name}_occ.pgm")


def load_scene(directory, name):
    d = Path(directory)
    left = formats.read_image(d / f"{name}_left.png")
    right = formats.read_image(d / f"{name}_right.png")
    gt = formats.read_disparity(d / f"{name}_gt.pfm", "pfm")
    occ_path = d / f"{name}_occ.pgm"
    occ = formats.read_mask(occ_path) if occ_path.exists() else np.zeros_like(gt, dtype=bool)
    return Scene(left, right, gt, occ, np.full_like(gt, formats.INVALID))


__all__ = ["SceneSpec", "Scene", "generate", "generate_set", "mean_gradient",
           "save_scene", "load_scene"]
