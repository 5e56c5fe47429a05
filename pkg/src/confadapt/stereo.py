"""Classical stereo: census/AD cost volumes, SGM aggregation, WTA and LR check.

Cost volumes are float32 arrays of shape ``(H, W, D)`` where
``vol[y, x, d]`` compares ``left[y, x]`` with ``right[y, x - d]``; entries
whose match falls outside the frame (or on a census border pixel) hold
``np.inf``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeMismatch, check_same_shape
from .formats import INVALID

INVALID_COST = np.float32(np.inf)

PATHS_4 = ((0, 1), (0, -1), (1, 0), (-1, 0))
PATHS_8 = PATHS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class CensusMap:
    codes: np.ndarray  # uint64 (H, W)
    valid: np.ndarray  # bool (H, W); False where the window leaves the image
    window: int

    @property
    def bits(self):
        return self.window * self.window - 1


@dataclass(frozen=True)
class SgmParams:
    p1: float = 7
    p2: float = 86
    paths: int = 8

    def __post_init__(self):
        if not 0 < self.p1 <= self.p2:
            raise ArgumentError(f"SGM needs 0 < p1 <= p2, got p1={self.p1}, p2={self.p2}")
        if self.paths not in (4, 8):
            raise ArgumentError(f"SGM paths must be 4 or 8, got {self.paths}")


def census_transform(img, window=5):
    """Bit signature per pixel: 1 where a neighbour is darker than the centre.

    Neighbours are visited in raster order; the first one lands in the most
    significant bit. Pixels whose window leaves the image are flagged invalid
    and carry code 0.
    """
    img = np.asarray(img)
    h, w = img.shape
    if window < 3 or window % 2 == 0:
        raise ArgumentError(f"census window must be odd and >= 3, got {window}")
    if window > min(h, w):
        raise ArgumentError(f"census window {window} larger than image {img.shape}")
    if window * window - 1 > 64:
        raise ArgumentError("census signatures above 64 bits are not supported")
    r = window // 2
    codes = np.zeros((h, w), dtype=np.uint64)
    inner = codes[r:h - r, r:w - r]
    centre = img[r:h - r, r:w - r]
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = img[r + dy:h - r + dy, r + dx:w - r + dx]
            inner <<= np.uint64(1)
            inner |= (nb < centre).astype(np.uint64)
    valid = np.zeros((h, w), dtype=bool)
    valid[r:h - r, r:w - r] = True
    return CensusMap(codes, valid, window)


def build_cost_volume(left, right, d_max, metric="census", window=5):
    """Matching cost for every pixel and disparity ``0 .. d_max - 1``.

    ``metric`` is ``"census"`` (Hamming distance of census signatures) or
    ``"ad"`` (absolute intensity difference).
    """
    left, right = np.asarray(left), np.asarray(right)
    check_same_shape(left, right, names=("left", "right"))
    if d_max < 1:
        raise ArgumentError(f"d_max must be >= 1, got {d_max}")
    h, w = left.shape
    vol = np.full((h, w, d_max), INVALID_COST, dtype=np.float32)
    if metric == "census":
        cl, cr = census_transform(left, window), census_transform(right, window)
        for d in range(min(d_max, w)):
            ham = np.bitwise_count(cl.codes[:, d:] ^ cr.codes[:, :w - d]).astype(np.float32)
            ok = cl.valid[:, d:] & cr.valid[:, :w - d]
            vol[:, d:, d] = np.where(ok, ham, INVALID_COST)
    elif metric == "ad":
        lf, rf = left.astype(np.float32), right.astype(np.float32)
        for d in range(min(d_max, w)):
            vol[:, d:, d] = np.abs(lf[:, d:] - rf[:, :w - d])
    else:
        raise ArgumentError(f"unknown cost metric {metric!r}")
    return vol


def fill_invalid(vol, p2):
    """Replace invalid costs by ``max valid cost + p2 + 1`` (keeps paths finite)."""
    finite = np.isfinite(vol)
    top = vol[finite].max() if finite.any() else 0.0
    return np.where(finite, vol, np.float32(top + p2 + 1)).astype(np.float32)


def _path_step(cost, prev, p1, p2):
    m = prev.min(axis=-1, keepdims=True)
    best = prev.copy()
    np.minimum(best[..., 1:], prev[..., :-1] + p1, out=best[..., 1:])
    np.minimum(best[..., :-1], prev[..., 1:] + p1, out=best[..., :-1])
    np.minimum(best, m + p2, out=best)
    return cost + best - m


def sgm_path(vol, direction, p1, p2):
    """Aggregate a finite cost volume along one scan direction ``(dy, dx)``.

    ``L(p, d) = C(p, d) + min(L(q, d), L(q, d +- 1) + p1, min_k L(q, k) + p2)
    - min_k L(q, k)`` with ``q = p - (dy, dx)``; pixels without a predecessor
    start from ``C``.
    """
    dy, dx = direction
    vol = np.asarray(vol, dtype=np.float32)
    p1, p2 = np.float32(p1), np.float32(p2)
    h, w, _ = vol.shape
    out = np.empty_like(vol)
    if dx != 0:
        cols = range(w) if dx > 0 else range(w - 1, -1, -1)
        for x in cols:
            xp = x - dx
            out[:, x] = vol[:, x]
            if not 0 <= xp < w:
                continue
            ys = np.arange(h)
            yp = ys - dy
            has = (yp >= 0) & (yp < h)
            out[ys[has], x] = _path_step(vol[ys[has], x], out[yp[has], xp], p1, p2)
    else:
        rows = range(h) if dy > 0 else range(h - 1, -1, -1)
        for y in rows:
            yp = y - dy
            if 0 <= yp < h:
                out[y] = _path_step(vol[y], out[yp], p1, p2)
            else:
                out[y] = vol[y]
    return out


def sgm_aggregate(vol, params=None, p1=None, p2=None, paths=None):
    """Semi-global aggregation summed over 4 or 8 paths.

    Invalid entries are filled before aggregation and marked invalid again in
    the result so that winner-take-all never selects them.
    """
    params = params or SgmParams()
    if p1 is not None or p2 is not None or paths is not None:
        params = SgmParams(params.p1 if p1 is None else p1,
                           params.p2 if p2 is None else p2,
                           params.paths if paths is None else paths)
    invalid = ~np.isfinite(vol)
    filled = fill_invalid(vol, params.p2)
    total = np.zeros_like(filled)
    for direction in (PATHS_4 if params.paths == 4 else PATHS_8):
        total += sgm_path(filled, direction, params.p1, params.p2)
    total[invalid] = INVALID_COST
    return total


def winner_take_all(vol):
    """Per-pixel argmin over valid disparities; ties go to the smaller one."""
    vol = np.asarray(vol)
    disp = np.argmin(vol, axis=2).astype(np.float32)
    disp[~np.isfinite(vol).any(axis=2)] = INVALID
    return disp


def _lookup_right(d_left, d_right):
    """Right-view disparity seen from each left pixel; NaN when out of frame."""
    h, w = d_left.shape
    xr = np.arange(w)[None, :] - np.floor(d_left + 0.5).astype(np.int64)
    inside = (xr >= 0) & (xr < w) & (d_left >= 0)
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    seen = np.full((h, w), np.nan, dtype=np.float32)
    seen[inside] = d_right[rows[inside], xr[inside]]
    seen[seen < 0] = np.nan
    return seen


def left_right_check(d_left, d_right, tol=1.0):
    """Invalidate left disparities that disagree with the right-view map."""
    d_left, d_right = np.asarray(d_left), np.asarray(d_right)
    check_same_shape(d_left, d_right, names=("d_left", "d_right"))
    seen = _lookup_right(d_left, d_right)
    with np.errstate(invalid="ignore"):
        keep = np.abs(d_left - seen) <= tol
    return np.where(keep, d_left, INVALID).astype(np.float32)


def match_stereo(left, right, algo="SGM", d_max=32, window=5, params=None, return_right=False):
    """Dense disparity from a rectified pair.

    ``AD`` is census cost + winner-take-all; ``SGM`` adds semi-global
    aggregation. With ``return_right`` the right-view map is computed as well
    by matching the mirrored, swapped pair.
    """
    algo = algo.upper()
    if algo not in ("AD", "SGM"):
        raise ArgumentError(f"unknown stereo algorithm {algo!r}")
    left, right = np.asarray(left), np.asarray(right)
    if left.shape != right.shape:
        raise ShapeMismatch(f"left {left.shape} vs right {right.shape}")

    def solve(a, b):
        vol = build_cost_volume(a, b, d_max, "census", window)
        if algo == "SGM":
            vol = sgm_aggregate(vol, params)
        return winner_take_all(vol)

    d_left = solve(left, right)
    if not return_right:
        return d_left
    d_right = solve(right[:, ::-1], left[:, ::-1])[:, ::-1].copy()
    return d_left, d_right
