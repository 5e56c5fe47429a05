"""Disparity (bad3, MAE) and monocular depth (Eigen protocol) metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveGroundTruth, NoValidPixels, check_same_shape

STEREO_KEYS = ("bad3", "mae")
MONO_KEYS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")


@dataclass
class MetricReport:
    values: dict
    count: int
    config: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]


def stereo_metrics(pred, gt, threshold=3.0, mask=None):
    """bad3 (percent of valid pixels with error > threshold) and MAE.

    Pixels are evaluated where ``gt`` is valid (non-negative) and ``mask``,
    if given, is true. Invalid predictions count as wrong with error |gt|.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=("pred", "gt"))
    valid = gt >= 0
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise NoValidPixels("no valid ground-truth pixels to evaluate")
    err = np.abs(np.where(pred >= 0, pred, 0.0) - gt)[valid]
    return MetricReport({"bad3": 100.0 * np.count_nonzero(err > threshold) / n,
                         "mae": float(err.mean())},
                        n, {"threshold": threshold})


def mono_metrics(pred, gt, cap=80.0, min_depth=0.1, mask=None):
    """Standard seven depth metrics (AbsRel, SqRel, RMSE, RMSElog, three deltas).

    ``mask`` marks pixels carrying ground truth (default: finite and not the
    -1 sentinel); those must be strictly positive. Ground truth outside
    ``[min_depth, cap]`` is skipped and predictions are clamped to it.
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, names=("pred", "gt"))
    labelled = np.isfinite(gt) & (gt != -1) if mask is None else np.asarray(mask, dtype=bool)
    if np.any(gt[labelled] <= 0):
        raise NonPositiveGroundTruth("ground-truth depth must be > 0 on valid pixels")
    valid = labelled & (gt >= min_depth) & (gt <= cap)
    if not valid.any():
        raise NoValidPixels("no valid ground-truth depth in range")
    g = gt[valid]
    p = np.clip(pred[valid], min_depth, cap)
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    values = {
        "abs_rel": float(np.mean(np.abs(diff) / g)),
        "sq_rel": float(np.mean(diff ** 2 / g)),
        "rmse": float(np.sqrt(np.mean(diff ** 2))),
        "rmse_log": float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        "a1": float(np.mean(ratio < 1.25)),
        "a2": float(np.mean(ratio < 1.25 ** 2)),
        "a3": float(np.mean(ratio < 1.25 ** 3)),
    }
    return MetricReport(values, int(valid.sum()), {"cap": cap, "min_depth": min_depth})


def disparity_to_depth(disp, focal_baseline):
    """Depth = focal*baseline / disparity; non-positive disparities become invalid (-1)."""
    disp = np.asarray(disp, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(disp > 0, focal_baseline / np.where(disp > 0, disp, 1.0), -1.0)


def aggregate(reports):
    """Pixel-count weighted combination; RMSE-style keys combine in squared form."""
    total = sum(r.count for r in reports)
    if total == 0:
        raise NoValidPixels("nothing to aggregate")
    out = {}
    for key in reports[0].values:
        if key.startswith("rmse"):
            out[key] = float(np.sqrt(sum(r.count * r.values[key] ** 2 for r in reports) / total))
        else:
            out[key] = float(sum(r.count * r.values[key] for r in reports) / total)
    return MetricReport(out, total, dict(reports[0].config))


def write_metrics_csv(path, named_reports, float_format="%.6f"):
    """One row per evaluated map plus an ``aggregate`` row."""
    named_reports = list(named_reports)
    keys = list(named_reports[0][1].values)
    agg = aggregate([r for _, r in named_reports])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "pixels", *keys])
        for name, rep in [*named_reports, ("aggregate", agg)]:
            writer.writerow([name, rep.count, *(float_format % rep.values[k] for k in keys)])
    return agg
