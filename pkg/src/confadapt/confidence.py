"""Confidence estimators for disparity maps.

``lrc_confidence`` is a non-learned left-right consistency score.
``ConfNet`` is a small fully-convolutional classifier that looks only at the
disparity map and predicts, per pixel, whether the value is within 3 px of the
truth.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .errors import EmptyDataset, ShapeMismatch, check_same_shape
from .nn import Network
from .stereo import _lookup_right

CORRECT_THRESHOLD = 3.0
DEFAULT_EPOCHS = 14


def lrc_confidence(d_left, d_right, k=3.0):
    """``max(0, 1 - |d_l - d_r(x - round(d_l))| / k)``; 0 for sentinels or out of frame."""
    d_left, d_right = np.asarray(d_left), np.asarray(d_right)
    check_same_shape(d_left, d_right, names=("d_left", "d_right"))
    seen = _lookup_right(d_left, d_right)
    with np.errstate(invalid="ignore"):
        conf = np.maximum(0.0, 1.0 - np.abs(d_left - seen) / k)
    return np.nan_to_num(conf, nan=0.0).astype(np.float32)


class LRCConfidence:
    """Callable wrapper so LRC and ConfNet share the ``(d_left, d_right)`` signature."""

    needs_right = True

    def __init__(self, k=3.0):
        self.k = k

    def __call__(self, d_left, d_right=None):
        if d_right is None:
            raise ShapeMismatch("LRC confidence needs the right-view disparity map")
        return lrc_confidence(d_left, d_right, self.k)


class ConfNet(Network):
    """Four 3x3 convs (16-16-16-1), leaky ReLU, sigmoid output."""

    kind = "confnet"
    needs_right = False

    def __init__(self, channels=(16, 16, 16), d_max=32.0, seed=0, zero=False):
        self.channels = tuple(int(c) for c in channels)
        self.d_max = float(d_max)
        super().__init__(seed=seed, zero=zero)

    def _layout(self):
        chans = (1,) + self.channels + (1,)
        return [(f"conv{i + 1}", a, b, 3) for i, (a, b) in enumerate(zip(chans[:-1], chans[1:]))]

    def config(self):
        return {"channels": list(self.channels), "d_max": self.d_max}

    def normalise(self, disparity):
        disparity = np.asarray(disparity, dtype=np.float32)
        return np.where(disparity >= 0, disparity / self.d_max, 0.0).astype(np.float32)

    def logits(self, disparity):
        x = np.asarray(disparity)
        if x.ndim != 2:
            raise ShapeMismatch(f"ConfNet expects an (H, W) disparity map, got {x.shape}")
        t = ad.Tensor(self.normalise(x)[None].astype(self.params["conv1.w"].dtype))
        n = len(self.channels) + 1
        for i in range(1, n):
            t = ad.leaky_relu(self.conv(f"conv{i}", t))
        return self.conv(f"conv{n}", t)

    def forward(self, disparity):
        return ad.sigmoid(self.logits(disparity))

    def predict(self, disparity):
        return self.forward(disparity).data[0].astype(np.float32)

    def __call__(self, d_left, d_right=None):
        return self.predict(d_left)


def correctness_labels(disparity, gt, threshold=CORRECT_THRESHOLD):
    """Binary targets (error <= threshold) and the mask of labelled pixels."""
    disparity, gt = np.asarray(disparity), np.asarray(gt)
    check_same_shape(disparity, gt, names=("disparity", "gt"))
    labelled = (disparity >= 0) & (gt >= 0)
    target = (np.abs(disparity - gt) <= threshold) & labelled
    return target.astype(np.float32), labelled


def confnet_loss(net, disparity, gt):
    target, labelled = correctness_labels(disparity, gt)
    return ad.bce_with_logits(net.logits(disparity), target[None], labelled[None])


def dataset_bce(net, dataset):
    return float(np.mean([confnet_loss(net, d, g).item() for d, g in dataset]))


def confnet_train(dataset, epochs=DEFAULT_EPOCHS, lr=1e-3, seed=0, d_max=32.0, net=None,
                  log=None):
    """Fit a ConfNet on ``(disparity, ground_truth)`` pairs, one map per step.

    The visiting order is shuffled every epoch from ``seed``; identical
    arguments give identical weights. ``log``, if a list, receives the mean
    training BCE before training and after each epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyDataset("ConfNet training needs at least one (disparity, gt) pair")
    net = ConfNet(d_max=d_max, seed=seed) if net is None else net.copy()
    opt = ad.Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    if log is not None:
        log.append(dataset_bce(net, dataset))
    for _ in range(epochs):
        for i in rng.permutation(len(dataset)):
            d, g = dataset[i]
            opt.zero_grad()
            ad.backward(confnet_loss(net, d, g))
            opt.step()
        if log is not None:
            log.append(dataset_bce(net, dataset))
    return net


def outlier_auc(conf, disparity, gt, threshold=CORRECT_THRESHOLD):
    """AUC of ``1 - conf`` as a detector of pixels with error > threshold.

    Accepts single maps or lists of maps (pooled). Ties count one half.
    """
    if isinstance(conf, np.ndarray) and conf.ndim == 2:
        conf, disparity, gt = [conf], [disparity], [gt]
    scores, outlier = [], []
    for c, d, g in zip(conf, disparity, gt):
        target, labelled = correctness_labels(d, g, threshold)
        scores.append(1.0 - np.asarray(c)[labelled])
        outlier.append(target[labelled] == 0)
    scores, outlier = np.concatenate(scores), np.concatenate(outlier)
    n_pos, n_neg = int(outlier.sum()), int((~outlier).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[outlier].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
