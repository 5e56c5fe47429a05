"""Label generation, label fusion, supervised pre-training and adaptation."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, EmptyDataset, check_same_shape
from .formats import INVALID
from .losses import (LossConfig, TauNet, confidence_guided_loss, learnable_tau_loss,
                     reconstruction_loss, smoothness_loss, support_mask, total_loss)
from .stereo import SgmParams, match_stereo

LOG_FIELDS = ("iteration", "l_c", "l_s", "l_r", "tau", "pv_fraction", "wall_ms")


@dataclass
class AdaptationSample:
    """One training tuple: the image pair, its stereo labels and their confidence."""

    left: np.ndarray
    right: np.ndarray
    labels: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        check_same_shape(self.left, self.right, self.labels, self.conf,
                         names=("left", "right", "labels", "conf"))


@dataclass
class AdaptConfig:
    algo: str = "SGM"
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 5
    lr: float = 1e-3
    tau_lr: float = 1e-2
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ArgumentError("epochs must be >= 1")
        if self.lr <= 0 or self.tau_lr <= 0:
            raise ArgumentError("learning rates must be positive")


def _estimate(estimator, d_left, d_right):
    return np.clip(np.asarray(estimator(d_left, d_right), dtype=np.float32), 0.0, 1.0)


def fuse_labels(a, b):
    """Per pixel keep the disparity of the more confident source.

    ``a`` and ``b`` are ``(disparity, confidence)`` pairs. Ties go to ``a``;
    the fused confidence is the pixel-wise maximum, except that a sentinel
    winner yields a sentinel with confidence 0.
    """
    da, ca = (np.asarray(v) for v in a)
    db, cb = (np.asarray(v) for v in b)
    check_same_shape(da, ca, db, cb, names=("d_a", "c_a", "d_b", "c_b"))
    take_b = cb > ca
    disp = np.where(take_b, db, da).astype(np.float32)
    conf = np.maximum(ca, cb).astype(np.float32)
    bad = disp < 0
    disp[bad] = INVALID
    conf[bad] = 0.0
    return disp, conf


def generate_sample(left, right, algo="SGM", estimator=None, d_max=32, params=None, window=5):
    """Run the stereo matcher and confidence estimator on one pair.

    ``estimator`` is a callable ``(d_left, d_right) -> confidence`` or, for
    ``algo="AD+SGM"``, a dict with one estimator per algorithm.
    """
    algos = [a.strip().upper() for a in algo.split("+")]
    if any(a not in ("AD", "SGM") for a in algos):
        raise ArgumentError(f"unknown stereo algorithm {algo!r}")
    if estimator is None:
        from .confidence import LRCConfidence
        estimator = LRCConfidence()
    fused = None
    for name in algos:
        est = estimator[name] if isinstance(estimator, dict) else estimator
        d_left, d_right = match_stereo(left, right, name, d_max=d_max, window=window,
                                       params=params, return_right=True)
        pair = (d_left, _estimate(est, d_left, d_right))
        fused = pair if fused is None else fuse_labels(fused, pair)
    labels, conf = fused
    conf = np.where(labels >= 0, conf, 0.0).astype(np.float32)
    return AdaptationSample(np.asarray(left, np.float32), np.asarray(right, np.float32),
                            labels, conf)


def _forward(net, left, right):
    return net.forward(left, right if net.mode == "stereo" else None)


def pretrain(net, scenes, epochs=20, lr=1e-3, seed=0):
    """Supervised L1 regression on dense ground truth (source domain)."""
    scenes = list(scenes)
    if not scenes:
        raise EmptyDataset("pre-training needs at least one scene")
    net = net.copy()
    opt = ad.Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(epochs):
        total = 0.0
        for i in rng.permutation(len(scenes)):
            sc = scenes[i]
            opt.zero_grad()
            pred = _forward(net, sc.left, sc.right)
            loss = ad.masked_mean(ad.abs(ad.sub(ad.reshape(pred, sc.gt.shape), sc.gt)),
                                  sc.gt >= 0)
            ad.backward(loss)
            opt.step()
            total += loss.item()
        history.append(total / len(scenes))
    return net, history


def _logit(p):
    return float(np.log(p) - np.log1p(-p))


def adapt_model(net, samples, cfg=None, taunet=None):
    """Fine-tune ``net`` on adaptation samples; returns ``(new_net, log)``.

    ``log`` is a list of dicts with the fields of :data:`LOG_FIELDS`, one per
    optimisation step. The input network is left untouched.
    """
    cfg = cfg or AdaptConfig()
    samples = list(samples)
    if not samples:
        raise EmptyDataset("adaptation needs at least one sample")
    lc = cfg.loss
    net = net.copy()
    params = net.parameters()
    opt = ad.Adam(params, lr=cfg.lr)
    tau_param, tau_opt = None, None
    if lc.tau_mode == "learned":
        tau_param = ad.Tensor(np.array(_logit(lc.tau_init), dtype=np.float64),
                              requires_grad=True, name="tau_logit")
        tau_opt = ad.Adam([tau_param], lr=cfg.tau_lr)
    elif lc.tau_mode == "taunet":
        taunet = (taunet or TauNet(seed=cfg.seed + 1)).copy()
        # start the read-out bias at the requested initial threshold
        taunet.params["readout.b"].data[:] = _logit(lc.tau_init)
        tau_opt = ad.Adam(taunet.parameters(), lr=cfg.tau_lr)

    rng = np.random.default_rng(cfg.seed)
    log = []
    it = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples)) if cfg.shuffle else np.arange(len(samples))
        for i in order:
            s = samples[i]
            t0 = time.perf_counter()
            opt.zero_grad()
            if tau_opt is not None:
                tau_opt.zero_grad()
            pred = _forward(net, s.left, s.right)
            conf = s.conf if lc.use_confidence else np.where(s.labels >= 0, 1.0, 0.0).astype(np.float32)
            if lc.tau_mode == "fixed":
                tau_t = None
                tau_val = lc.tau
                l_c = confidence_guided_loss(pred, s.labels, conf, lc.tau)
            else:
                tau_t = ad.sigmoid(tau_param) if lc.tau_mode == "learned" else taunet(s.left)
                tau_val = tau_t.item()
                l_c = learnable_tau_loss(pred, s.labels, conf, tau_t, lc.gate_k)
            l_s = smoothness_loss(pred, s.left) if lc.lambda_smooth > 0 else None
            l_r = reconstruction_loss(s.left, s.right, pred, lc.alpha) if lc.lambda_recon > 0 else None
            loss = total_loss(l_c, l_s, l_r, lc)
            ad.backward(loss)
            opt.step()
            if tau_opt is not None:
                tau_opt.step()
            pv = support_mask(s.labels, conf, tau_val).mean()
            log.append({
                "iteration": it,
                "l_c": l_c.item(),
                "l_s": l_s.item() if l_s is not None else 0.0,
                "l_r": l_r.item() if l_r is not None else 0.0,
                "tau": tau_val,
                "pv_fraction": float(pv),
                "wall_ms": 1000.0 * (time.perf_counter() - t0),
            })
            it += 1
    if taunet is not None:
        net.taunet = taunet
    return net, log


def write_log_csv(log, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in log:
            writer.writerow({k: (f"{row[k]:.9g}" if isinstance(row[k], float) else row[k])
                             for k in LOG_FIELDS})


def predict_all(net, pairs):
    return [net.predict(l, r if net.mode == "stereo" else None) for l, r in pairs]


__all__ = ["AdaptationSample", "AdaptConfig", "SgmParams", "fuse_labels", "generate_sample",
           "pretrain", "adapt_model", "write_log_csv", "predict_all", "LOG_FIELDS"]
