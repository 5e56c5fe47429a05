"""Adaptation losses: confidence-guided regression, smoothness, reconstruction.

All builders take the prediction as a :class:`~confadapt.autodiff.Tensor`
holding disparities in pixels (shape ``(H, W)`` or ``(1, H, W)``) and plain
numpy arrays for everything that is not optimised.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeMismatch
from .nn import Network

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossConfig:
    """Weights of the combined loss ``L_c + lambda_smooth*L_s + lambda_recon*L_r``.

    ``tau_mode`` is ``"fixed"`` (hard mask at ``tau``), ``"learned"`` (one
    scalar threshold, soft gate) or ``"taunet"`` (per-image threshold, soft
    gate). ``use_confidence=False`` regresses the raw labels.
    """

    tau_mode: str = "fixed"
    tau: float = 0.8
    lambda_smooth: float = 0.1
    lambda_recon: float = 0.1
    alpha: float = 0.85
    gate_k: float = 50.0
    tau_init: float = 0.99
    use_confidence: bool = True

    def __post_init__(self):
        if self.tau_mode not in ("fixed", "learned", "taunet"):
            raise ArgumentError(f"unknown tau mode {self.tau_mode!r}")
        if self.lambda_smooth < 0 or self.lambda_recon < 0:
            raise ArgumentError("loss weights must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError("alpha must lie in [0, 1]")
        if self.tau_mode == "fixed" and not 0.0 <= self.tau < 1.0:
            raise ArgumentError("fixed tau must lie in [0, 1)")
        if self.gate_k <= 0:
            raise ArgumentError("gate temperature must be positive")
        if not 0.0 < self.tau_init < 1.0:
            raise ArgumentError("tau_init must lie in (0, 1)")

    @classmethod
    def preset(cls, target="stereo", algo="AD", variant="complete"):
        """Hyper-parameters per target network and label source.

        ``variant``: ``regression``, ``weighted``, ``masked``, ``complete``,
        ``learned`` or ``taunet``.
        """
        tau = 0.9 if "SGM" in algo.upper() else 0.8
        lam_r = 0.1 if target == "stereo" else 0.01
        base = cls(tau=tau, lambda_smooth=0.1, lambda_recon=lam_r)
        if variant == "complete":
            return base
        if variant == "masked":
            return replace(base, lambda_smooth=0.0, lambda_recon=0.0)
        if variant == "weighted":
            return replace(base, tau=0.0, lambda_smooth=0.0, lambda_recon=0.0)
        if variant == "regression":
            return replace(base, tau=0.0, lambda_smooth=0.0, lambda_recon=0.0,
                           use_confidence=False)
        if variant in ("learned", "taunet"):
            return replace(base, tau_mode=variant)
        raise ArgumentError(f"unknown loss variant {variant!r}")


def _flat_pred(pred, shape):
    pred = ad.as_tensor(pred)
    if pred.shape != shape:
        if pred.data.size != int(np.prod(shape)):
            raise ShapeMismatch(f"prediction {pred.shape} vs labels {shape}")
        pred = ad.reshape(pred, shape)
    return pred


def support_mask(labels, conf, tau):
    """Pixels with a valid label and confidence strictly above ``tau``."""
    labels, conf = np.asarray(labels), np.asarray(conf)
    if labels.shape != conf.shape:
        raise ShapeMismatch(f"labels {labels.shape} vs confidence {conf.shape}")
    return (labels >= 0) & (conf > tau)


def confidence_guided_loss(pred, labels, conf, tau):
    """Mean of ``C * |pred - D|`` over the support mask (0 when it is empty)."""
    labels = np.asarray(labels)
    conf = np.asarray(conf, dtype=labels.dtype)
    mask = support_mask(labels, conf, tau)
    pred = _flat_pred(pred, labels.shape)
    err = ad.mul(ad.abs(ad.sub(pred, labels)), conf)
    return ad.masked_mean(err, mask)


def learnable_tau_loss(pred, labels, conf, tau, k=50.0):
    """Soft-gated confidence loss plus the ``-log(1 - tau)`` penalty.

    ``tau`` is a scalar tensor in (0, 1). The hard indicator ``C > tau`` is
    replaced by ``sigmoid(k * (C - tau))`` so the threshold receives a
    gradient; the masked term is the gate-weighted mean of ``C * |pred - D|``.
    """
    labels = np.asarray(labels)
    conf = np.asarray(conf, dtype=labels.dtype)
    if labels.shape != conf.shape:
        raise ShapeMismatch(f"labels {labels.shape} vs confidence {conf.shape}")
    tau = ad.reshape(ad.as_tensor(tau), ())
    pred = _flat_pred(pred, labels.shape)
    valid = (labels >= 0).astype(labels.dtype)
    penalty = ad.mul(ad.log(ad.sub(1.0, tau)), -1.0)
    if not valid.any():
        return penalty
    gate = ad.mul(ad.sigmoid(ad.mul(ad.sub(conf, tau), float(k))), valid)
    err = ad.mul(ad.abs(ad.sub(pred, labels)), conf)
    soft = ad.div(ad.sum(ad.mul(gate, err)), ad.sum(gate))
    return ad.add(soft, penalty)


def hard_tau_loss(pred, labels, conf, tau):
    """Hard-mask loss with the log penalty, for a plain float ``tau``."""
    return ad.add(confidence_guided_loss(pred, labels, conf, tau), float(-np.log1p(-tau)))


def smoothness_loss(pred, image):
    """Edge-aware smoothness: ``|dD/dx| exp(-|dI/dx|) + |dD/dy| exp(-|dI/dy|)``.

    Derivatives are 3x3 Sobel responses; the average runs over pixels whose
    Sobel support lies inside the image.
    """
    image = np.asarray(image)
    h, w = image.shape[-2:]
    pred = _flat_pred(pred, (h, w))
    img = image.reshape(h, w).astype(pred.dtype)
    wx = np.exp(-np.abs(ad.sobel_x(img).data))
    wy = np.exp(-np.abs(ad.sobel_y(img).data))
    term = ad.add(ad.mul(ad.abs(ad.sobel_x(pred)), wx), ad.mul(ad.abs(ad.sobel_y(pred)), wy))
    interior = np.zeros((h, w), dtype=bool)
    interior[1:-1, 1:-1] = True
    return ad.masked_mean(term, interior)


def ssim_map(x, y):
    """Per-pixel SSIM from 3x3 box statistics (edge padded)."""
    mu_x, mu_y = ad.box3(x), ad.box3(y)
    sig_x = ad.sub(ad.box3(ad.mul(x, x)), ad.mul(mu_x, mu_x))
    sig_y = ad.sub(ad.box3(ad.mul(y, y)), ad.mul(mu_y, mu_y))
    sig_xy = ad.sub(ad.box3(ad.mul(x, y)), ad.mul(mu_x, mu_y))
    num = ad.mul(ad.add(ad.mul(ad.mul(mu_x, mu_y), 2.0), SSIM_C1),
                 ad.add(ad.mul(sig_xy, 2.0), SSIM_C2))
    den = ad.mul(ad.add(ad.add(ad.mul(mu_x, mu_x), ad.mul(mu_y, mu_y)), SSIM_C1),
                 ad.add(ad.add(sig_x, sig_y), SSIM_C2))
    return ad.div(num, den)


def reconstruction_map(left, right, pred, alpha=0.85):
    """Per-pixel ``alpha*(1-SSIM)/2 + (1-alpha)*|I_l - warp(I_r, D)|``."""
    left, right = np.asarray(left), np.asarray(right)
    if left.shape != right.shape:
        raise ShapeMismatch(f"left {left.shape} vs right {right.shape}")
    h, w = left.shape[-2:]
    pred = _flat_pred(pred, (h, w))
    il = left.reshape(h, w).astype(pred.dtype)
    warped = ad.bilinear_warp(ad.Tensor(right.reshape(h, w).astype(pred.dtype)), pred)
    dssim = ad.mul(ad.sub(1.0, ssim_map(ad.Tensor(il), warped)), alpha / 2.0)
    l1 = ad.mul(ad.abs(ad.sub(il, warped)), 1.0 - alpha)
    return ad.add(dssim, l1)


def reconstruction_loss(left, right, pred, alpha=0.85):
    return ad.mean(reconstruction_map(left, right, pred, alpha))


def total_loss(l_c, l_s=None, l_r=None, config=None):
    """``L_c + lambda_smooth * L_s + lambda_recon * L_r``; absent terms count as 0."""
    config = config or LossConfig()
    total = ad.as_tensor(l_c)
    if l_s is not None and config.lambda_smooth > 0:
        total = ad.add(total, ad.mul(l_s, config.lambda_smooth))
    if l_r is not None and config.lambda_recon > 0:
        total = ad.add(total, ad.mul(l_r, config.lambda_recon))
    return total


class TauNet(Network):
    """Image-conditioned threshold: three 3x3 convs (64 filters), global
    average pooling, a linear read-out and a sigmoid."""

    kind = "taunet"

    def __init__(self, width=64, seed=0, zero=False):
        self.width = width
        super().__init__(seed=seed, zero=zero)

    def _layout(self):
        w = self.width
        return [("conv1", 1, w, 3), ("conv2", w, w, 3), ("conv3", w, w, 3), ("readout", w, 1, 1)]

    def config(self):
        return {"width": self.width}

    def forward(self, image):
        x = ad.as_tensor(image)
        if x.data.ndim == 2:
            x = ad.reshape(x, (1,) + x.shape)
        x = ad.leaky_relu(self.conv("conv1", x))
        x = ad.leaky_relu(self.conv("conv2", x))
        x = ad.leaky_relu(self.conv("conv3", x))
        x = self.conv("readout", ad.avg_pool_global(x))
        return ad.reshape(ad.sigmoid(x), ())

    __call__ = forward
