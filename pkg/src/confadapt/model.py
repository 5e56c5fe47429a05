"""TinyDispNet: a small encoder-decoder disparity regressor (stereo or mono)."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeMismatch
from .nn import Network


class TinyDispNet(Network):
    """Three stride-2 encoder convs, three upsample+conv decoder stages with
    skips, and a sigmoid head scaled to ``[0, d_max]``.

    ``mode="stereo"`` stacks left and right images as two input channels;
    ``mode="mono"`` uses the left image only.
    """

    kind = "tinydispnet"

    def __init__(self, mode="stereo", d_max=32.0, channels=(16, 32, 64), seed=0, zero=False,
                 pad_input=True):
        if mode not in ("stereo", "mono"):
            raise ArgumentError(f"mode must be 'stereo' or 'mono', got {mode!r}")
        self.mode = mode
        self.d_max = float(d_max)
        self.channels = tuple(int(c) for c in channels)
        self.pad_input = pad_input
        super().__init__(seed=seed, zero=zero)

    @property
    def in_channels(self):
        return 2 if self.mode == "stereo" else 1

    def _layout(self):
        c1, c2, c3 = self.channels
        cin = self.in_channels
        return [
            ("enc1", cin, c1, 3), ("enc2", c1, c2, 3), ("enc3", c2, c3, 3),
            ("dec3", c3 + c2, c2, 3), ("dec2", c2 + c1, c1, 3), ("dec1", c1 + cin, c1, 3),
            ("head", c1, 1, 3),
        ]

    def config(self):
        return {"mode": self.mode, "d_max": self.d_max, "channels": list(self.channels),
                "pad_input": self.pad_input}

    def _stack(self, left, right=None):
        left = np.asarray(left, dtype=np.float32)
        if self.mode == "mono":
            return left[None]
        if right is None:
            raise ArgumentError("stereo TinyDispNet needs both images")
        right = np.asarray(right, dtype=np.float32)
        if right.shape != left.shape:
            raise ShapeMismatch(f"left {left.shape} vs right {right.shape}")
        return np.stack([left, right])

    def forward(self, left, right=None):
        """Differentiable ``(1, H, W)`` disparity prediction."""
        x = self._stack(left, right)
        _, h, w = x.shape
        ph, pw = -h % 8, -w % 8
        if ph or pw:
            if not self.pad_input:
                raise ShapeMismatch(f"input {h}x{w} not divisible by 8 and padding disabled")
            x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
        x = ad.Tensor(x.astype(self.params["enc1.w"].dtype))
        e1 = ad.leaky_relu(self.conv("enc1", x, stride=2))
        e2 = ad.leaky_relu(self.conv("enc2", e1, stride=2))
        e3 = ad.leaky_relu(self.conv("enc3", e2, stride=2))
        d3 = ad.leaky_relu(self.conv("dec3", ad.concat([ad.upsample2x(e3), e2])))
        d2 = ad.leaky_relu(self.conv("dec2", ad.concat([ad.upsample2x(d3), e1])))
        d1 = ad.leaky_relu(self.conv("dec1", ad.concat([ad.upsample2x(d2), x])))
        out = ad.mul(ad.sigmoid(self.conv("head", d1)), self.d_max)
        if ph or pw:
            out = ad.crop(out, h, w)
        return out

    __call__ = forward

    def predict(self, left, right=None):
        """Numpy ``(H, W)`` disparity without keeping gradients around."""
        return self.forward(left, right).data[0].astype(np.float32)


def init(seed=0, mode="stereo", d_max=32.0, **kwargs):
    return TinyDispNet(mode=mode, d_max=d_max, seed=seed, **kwargs)
