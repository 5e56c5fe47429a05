"""Parameter containers shared by the small convolutional networks."""
from __future__ import annotations

import copy

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .formats import load_checkpoint, save_checkpoint


def he_conv(rng, cin, cout, k=3):
    """He (fan-in) normal init for a ``(cout, cin, k, k)`` kernel, zero bias."""
    std = np.sqrt(2.0 / (cin * k * k))
    w = (rng.standard_normal((cout, cin, k, k)) * std).astype(np.float32)
    return w, np.zeros(cout, dtype=np.float32)


class Network:
    """Ordered named parameters plus checkpoint I/O.

    Subclasses set ``kind`` and implement ``config()`` (constructor keyword
    arguments) and ``_layout()`` (list of ``(name, cin, cout, k)`` convs).
    """

    kind = "network"

    def __init__(self, seed=0, zero=False):
        rng = np.random.default_rng(seed)
        self.params = {}
        for name, cin, cout, k in self._layout():
            w, b = he_conv(rng, cin, cout, k)
            if zero:
                w[:] = 0
            self.params[f"{name}.w"] = ad.Tensor(w, requires_grad=True, name=f"{name}.w")
            self.params[f"{name}.b"] = ad.Tensor(b, requires_grad=True, name=f"{name}.b")

    def _layout(self):
        raise NotImplementedError

    def config(self):
        return {}

    def conv(self, name, x, stride=1):
        return ad.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=stride)

    def parameters(self):
        return list(self.params.values())

    def n_params(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def copy(self):
        return copy.deepcopy(self)

    def state(self):
        return [(name, p.data) for name, p in self.params.items()]

    def same_weights(self, other):
        return all(np.array_equal(a, b) for (_, a), (_, b) in zip(self.state(), other.state()))

    def save(self, path):
        save_checkpoint(path, {"kind": self.kind, "config": self.config()}, self.state())

    @classmethod
    def from_arrays(cls, config, arrays):
        net = cls(**config)
        if [n for n, _ in arrays] != list(net.params):
            raise ShapeMismatch(f"{cls.kind}: parameter names do not match the architecture")
        for name, arr in arrays:
            p = net.params[name]
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{name}: checkpoint {arr.shape} vs architecture {p.shape}")
            p.data = arr.astype(np.float32).copy()
            p.zero_grad()
        return net

    @classmethod
    def load(cls, path):
        desc, arrays = load_checkpoint(path)
        if desc.get("kind") != cls.kind:
            raise ShapeMismatch(f"checkpoint holds {desc.get('kind')!r}, expected {cls.kind!r}")
        return cls.from_arrays(desc["config"], arrays)
