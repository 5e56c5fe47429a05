"""Adapt a disparity net from domain A to domain B without ground truth.

Small-scale version of the full experiment (see tests/test_acceptance.py for
the real one): pre-train on A, make SGM labels on B with LRC confidence, then
compare plain regression against confidence-masked adaptation.

With only a few epochs every variant lands on the same plateau; the variants
separate after a few dozen epochs on more scenes.
"""
import numpy as np

from confadapt import adapt, synth
from confadapt.losses import LossConfig
from confadapt.metrics import stereo_metrics
from confadapt.model import TinyDispNet

train_a = synth.generate_set("A", 12, seed=0)
train_b = synth.generate_set("B", 12, seed=1000)
test_b = synth.generate_set("B", 6, seed=2000)

net, hist = adapt.pretrain(TinyDispNet(d_max=24), train_a, epochs=8)
print("pre-training L1:", np.round(hist, 2))

samples = [adapt.generate_sample(s.left, s.right, "SGM", d_max=24) for s in train_b]

def bad3(model):
    return np.mean([stereo_metrics(model.predict(s.left, s.right), s.gt)["bad3"] for s in test_b])

print(f"no adaptation     bad3 {bad3(net):.2f}")
for variant in ("regression", "masked", "complete"):
    cfg = adapt.AdaptConfig(loss=LossConfig.preset("stereo", "SGM", variant), epochs=4)
    adapted, log = adapt.adapt_model(net, samples, cfg)
    print(f"{variant:<17} bad3 {bad3(adapted):.2f}  (|P_v| {log[-1]['pv_fraction']:.0%})")
