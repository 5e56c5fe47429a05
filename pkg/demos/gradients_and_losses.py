"""The autodiff engine and the three adaptation losses.

Every loss is a plain function of Tensors, so gradients come for free and
can be checked against central differences.
"""
import numpy as np

from confadapt import autodiff as ad, losses

rng = np.random.default_rng(0)
left = rng.random((12, 16))
right = np.roll(left, -2, axis=1)
labels = np.full((12, 16), 2.0)
conf = rng.random((12, 16))

pred = ad.Tensor(rng.uniform(1, 3, (1, 12, 16)), requires_grad=True, name="pred")

def objective():
    l_c = losses.confidence_guided_loss(pred, labels, conf, tau=0.5)
    l_s = losses.smoothness_loss(pred, left)
    l_r = losses.reconstruction_loss(left, right, pred)
    return losses.total_loss(l_c, l_s, l_r, losses.LossConfig(lambda_smooth=0.1, lambda_recon=0.1))

print("loss", float(objective().item()))
report = ad.grad_check(objective, {"pred": pred})
print("\n".join(report.lines()))

# only pixels above tau contribute to the label term
mask = losses.support_mask(labels, conf, 0.5)
print(f"|P_v| = {mask.sum()} of {mask.size}")

# the reconstruction term vanishes when the disparity explains the pair
exact = losses.reconstruction_loss(left, right, np.full((1, 12, 16), 2.0))
print("reconstruction at the true shift (interior dominates):", round(float(exact.item()), 4))

# a tiny Adam loop pulling pred onto the labels
opt = ad.Adam([pred], lr=0.05)
for step in range(200):
    opt.zero_grad()
    loss = losses.confidence_guided_loss(pred, labels, np.ones_like(conf), tau=0.0)
    loss.backward()
    opt.step()
print("L1 to labels after 200 Adam steps:", round(float(loss.item()), 4))
