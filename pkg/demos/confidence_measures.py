"""Left-right consistency vs a small learned confidence net.

ConfNet sees only the disparity map. It is trained on domain A and scored on
domain B by how well it ranks wrong pixels below right ones (AUC).
"""
import numpy as np

from confadapt import confidence, stereo, synth

def sgm(s):
    return stereo.match_stereo(s.left, s.right, "SGM", d_max=24, return_right=True)

train = [(sgm(s)[0], s.gt) for s in synth.generate_set("A", 12, seed=100)]
log = []
net = confidence.confnet_train(train, epochs=8, d_max=24, log=log)
print("ConfNet BCE per epoch:", np.round(log, 3))

for s in synth.generate_set("B", 3, seed=900):
    d_l, d_r = sgm(s)
    lrc = confidence.lrc_confidence(d_l, d_r)
    cnn = net(d_l)
    print(f"scene {s.spec.seed}: AUC  LRC {confidence.outlier_auc(lrc, d_l, s.gt):.3f}  "
          f"ConfNet {confidence.outlier_auc(cnn, d_l, s.gt):.3f}")
