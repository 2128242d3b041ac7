"""
Logit ensembles under an L2 budget
==================================

Fuses two zoo models, attacks the fused classifier with an L2 budget of
10/255 per pixel on average, and checks which members fall for it.
"""

from pathlib import Path

import numpy as np

from tiattack import AttackConfig, attack, fuse_logits, l2_epsilon, load_bundled_mnist, load_model, make_kernel

zoo = Path(__file__).resolve().parents[1] / "zoo"
members = {mid: load_model(zoo / mid) for mid in ("cnn-s1", "cnn-s2", "cnn-s3", "cnn-s1-shift3")}
source = fuse_logits([members["cnn-s2"], members["cnn-s3"]])

data = load_bundled_mnist("test").subset(200)
eps = l2_epsilon(784)
print(f"L2 budget {eps:.4f}, i.e. 10/255 times sqrt(784)")

for kernel in (None, make_kernel("gaussian", 3)):
    cfg = AttackConfig(method="DIM", kernel=kernel, norm="l2", epsilon=eps)
    res = attack(source, data.images, data.labels, cfg)
    print(f"\n{cfg.label}: largest perturbation {res.perturbation_norm.max():.4f}")
    for mid, m in members.items():
        rate = np.mean(m.predict(res.x_adv) != data.labels)
        print(f"  {mid:14s} fooled on {rate:.3f}")
