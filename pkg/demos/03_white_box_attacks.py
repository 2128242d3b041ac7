"""
White-box attacks on one model
==============================

Runs FGSM, BIM, MI-FGSM and DIM, plain and with a Gaussian kernel, against a
trained zoo model, under both the L-infinity and the L2 bound.
"""

from pathlib import Path

import numpy as np

from tiattack import AttackConfig, attack, l2_epsilon, load_bundled_mnist, load_model, make_kernel
from tiattack.tensor import save_pgm

zoo = Path(__file__).resolve().parents[1] / "zoo"
model = load_model(zoo / "cnn-s1")
data = load_bundled_mnist("test").subset(200)
x, y = data.images, data.labels
print("clean accuracy", model.accuracy(data))

# BIM with a large MNIST-style budget
res = attack(model, x, y, AttackConfig(method="BIM", epsilon=0.3, iterations=10, alpha=0.03))
print("BIM eps=0.3 success", res.success.mean())
print("mean loss per iteration", np.round(res.loss_trace.mean(axis=1), 3))

gauss = make_kernel("gaussian", 3)
for norm, eps in (("linf", 16 / 255), ("l2", l2_epsilon(784))):
    print(f"\n{norm} bound, eps={eps:.4f}")
    for method in ("FGSM", "BIM", "MIFGSM", "DIM"):
        for kernel in (None, gauss):
            cfg = AttackConfig(method=method, kernel=kernel, norm=norm, epsilon=eps)
            r = attack(model, x, y, cfg)
            print(f"  {cfg.label:12s} success {r.success.mean():.3f}  max norm {r.perturbation_norm.max():.4f}")

# keep one example for looking at
out = Path("demo_out")
out.mkdir(exist_ok=True)
save_pgm(out / "clean.pgm", x[0])
save_pgm(out / "bim.pgm", res.x_adv[0])
print("\nwrote", out / "clean.pgm", "and", out / "bim.pgm")
