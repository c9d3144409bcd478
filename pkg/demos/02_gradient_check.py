"""Compare the analytic loss gradient with central finite differences."""

import numpy as np

from multiblank import BlankSet, LossConfig, loss_and_grad
from multiblank.oracle import finite_diff_grad

rng = np.random.default_rng(0)
cfg = LossConfig(sigma=0.05, blank_set=BlankSet((1, 2, 4)))
T, labels, V = 5, [2, 0, 1], 3
z = rng.normal(0.0, 2.0, size=(T, len(labels) + 1, V + len(cfg.blank_set)))

res = loss_and_grad(z, labels, cfg)
numeric = finite_diff_grad(z, labels, cfg, h=1e-5)
rel = np.abs(res.grad - numeric) / np.maximum(np.maximum(abs(res.grad), abs(numeric)), 1e-6)
print(f"loss {res.loss:.6f}")
print(f"max relative gradient error {rel.max():.2e}")

# softmax * G - gamma sums to G - G = 0 over the outputs of each node
print("largest |row sum|:", np.abs(res.grad.sum(axis=-1)).max())
