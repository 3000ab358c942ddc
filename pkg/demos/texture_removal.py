# Iterative texture removal: the image guides a filter applied to itself.
#
# Run: python demos/texture_removal.py MODEL.ckpt
#
# The checkpoint should come from a model trained for this task. Toy models
# trained on synthetic depth (e.g. `dagf train --synthetic 8 ...`) run, but their
# kernels are not normalized and repeated passes on colour images they never saw
# usually blow up after the first pass or two; the per-pass statistics show it.

import sys

import numpy as np

from dagf import DagfModel, load_checkpoint
from dagf.data import synthetic_pair, texture_remove

if len(sys.argv) != 2:
    sys.exit("usage: python demos/texture_removal.py MODEL.ckpt")

params, cfg = load_checkpoint(sys.argv[1])
model = DagfModel(cfg, params)
img, _ = synthetic_pair(np.random.default_rng(3), size=64)


def report(i, cur):
    grad = np.abs(np.diff(cur, axis=0)).mean() + np.abs(np.diff(cur, axis=1)).mean()
    print(f"pass {i}: mean abs gradient {grad:.4f}, mean change from input {np.abs(cur - img).mean():.4f}")


report(0, img)
try:
    with np.errstate(over="ignore", invalid="ignore"):
        out = texture_remove(img, model, iterations=4, on_iteration=report)
    print("output", out.shape, out.dtype)
except ValueError as err:
    print("stopped:", err)
