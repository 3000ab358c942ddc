# Classical guided filters on a synthetic depth/colour pair.
#
# Run: python demos/classical_filters.py
# RMSE is reported on the byte range (values x 255).

import numpy as np

from dagf import BilateralParams, GIFParams, bilateral_filter, guided_image_filter, joint_bilateral_upsample
from dagf.data import degrade, rmse, synthetic_pair, upsample_input

rng = np.random.default_rng(0)
guidance, depth = synthetic_pair(rng, size=64)
print("guidance", guidance.shape, "depth", depth.shape, "range", depth.min().round(3), depth.max().round(3))

# A noisy target: the guided filter should pull its edges back onto the colour edges.
noisy = depth + rng.normal(scale=0.05, size=depth.shape)
gray = guidance.mean(axis=2)
for eps in (1e-4, 1e-2, 1.0):
    out = guided_image_filter(noisy, gray, GIFParams(radius=2, epsilon=eps))
    print(f"GIF r=2 eps={eps:<6} rmse {rmse(out, depth):.4f}   (noisy input {rmse(noisy, depth):.4f})")

bf = bilateral_filter(noisy, gray, BilateralParams(sigma_s=1.5, sigma_r=0.1, radius=3))
print(f"joint bilateral       rmse {rmse(bf, depth):.4f}")

# Upsampling from 1/4 resolution: bicubic vs. joint bilateral upsampling.
lr = degrade(depth, 4, "bicubic")
up = joint_bilateral_upsample(lr, gray, BilateralParams(sigma_s=1.0, sigma_r=0.1, radius=2), 4)
print(f"x4 bicubic rmse {rmse(upsample_input(lr, 4), depth):.4f}, JBU rmse {rmse(up, depth):.4f}")
