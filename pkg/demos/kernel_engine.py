# Spatially varying kernels: one k x k kernel per pixel.
#
# Run: python demos/kernel_engine.py

import numpy as np

from dagf import apply_kernel_field, apply_kernel_field_naive, combine_kernels
from dagf.tensor import Tensor

rng = np.random.default_rng(0)
f = Tensor(rng.random((1, 1, 8, 8)))

# A delta kernel (weight 1 at the centre tap) leaves the image untouched.
k = 3
delta = np.zeros((1, k * k, 8, 8))
delta[:, k * k // 2] = 1.0
print("delta kernel is identity:", np.array_equal(apply_kernel_field(f, Tensor(delta)).data, f.data))

# Random field: fast im2col path vs. the nested-loop reference.
w = Tensor(rng.normal(size=(1, 25, 8, 8)))
fast, slow = apply_kernel_field(f, w).data, apply_kernel_field_naive(f.data, w.data)
print("k=5 max abs diff vs loops:", np.abs(fast - slow).max())

# Mixing target and guidance kernels with a per-pixel attention map.
wg, wt = Tensor(rng.normal(size=(1, 9, 8, 8))), Tensor(rng.normal(size=(1, 9, 8, 8)))
for a in (0.0, 0.5, 1.0):
    mixed = combine_kernels(wg, wt, Tensor(np.full((1, 1, 8, 8), a)))
    print(f"a={a}: matches wg {np.allclose(mixed.data, wg.data)}, matches wt {np.allclose(mixed.data, wt.data)}")
