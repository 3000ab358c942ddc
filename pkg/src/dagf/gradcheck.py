"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .tensor import backward, no_grad


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check_report(fn, params, eps=1e-6, max_entries=None, seed=0):
    """Per-parameter max relative error between backprop and central differences.

    ``fn`` takes no arguments and rebuilds the scalar loss from the current
    values in ``params``. With ``max_entries`` set, only that many randomly
    chosen entries of each parameter are perturbed.

    ``eps`` may be a sequence of step sizes; each entry then keeps its best
    agreement over the steps. Large steps can straddle a PReLU kink and small
    ones drown tiny derivatives in roundoff, while a wrong analytic gradient
    disagrees at every step.
    """
    steps = [float(e) for e in np.atleast_1d(eps)]
    analytic = backward(fn(), params)
    rng = np.random.default_rng(seed)
    report = {}
    for name, p in params.items():
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        ga = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            best = np.inf
            for h in steps:
                with no_grad():
                    flat[i] = orig + h
                    up = float(fn().data)
                    flat[i] = orig - h
                    down = float(fn().data)
                flat[i] = orig
                best = min(best, relative_error(float(ga[i]), (up - down) / (2 * h)))
                if best == 0.0:
                    break
            worst = max(worst, best)
        report[name] = worst
    return report


def grad_check(fn, params, eps=1e-6, max_entries=None, seed=0):
    """Max relative error over all checked parameter entries."""
    report = grad_check_report(fn, params, eps=eps, max_entries=max_entries, seed=seed)
    return max(report.values()) if report else 0.0
