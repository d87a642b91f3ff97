"""Finite-difference gradient oracle shared by the test modules."""

import numpy as np


def finite_difference(f, params, h=1e-5):
    """Central-difference gradient of scalar f() w.r.t. each Tensor in params.

    f must re-run the forward pass from the current parameter data.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = f()
            flat[i] = orig - h
            lo = f()
            flat[i] = orig
            g[i] = (hi - lo) / (2 * h)
        grads.append(g.reshape(p.data.shape))
    return grads


def max_rel_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
