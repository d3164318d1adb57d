"""Shared test utilities: finite-difference oracles and error measures."""

import numpy as np


def numeric_grad(f, arrays, h=1e-5):
    """Central finite differences of a scalar function.

    f is re-evaluated around the current contents of each array in
    ``arrays`` (mutated entry by entry and restored), so the closures must
    read the arrays themselves, not copies.
    """
    out = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = f()
            flat[i] = keep - h
            fm = f()
            flat[i] = keep
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(grad)
    return out


def max_rel_err(a, b):
    """max |a-b| / max(1, |a|, |b|), entrywise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))
