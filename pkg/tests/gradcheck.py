"""Central finite-difference gradient oracle, independent of the tape."""

import numpy as np


def numerical_grad(tensor, loss_fn, h=1e-4):
    """d(loss)/d(tensor) by central differences, one element at a time."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn()
        flat[i] = orig - h
        fm = loss_fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numerical):
    denom = max(np.max(np.abs(numerical)), np.max(np.abs(analytic)), 1e-8)
    return float(np.max(np.abs(analytic - numerical)) / denom)
