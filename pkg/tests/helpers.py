"""Shared test utilities: finite-difference oracles and batch generators."""
import math

import numpy as np


def random_unit_rows(rng, n, d):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def finite_diff_grad(f, x, step=1e-5):
    """Central-difference gradient of scalar-valued f() w.r.t. the entries of x.

    ``f`` must read ``x`` afresh on every call (x is perturbed in place).
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_scalar(f, value, step=1e-5):
    return (f(value + step) - f(value - step)) / (2.0 * step)


def relative_error(actual, expected):
    scale = max(np.linalg.norm(np.asarray(expected).reshape(-1)), 1e-12)
    return np.linalg.norm((np.asarray(actual) - np.asarray(expected)).reshape(-1)) / scale


def scalar_clip_infonce(image_rows, text_rows, tau):
    """Plain-python evaluation of the symmetric pairwise contrastive loss.

    Independent of the vectorized implementation: explicit loops, math.exp.
    """
    n = len(image_rows)
    d = len(image_rows[0])

    def dot(a, b):
        return sum(a[k] * b[k] for k in range(d))

    total = 0.0
    for j in range(n):
        num = math.exp(dot(image_rows[j], text_rows[j]) / tau)
        den = sum(math.exp(dot(image_rows[j], text_rows[k]) / tau) for k in range(n))
        total += -math.log(num / den)
    for k in range(n):
        num = math.exp(dot(image_rows[k], text_rows[k]) / tau)
        den = sum(math.exp(dot(image_rows[j], text_rows[k]) / tau) for j in range(n))
        total += -math.log(num / den)
    return total / (2 * n)


def scalar_unimodal_infonce(anchor_rows, augmented_rows, tau):
    """Plain-python evaluation of the anchored within-modality loss (batch mean)."""
    n = len(anchor_rows)
    d = len(anchor_rows[0])

    def dot(a, b):
        return sum(a[k] * b[k] for k in range(d))

    total = 0.0
    for i in range(n):
        num = math.exp(dot(anchor_rows[i], augmented_rows[i]) / tau)
        den = sum(math.exp(dot(anchor_rows[i], augmented_rows[k]) / tau) for k in range(n))
        total += -math.log(num / den)
    return total / n
