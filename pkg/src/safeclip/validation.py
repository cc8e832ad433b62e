"""Input validation helpers used at module boundaries.

Validation raises :class:`InputError` for bad runtime data and
:class:`ConfigurationError` for bad static setup, so callers can map them to
distinct exit codes.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, InputError


def as_matrix(x, name: str) -> np.ndarray:
    """Coerce ``x`` (array or ReprBatch-like) to a 2-D float array."""
    reps = getattr(x, "reps", x)
    arr = np.asarray(reps, dtype=np.result_type(np.asarray(reps), np.float32))
    if arr.ndim != 2:
        raise InputError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str, exc=InputError) -> None:
    if not np.all(np.isfinite(arr)):
        raise exc(f"{name} contains non-finite values")


def check_unit_rows(reps: np.ndarray, name: str, tol: float = 1e-6) -> None:
    norms = np.linalg.norm(reps, axis=1)
    bad = np.abs(norms - 1.0) > tol
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InputError(f"{name} row {i} has norm {norms[i]:.8f}, expected 1 +/- {tol}")


def check_image_batch(images: np.ndarray, image_shape: tuple[int, int]) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != tuple(image_shape):
        raise InputError(
            f"expected image batch of shape (N, {image_shape[0]}, {image_shape[1]}), got {arr.shape}"
        )
    check_finite(arr, "images")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("image pixels must lie in [0, 1]")
    return arr


def check_caption_batch(captions, vocab_size: int) -> list[np.ndarray]:
    if isinstance(captions, (list, tuple)) and captions and np.isscalar(captions[0]):
        captions = [captions]
    out = []
    for i, cap in enumerate(captions):
        toks = np.asarray(cap, dtype=np.int64)
        if toks.ndim != 1 or toks.size == 0:
            raise InputError(f"caption {i} is empty or not a flat token sequence")
        if toks.min() < 0 or toks.max() >= vocab_size:
            raise InputError(f"caption {i} has token outside [0, {vocab_size})")
        out.append(toks)
    return out


def check_positive(value, name: str, exc=ConfigurationError) -> None:
    if not value > 0:
        raise exc(f"{name} must be positive, got {value!r}")


def round_half_up(x: float) -> int:
    """Deterministic nearest-integer rounding with .5 going up."""
    return int(np.floor(x + 0.5))


def count_from_percent(percent: float, n: int) -> int:
    """Number of items in the top ``percent``% of ``n``; at least 1 when percent > 0."""
    if percent <= 0:
        return 0
    return min(n, max(1, round_half_up(percent / 100.0 * n)))


def derive_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator derived from a tuple of integer keys."""
    return np.random.default_rng(np.random.SeedSequence(list(keys)))
