"""FIFO pool of recent representations with exact nearest-neighbor queries.

The pool is a fixed-capacity ring buffer: new batch rows displace the oldest
entries. Queries scan every entry (exactness matters more than speed at pool
sizes <= 2^16) and return the argmin of the Euclidean distance, breaking ties
toward the oldest entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StateError
from .validation import as_matrix

DEFAULT_CAPACITY = 4096


@dataclass
class NNPool:
    capacity: int
    buffer: np.ndarray  # (capacity, d) ring storage
    write_pos: int = 0
    insertion_counter: int = 0
    d: int = field(init=False)

    def __post_init__(self):
        self.d = self.buffer.shape[1]

    @property
    def entries(self) -> np.ndarray:
        """Entries ordered oldest first."""
        return np.roll(self.buffer, -self.write_pos, axis=0)

    def __len__(self) -> int:
        return self.buffer.shape[0]


def pool_init(capacity: int, seed: int, d: int) -> NNPool:
    """Pool pre-filled with ``capacity`` random unit vectors (deterministic per seed)."""
    if capacity < 1:
        raise ConfigurationError(f"pool capacity must be >= 1, got {capacity}")
    if d < 1:
        raise ConfigurationError(f"pool dimension must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(capacity, d))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    return NNPool(capacity=capacity, buffer=raw)


def pool_update(pool: NNPool, batch_reps) -> NNPool:
    """Append batch rows in index order, evicting the oldest entries; returns ``pool``."""
    rows = as_matrix(batch_reps, "batch_reps")
    n = rows.shape[0]
    if n == 0:
        return pool
    if rows.shape[1] != pool.d:
        raise StateError(f"dimension mismatch: pool is {pool.d}-d, batch is {rows.shape[1]}-d")
    if n >= pool.capacity:
        pool.buffer[:] = rows[-pool.capacity:]
        pool.write_pos = 0
    else:
        idx = (pool.write_pos + np.arange(n)) % pool.capacity
        pool.buffer[idx] = rows
        pool.write_pos = int((pool.write_pos + n) % pool.capacity)
    pool.insertion_counter += n
    return pool


def nearest(pool: NNPool, query: np.ndarray):
    """Closest entry to ``query`` by L2 distance; ties go to the oldest entry.

    Returns (entry copy, index into the oldest-first ordering).
    """
    entries = pool.entries
    if entries.shape[0] == 0:
        raise StateError("nearest() on an empty pool")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    dists = np.sum((entries - q) ** 2, axis=1)
    idx = int(np.argmin(dists))  # argmin returns the first (oldest) minimum
    return entries[idx].copy(), idx


def nearest_batch(pool: NNPool, queries) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-neighbor lookup for a query matrix."""
    entries = pool.entries
    if entries.shape[0] == 0:
        raise StateError("nearest_batch() on an empty pool")
    q = as_matrix(queries, "queries")
    # ||q - e||^2 = ||q||^2 - 2 q.e + ||e||^2; the ||q||^2 term is constant per row
    sq_e = np.sum(entries**2, axis=1)
    d2 = sq_e[None, :] - 2.0 * (q @ entries.T)
    idx = np.argmin(d2, axis=1)
    return entries[idx].copy(), idx.astype(np.int64)
