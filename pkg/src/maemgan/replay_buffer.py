"""FIFO store of detached embedding codes with exact cosine nearest-neighbour lookup."""
from __future__ import annotations

import numpy as np

from .autodiff import COSINE_NORM_FLOOR, Tensor


class BufferEmpty(LookupError):
    """Raised by queries against a buffer that holds no codes yet."""


class ReplayBuffer:
    """Fixed-capacity first-in-first-out buffer of ``dim``-wide codes.

    Storage is a ring over a preallocated array; ``entries`` presents the
    contents oldest first.  Pushed codes are copied, so nothing stored keeps
    any differentiation history.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._data = np.zeros((self.capacity, self.dim))
        self._norms = np.zeros(self.capacity)
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __repr__(self) -> str:
        return f"ReplayBuffer(capacity={self.capacity}, dim={self.dim}, size={self._size})"

    @property
    def is_full(self) -> bool:
        return self._size == self.capacity

    def _order(self) -> np.ndarray:
        return (self._start + np.arange(self._size)) % self.capacity

    @property
    def entries(self) -> np.ndarray:
        """Copy of the stored codes, oldest first, shape (size, dim)."""
        return self._data[self._order()].copy()

    def push(self, v) -> None:
        v = np.asarray(v.value if isinstance(v, Tensor) else v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"push: expected a code of width {self.dim}, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("push: code has non-finite entries")
        tail = (self._start + self._size) % self.capacity
        self._data[tail] = v
        self._norms[tail] = np.sqrt(v @ v)
        if self._size < self.capacity:
            self._size += 1
        else:
            self._start = (self._start + 1) % self.capacity

    def extend(self, codes) -> None:
        """Push each row of ``codes`` in order."""
        codes = np.asarray(codes.value if isinstance(codes, Tensor) else codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[1] != self.dim:
            raise ValueError(f"extend: expected codes of shape (n, {self.dim}), got {codes.shape}")
        if not np.isfinite(codes).all():
            raise ValueError("extend: codes have non-finite entries")
        codes = codes[-self.capacity:]
        k = len(codes)
        slots = (self._start + self._size + np.arange(k)) % self.capacity
        self._data[slots] = codes
        self._norms[slots] = np.sqrt(np.einsum("ij,ij->i", codes, codes))
        overflow = max(0, self._size + k - self.capacity)
        self._size = min(self.capacity, self._size + k)
        self._start = (self._start + overflow) % self.capacity

    def clear(self) -> None:
        self._start = 0
        self._size = 0

    def similarities(self, queries) -> np.ndarray:
        """Cosine similarity of each query row against every entry, oldest first."""
        if self._size == 0:
            raise BufferEmpty("buffer empty")
        q = np.asarray(queries.value if isinstance(queries, Tensor) else queries, dtype=np.float64)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        if q.shape[1] != self.dim:
            raise ValueError(f"query width {q.shape[1]} does not match buffer dim {self.dim}")
        order = self._order()
        stored = self._data[order]
        norms = np.maximum(self._norms[order], COSINE_NORM_FLOOR)
        qn = np.maximum(np.sqrt(np.einsum("ij,ij->i", q, q)), COSINE_NORM_FLOOR)
        sims = (q @ stored.T) / (norms[None, :] * qn[:, None])
        return sims[0] if single else sims

    def nearest_indices(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Index (oldest = 0) and similarity of the best match for each query row."""
        sims = np.atleast_2d(self.similarities(queries))
        idx = np.argmax(sims, axis=1)  # first maximum, i.e. the oldest on ties
        return idx, sims[np.arange(len(idx)), idx]

    def nearest_by_cosine(self, query) -> tuple[np.ndarray, float]:
        """Stored code most cosine-similar to ``query`` and that similarity."""
        q = np.asarray(query.value if isinstance(query, Tensor) else query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query must have shape ({self.dim},), got {q.shape}")
        idx, sim = self.nearest_indices(q[None, :])
        return self._data[self._order()[idx[0]]].copy(), float(sim[0])

    def nearest_codes(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Best-matching stored code for each query row, plus the similarities."""
        idx, sims = self.nearest_indices(queries)
        return self._data[self._order()[idx]], sims

    def dump(self) -> str:
        """One comma-separated line per entry, oldest first."""
        return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in self.entries)
