"""Counter-based per-row random streams.

Every environment row owns a 64-bit key and a draw counter. A draw hashes
(key, counter) with splitmix64, so the values a row sees depend only on its
own history, never on batch size, chunking or thread scheduling.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Finalizer of the splitmix64 generator, applied elementwise (wraps mod 2**64)."""
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def row_keys(seed: int, n: int, stream: int = 0) -> np.ndarray:
    """Derive ``n`` decorrelated row keys from a seed and a stream id."""
    root = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, int(stream)])
    base = root.generate_state(2, dtype=np.uint64)
    idx = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return splitmix64(splitmix64(idx ^ base[0]) + base[1])


class RowStreams:
    """One independent random stream per row.

    Draws for a subset of rows advance only those rows' counters.
    """

    def __init__(self, seed: int, n: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.keys = row_keys(seed, n, stream)
        self.counters = np.zeros(n, dtype=np.uint64)

    def __len__(self) -> int:
        return len(self.keys)

    def _bits(self, rows: np.ndarray, k: int) -> np.ndarray:
        keys = self.keys[rows][:, None]
        ctr = self.counters[rows][:, None] + np.arange(k, dtype=np.uint64)[None, :]
        self.counters[rows] += np.uint64(k)
        with np.errstate(over="ignore"):
            return splitmix64(keys ^ splitmix64(ctr))

    def _rows(self, rows) -> np.ndarray:
        if rows is None:
            return np.arange(len(self.keys))
        rows = np.asarray(rows)
        if rows.dtype == bool:
            return np.flatnonzero(rows)
        return rows.astype(np.intp, copy=False)

    def uniform(self, rows=None, k: int = 1, low=0.0, high=1.0) -> np.ndarray:
        """Uniform draws in [low, high), shape (len(rows), k)."""
        rows = self._rows(rows)
        u = (self._bits(rows, k) >> _S11).astype(np.float64) * _TWO53
        return low + (high - low) * u

    def normal(self, rows=None, k: int = 1, scale=1.0) -> np.ndarray:
        """Gaussian draws (Box-Muller), shape (len(rows), k)."""
        rows = self._rows(rows)
        m = (k + 1) // 2
        bits = self._bits(rows, 2 * m)
        u1 = 1.0 - (bits[:, :m] >> _S11).astype(np.float64) * _TWO53  # (0, 1]
        u2 = (bits[:, m:] >> _S11).astype(np.float64) * _TWO53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)], axis=1)
        return z[:, :k] * scale

    def state(self) -> dict:
        return {"seed": self.seed, "stream": self.stream, "counters": self.counters.copy()}

    def restore(self, state: dict) -> None:
        self.counters = np.asarray(state["counters"], dtype=np.uint64).copy()
