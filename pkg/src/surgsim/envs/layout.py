"""Flat observation vectors with a named, fixed field layout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Field:
    name: str
    offset: int
    length: int


class ObsLayout:
    def __init__(self, fields: list[tuple[str, int]]):
        out, offset = [], 0
        for name, length in fields:
            out.append(Field(name, offset, int(length)))
            offset += int(length)
        self.fields = tuple(out)
        self.size = offset
        self._by_name = {f.name: f for f in self.fields}
        if len(self._by_name) != len(self.fields):
            raise ValueError("duplicate observation field names")

    def __getitem__(self, name: str) -> Field:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def encode(self, parts: dict[str, np.ndarray], n: int) -> np.ndarray:
        obs = np.empty((n, self.size))
        for f in self.fields:
            obs[:, f.offset : f.offset + f.length] = np.asarray(parts[f.name]).reshape(n, f.length)
        return obs

    def decode(self, obs: np.ndarray) -> dict[str, np.ndarray]:
        obs = np.atleast_2d(obs)
        if obs.shape[1] != self.size:
            raise ValueError(f"observation width {obs.shape[1]} does not match layout size {self.size}")
        return {f.name: obs[:, f.offset : f.offset + f.length].copy() for f in self.fields}

    def manifest(self, **meta) -> dict:
        """Machine-readable description written next to training outputs."""
        return {
            **meta,
            "obs_dim": self.size,
            "fields": [{"name": f.name, "offset": f.offset, "length": f.length} for f in self.fields],
        }
