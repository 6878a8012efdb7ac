"""Seeded, counter-based random streams.

Every stream is a Philox-4x64 generator (10 rounds, the Random123 constants
shipped with numpy) whose key is derived from a root seed and a path of
integer or string labels. Independent trajectories, trials and epochs each
get their own stream, so results do not depend on generation order.

Normal draws use Box-Muller: for ``n`` normals, ``2*ceil(n/2)`` uniforms are
drawn as interleaved pairs (u1, u2) and mapped to
``r*cos(2 pi u2), r*sin(2 pi u2)`` with ``r = sqrt(-2 log(1 - u1))``,
emitted in that order pair by pair.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["Stream", "stream"]


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


class Stream:
    """Thin wrapper around a Philox bit generator with documented draws."""

    def __init__(self, seed: int, *path):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_label_int(p) for p in path))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        u = self._gen.random(size)
        return low + (high - low) * u

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        shape = () if size is None else (size if isinstance(size, tuple) else (int(size),))
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u = self._gen.random(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = z[:n].reshape(shape)
        out = loc + scale * z
        return float(out) if size is None else out

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def stream(seed: int, *path) -> Stream:
    return Stream(seed, *path)
