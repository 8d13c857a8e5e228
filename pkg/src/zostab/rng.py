"""Keyed, splittable random streams.

Every stochastic routine in the package takes an :class:`RngStream` instead of
touching global state.  A stream is identified by ``(seed, stream_id)``; the
pair is hashed through :class:`numpy.random.SeedSequence` into a Philox
counter-based generator, so equal keys replay bit-identical draws and distinct
ids are statistically independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        seed = int(self.seed) & _MASK64
        sid = int(self.stream_id) & _MASK64
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(sid,))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, stream_id: int) -> "RngStream":
        """Derive an independent stream keyed on this one and ``stream_id``."""
        mixed = np.random.SeedSequence(
            entropy=int(self.seed) & _MASK64, spawn_key=(int(self.stream_id) & _MASK64,)
        ).generate_state(2, dtype=np.uint64)
        return RngStream(int(mixed[0]) ^ int(mixed[1]), stream_id)

    def gaussian(self, *shape: int) -> np.ndarray:
        return self._gen.standard_normal(shape if shape else None)

    def rademacher(self, *shape: int) -> np.ndarray:
        return self._gen.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0

    def sphere(self, *shape: int) -> np.ndarray:
        """Uniform draws on the sphere of radius sqrt(d), d = shape[-1]."""
        u = self._gen.standard_normal(shape)
        d = shape[-1]
        return u * (np.sqrt(d) / np.linalg.norm(u, axis=-1, keepdims=True))

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)


def as_stream(stream: RngStream | int | None, stream_id: int = 0) -> RngStream:
    if isinstance(stream, RngStream):
        return stream
    return RngStream(0 if stream is None else int(stream), stream_id)


def gaussian_vector(dim: int, stream: RngStream) -> np.ndarray:
    _check_dim(dim)
    return stream.gaussian(dim)


def rademacher_vector(dim: int, stream: RngStream) -> np.ndarray:
    _check_dim(dim)
    return stream.rademacher(dim)


def sphere_vector(dim: int, stream: RngStream) -> np.ndarray:
    _check_dim(dim)
    return stream.sphere(dim)


def _check_dim(dim):
    if int(dim) < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
