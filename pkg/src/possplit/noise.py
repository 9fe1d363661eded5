"""Reproducible increments of the scaled Wiener processes W_n^N.

Entry ``(m, n)`` of an increment matrix is ``W_n(t_{m+1}) - W_n(t_m)``, a
centered Gaussian with variance ``tau``. Each (seed, sample_index, stream)
triple owns its own Philox counter-based generator, keyed through
``numpy.random.SeedSequence(seed, spawn_key=(sample_index, stream))``, and
draws ``standard_normal`` row by row (time-major). The values are therefore
independent of which worker produced them and of the order samples run in,
and a matrix generated whole equals the same matrix generated in row blocks.

``stream`` separates independent driving noises for the same sample
(component 2 of a system uses ``stream=1``).

Binary layout (little endian): int64 M, int64 N, float64 tau, uint64 seed,
int64 sample_index, then M*(N-1) float64 values in row-major order.
The stream number is not stored; loaded matrices report ``stream=0``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAX_DENSE_ENTRIES = 10**8

_HEADER = struct.Struct("<qqdQq")


class NoiseError(ValueError):
    pass


def _generator(seed: int, sample_index: int, stream: int = 0) -> np.random.Generator:
    if seed < 0 or sample_index < 0 or stream < 0:
        raise NoiseError("seed, sample_index and stream must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(sample_index), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def _check_dims(M, N, tau):
    if M < 1 or N < 2 or not tau > 0:
        raise NoiseError(f"invalid noise dimensions M={M}, N={N}, tau={tau}")


@dataclass(frozen=True, eq=False)
class NoiseIncrements:
    M: int
    N: int
    tau: float
    data: np.ndarray
    seed: int
    sample_index: int
    stream: int = 0

    def __post_init__(self):
        if self.data.shape != (self.M, self.N - 1):
            raise NoiseError(f"data shape {self.data.shape} != ({self.M}, {self.N - 1})")
        self.data.setflags(write=False)

    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(self.M, self.N, self.tau, self.seed, self.sample_index))
            fh.write(np.ascontiguousarray(self.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "NoiseIncrements":
        with open(path, "rb") as fh:
            raw = fh.read()
        M, N, tau, seed, sample_index = _HEADER.unpack_from(raw)
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != M * (N - 1):
            raise NoiseError(f"{path}: expected {M * (N - 1)} values, found {body.size}")
        return cls(M, N, tau, body.reshape(M, N - 1).astype(float), seed, sample_index)


class NoiseStream:
    """Row-block generator for one (seed, sample_index, stream); used when the
    full matrix would be too large to hold.  ``next_rows(k)`` returns the next k
    rows of exactly the matrix that :func:`sample_increments` would build."""

    def __init__(self, seed: int, sample_index: int, N: int, tau: float, stream: int = 0):
        self._rng = _generator(seed, sample_index, stream)
        self.width = N - 1
        self._scale = np.sqrt(tau)

    def next_rows(self, k: int) -> np.ndarray:
        return self._rng.standard_normal((k, self.width)) * self._scale


def sample_increments(seed: int, sample_index: int, M: int, N: int, tau: float,
                      stream: int = 0, max_entries: int = MAX_DENSE_ENTRIES) -> NoiseIncrements:
    _check_dims(M, N, tau)
    if M * (N - 1) > max_entries:
        raise NoiseError(f"{M}x{N - 1} increments exceed the dense cap of {max_entries}; "
                         "use NoiseStream")
    data = NoiseStream(seed, sample_index, N, tau, stream).next_rows(M)
    return NoiseIncrements(M, N, tau, data, seed, sample_index, stream)


def coarsen_rows(data: np.ndarray, factor: int, axis: int = 0) -> np.ndarray:
    """Sum consecutive groups of ``factor`` rows along ``axis``.

    Power-of-two factors are summed as a pairwise tree (repeated halving), so
    chaining dyadic coarsenings is bit-identical to a single one. Other factors
    are summed left to right in ascending row order.
    """
    data = np.moveaxis(np.asarray(data), axis, 0)
    M = data.shape[0]
    if factor < 1 or M % factor:
        raise NoiseError(f"factor {factor} does not divide M={M}")
    if factor & (factor - 1) == 0:
        out = data
        while factor > 1:
            out = out[0::2] + out[1::2]
            factor //= 2
        out = out.copy() if out is data else out
    else:
        out = data[0::factor].copy()
        for r in range(1, factor):
            out += data[r::factor]
    return np.moveaxis(out, 0, axis)


def coarsen(fine: NoiseIncrements, factor: int) -> NoiseIncrements:
    data = coarsen_rows(fine.data, factor)
    return NoiseIncrements(fine.M // factor, fine.N, fine.tau * factor, data,
                           fine.seed, fine.sample_index, fine.stream)
