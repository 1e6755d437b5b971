"""Reproducible sampling of discretised space-time white noise and Brownian motion.

Streams are derived counter-style from (master_seed, stream_id, substream)
through numpy's SeedSequence, so replicas can be drawn in any order, in
parallel, with bit-identical results.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SeedSpec",
    "NoiseIncrement",
    "SUBSTREAM_W",
    "SUBSTREAM_B",
    "sample_white_noise",
    "sample_bm",
    "sample_increments",
    "write_noise",
    "read_noise",
]

SUBSTREAM_W = 0
SUBSTREAM_B = 1

_MAGIC = 0x544F5246  # "TORF"


@dataclass(frozen=True)
class SeedSpec:
    """Addressable random stream: replica index plus substream selector."""

    master_seed: int
    stream_id: int = 0
    substream: int = 0

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0 or self.substream < 0:
            raise ValueError("seed components must be nonnegative")

    def with_stream(self, stream_id: int) -> "SeedSpec":
        return replace(self, stream_id=stream_id)

    def with_substream(self, substream: int) -> "SeedSpec":
        return replace(self, substream=substream)

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.master_seed,
            spawn_key=(self.stream_id, self.substream),
        )
        return np.random.default_rng(ss)


@dataclass
class NoiseIncrement:
    """Integrated noise boxes: dW[i, n] over cell i x step n, dB[n] per step.

    Each dW entry is Normal(0, dt * spacing); the field increment a solver
    adds per cell is dW / spacing (variance dt / spacing).
    """

    dW: np.ndarray
    dB: np.ndarray


def sample_white_noise(grid, dt: float, n_steps: int, seed: SeedSpec) -> np.ndarray:
    """(n_cells, n_steps) matrix of iid Normal(0, dt * spacing) box integrals."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    scale = np.sqrt(dt * grid.spacing)
    return seed.rng().normal(0.0, scale, size=(grid.n_cells, n_steps))


def sample_bm(dt: float, n_steps: int, seed: SeedSpec) -> np.ndarray:
    """Vector of iid Normal(0, dt) Brownian increments."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return seed.rng().normal(0.0, np.sqrt(dt), size=n_steps)


def sample_increments(grid, dt: float, n_steps: int, seed: SeedSpec) -> NoiseIncrement:
    """Joint draw of the white-noise matrix and the independent scalar BM."""
    dW = sample_white_noise(grid, dt, n_steps, seed.with_substream(SUBSTREAM_W))
    dB = sample_bm(dt, n_steps, seed.with_substream(SUBSTREAM_B))
    return NoiseIncrement(dW=dW, dB=dB)


def write_noise(path, matrix: np.ndarray, substream: int) -> None:
    """Dump a noise matrix: 4 little-endian int64 header, then row-major f64."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    n_cells, n_steps = matrix.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4q", _MAGIC, n_cells, n_steps, substream))
        fh.write(matrix.tobytes())


def read_noise(path):
    """Inverse of write_noise; returns (matrix, substream)."""
    with open(path, "rb") as fh:
        magic, n_cells, n_steps, substream = struct.unpack("<4q", fh.read(32))
        if magic != _MAGIC:
            raise ValueError("not a torusflow noise file")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(n_cells, n_steps), substream
