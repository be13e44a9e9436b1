"""Deterministic randomness, image grids, norms, and quality metrics.

Everything here operates on plain float64 numpy arrays.  Dense matrices used
by test oracles are ordinary 2-D ndarrays; images travel as :class:`ImageGrid`
(column-stacked vectors) at module boundaries and as flat vectors inside the
solvers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

__all__ = [
    "Rng",
    "ImageGrid",
    "standard_normal_matrix",
    "lp_power",
    "weighted_norm",
    "psnr",
    "write_pgm",
    "write_raw",
    "read_raw",
]

PSNR_CAP_DB = 300.0

_SPAWN_MIX = 0x9E3779B97F4A7C15  # 64-bit golden-ratio constant for stream derivation


class Rng:
    """Counter-based deterministic random stream.

    Wraps a Philox-4x64 counter generator keyed by ``(seed, stream)``.
    Gaussian samples are produced by the inverse-CDF method applied to
    53-bit uniforms, so the stream is reproducible bit-for-bit for a fixed
    seed regardless of how callers batch their draws across columns.

    Not shareable across threads; spawn independent child streams instead.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ValueError("seed must be a nonnegative 64-bit integer")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._bits = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self.counter = 0

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def spawn(self, index: int) -> "Rng":
        """Deterministic independent child stream; same (seed, stream, index)
        always yields the same child."""
        child = (self.stream * _SPAWN_MIX + index + 1) & 0xFFFFFFFFFFFFFFFF
        return Rng(self.seed, child)

    def raw(self, n: int) -> np.ndarray:
        self.counter += int(n)
        return self._bits.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms strictly inside (0, 1), 53-bit resolution."""
        bits = self.raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * (2.0 ** -53)

    def normal(self, n: int) -> np.ndarray:
        """n standard normal samples via the inverse CDF."""
        return ndtri(self.uniform(n))

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n) (argsort of fresh uniforms)."""
        return np.argsort(self.uniform(n), kind="stable")


@dataclass(frozen=True)
class ImageGrid:
    """Dense 2-D real image stored column-stacked: pixel (i, j) at j*rows + i."""

    rows: int
    cols: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("rows and cols must be positive")
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64).ravel())
        if data.size != self.rows * self.cols:
            raise ValueError(f"data length {data.size} != rows*cols {self.rows * self.cols}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "ImageGrid":
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(m.shape[0], m.shape[1], m.ravel(order="F"))

    def matrix(self) -> np.ndarray:
        return self.data.reshape(self.rows, self.cols, order="F")


def standard_normal_matrix(n: int, k: int, rng: Rng) -> np.ndarray:
    """n-by-k matrix of i.i.d. standard normals drawn column by column."""
    if n < 1 or k < 1:
        raise ValueError("matrix dimensions must be >= 1")
    out = np.empty((n, k), dtype=np.float64)
    for j in range(k):
        out[:, j] = rng.normal(n)
    return out


def lp_power(v: np.ndarray, p: float) -> float:
    """sum_i |v_i|**p for p in (0, 2]."""
    if not 0.0 < p <= 2.0:
        raise ValueError(f"p must lie in (0, 2], got {p}")
    v = np.asarray(v, dtype=np.float64)
    if p == 2.0:
        return float(np.dot(v, v))
    return float(np.sum(np.abs(v) ** p))


def weighted_norm(v: np.ndarray, w_apply) -> float:
    """sqrt(v' W v) for a symmetric positive-definite map W."""
    v = np.asarray(v, dtype=np.float64)
    quad = float(np.dot(v, w_apply(v)))
    if quad < -1e-12 * (1.0 + float(np.dot(v, v))):
        raise ValueError(f"negative quadratic form ({quad}); weight map is not PSD")
    return float(np.sqrt(max(quad, 0.0)))


def psnr(x: ImageGrid, ref: ImageGrid, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 300 for a zero-error match."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    if (x.rows, x.cols) != (ref.rows, ref.cols):
        raise ValueError(f"dimension mismatch: {x.rows}x{x.cols} vs {ref.rows}x{ref.cols}")
    mse = float(np.mean((x.data - ref.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


# ---------------------------------------------------------------------------
# Serialization: P2 PGM previews and an exact float64 round-trip format.
# Raw format: 16-byte header (magic "RNPG", rows/cols/reserved as uint32 LE)
# followed by the column-stacked float64 payload.
# ---------------------------------------------------------------------------

_RAW_MAGIC = b"RNPG"


def write_pgm(grid: ImageGrid, path, lo: float = 0.0, hi: float = 1.0) -> None:
    """8-bit ASCII PGM preview; values clipped to [lo, hi] then scaled to 0..255."""
    if hi <= lo:
        raise ValueError("hi must exceed lo")
    m = grid.matrix()
    q = np.clip((m - lo) / (hi - lo), 0.0, 1.0)
    pix = np.rint(q * 255).astype(np.uint8)
    with open(path, "w", encoding="ascii") as f:
        f.write(f"P2\n{grid.cols} {grid.rows}\n255\n")
        for row in pix:
            f.write(" ".join(str(v) for v in row) + "\n")


def write_raw(grid: ImageGrid, path) -> None:
    with open(path, "wb") as f:
        f.write(_RAW_MAGIC)
        f.write(struct.pack("<III", grid.rows, grid.cols, 0))
        f.write(grid.data.astype("<f8").tobytes())


def read_raw(path) -> ImageGrid:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _RAW_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_RAW_MAGIC!r}")
        rows, cols, _ = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(8 * rows * cols), dtype="<f8")
        if data.size != rows * cols:
            raise ValueError("truncated raw image payload")
    return ImageGrid(rows, cols, data.copy())
