"""Sample sources: synthetic distributions and IDX dataset ingestion.

Every source exposes ``stream(seed)`` returning a single-consumer stream with
a ``dim`` attribute and a ``next()`` method; identical seeds give identical
sample sequences.  Synthetic sources are scaled so that E|x|^2 <= 1 (the
two-point trap source is deliberately left unscaled, matching how it is used
as a counterexample).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np


class StreamExhaustedError(RuntimeError):
    """A finite stream ran out of samples before the run finished."""


class IdxFormatError(ValueError):
    """Malformed IDX container (bad magic, element type, rank, or length)."""


class _BasisVectorStream:
    """Draws scaled standard basis vectors from a categorical distribution."""

    def __init__(self, dim: int, cumprobs: np.ndarray, scales: np.ndarray, seed):
        self.dim = dim
        self._cum = cumprobs
        self._scales = scales
        self._rng = np.random.default_rng(seed)

    def next(self) -> np.ndarray:
        i = int(np.searchsorted(self._cum, self._rng.random(), side="right"))
        x = np.zeros(self.dim)
        x[i] = self._scales[i]
        return x


@dataclass(frozen=True)
class OrthogonalDistribution:
    """Discrete distribution over the d standard basis vectors with
    geometrically decaying second moments.

    Direction i (1-based) has probability p_i proportional to tau^-i, and the
    sample is the unit vector e_i, so E[x x^T] = diag(p) exactly, |x| = 1
    always, and trace E[x x^T] = 1.  The top-k subspace is span(e_1..e_k)
    with objective value sum of the k largest p_i, available in closed form.
    """

    d: int = 32
    tau: float = 1.1

    def __post_init__(self):
        if self.d < 1 or self.tau <= 1.0:
            raise ValueError("need d >= 1 and tau > 1")

    @property
    def dim(self) -> int:
        return self.d

    def second_moments(self) -> np.ndarray:
        weights = self.tau ** -np.arange(1, self.d + 1, dtype=np.float64)
        return weights / weights.sum()

    def optimum(self, k: int) -> float:
        return float(self.second_moments()[:k].sum())

    def stream(self, seed) -> _BasisVectorStream:
        p = self.second_moments()
        return _BasisVectorStream(self.d, np.cumsum(p), np.ones(self.d), seed)


@dataclass(frozen=True)
class TrapDistribution:
    """Two-point source in the plane: [sqrt(3), 0] w.p. 1/3, [0, sqrt(2)] w.p. 2/3.

    Second moment diag(1, 4/3); the maximal-variance direction is e2 with
    objective 4/3 at k = 1.  Rank-one truncation updates converge to the
    wrong direction e1 with probability exactly 5/9 on this source.
    """

    dim: int = field(default=2, init=False)

    def second_moments(self) -> np.ndarray:
        return np.array([1.0, 4.0 / 3.0])

    def optimum(self, k: int) -> float:
        return float(np.sort(self.second_moments())[::-1][:k].sum())

    def stream(self, seed) -> "_TrapStream":
        return _TrapStream(seed)


class _TrapStream:
    dim = 2

    _HEAVY = np.array([math.sqrt(3.0), 0.0])
    _LIGHT = np.array([0.0, math.sqrt(2.0)])

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)

    def next(self) -> np.ndarray:
        return self._HEAVY.copy() if self._rng.random() < 1.0 / 3.0 else self._LIGHT.copy()


@dataclass(frozen=True)
class PointMass:
    """Degenerate source that always returns the same vector."""

    x: np.ndarray

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def second_moments(self) -> np.ndarray:
        # exact only for axis-aligned x; general second moment is x x^T
        return np.asarray(self.x, dtype=np.float64) ** 2

    def optimum(self, k: int) -> float:
        v = np.asarray(self.x, dtype=np.float64)
        norms = float(v @ v)
        return norms  # the top-1 direction captures everything; k >= 1

    def stream(self, seed) -> "_PointMassStream":
        return _PointMassStream(np.asarray(self.x, dtype=np.float64))


class _PointMassStream:
    def __init__(self, x: np.ndarray):
        self._x = x
        self.dim = x.shape[0]

    def next(self) -> np.ndarray:
        return self._x.copy()


# ---------------------------------------------------------------------------
# IDX ingestion and dataset handling
# ---------------------------------------------------------------------------

_IDX_UBYTE = 0x08


def load_idx(path) -> np.ndarray:
    """Parse a big-endian IDX file.

    Rank-3 unsigned-byte data (images) is flattened row-wise to an
    (n, rows*cols) float32 array scaled to [0, 1]; rank-1 unsigned-byte data
    (labels) is returned as an (n,) uint8 array.  Other element types and
    ranks are rejected.
    """
    with open(path, "rb") as fh:
        header = fh.read(4)
        if len(header) < 4:
            raise IdxFormatError("truncated IDX header")
        zero0, zero1, dtype, rank = struct.unpack(">BBBB", header)
        if zero0 != 0 or zero1 != 0:
            raise IdxFormatError(f"bad IDX magic {header!r}")
        if dtype != _IDX_UBYTE:
            raise IdxFormatError(f"unsupported IDX element type 0x{dtype:02x}")
        if rank not in (1, 3):
            raise IdxFormatError(f"unsupported IDX rank {rank}")
        dims_raw = fh.read(4 * rank)
        if len(dims_raw) < 4 * rank:
            raise IdxFormatError("truncated IDX dimension header")
        dims = struct.unpack(f">{rank}I", dims_raw)
        expected = int(np.prod(dims))
        payload = fh.read(expected + 1)
        if len(payload) < expected:
            raise IdxFormatError(
                f"truncated IDX payload: expected {expected} bytes, got {len(payload)}"
            )
        data = np.frombuffer(payload[:expected], dtype=np.uint8)
    if rank == 1:
        return data.copy()
    n, rows, cols = dims
    return (data.reshape(n, rows * cols).astype(np.float32)) / 255.0


_CACHE_MAGIC = b"SPCA"


def save_cache(path, samples: np.ndarray) -> None:
    """Write the flat binary dataset cache.

    Layout (little-endian): 4-byte tag ``SPCA``, uint32 d, uint32 n, then
    n*d float32 values row-major.
    """
    samples = np.ascontiguousarray(samples, dtype="<f4")
    n, d = samples.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", d, n))
        fh.write(samples.tobytes())


def load_cache(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tag = fh.read(4)
        if tag != _CACHE_MAGIC:
            raise IdxFormatError(f"bad cache tag {tag!r}")
        d, n = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * n * d), dtype="<f4")
        if data.shape[0] != n * d:
            raise IdxFormatError("truncated cache payload")
    return data.reshape(n, d).astype(np.float32)


@dataclass
class DatasetSource:
    """In-memory matrix of row samples with train/validation/test indices."""

    samples: np.ndarray
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None
    test_idx: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def _rows(self, idx) -> np.ndarray:
        if idx is None:
            raise ValueError("dataset has not been split yet")
        return self.samples[idx]

    @property
    def train(self) -> np.ndarray:
        return self._rows(self.train_idx)

    @property
    def validation(self) -> np.ndarray:
        return self._rows(self.val_idx)

    @property
    def test(self) -> np.ndarray:
        return self._rows(self.test_idx)

    def train_stream(self, seed, cycles: int = 1) -> "_DatasetStream":
        """Single pass (or ``cycles`` passes) over the shuffled train rows."""
        return _DatasetStream(self.train, seed, cycles)


class _DatasetStream:
    def __init__(self, rows: np.ndarray, seed, cycles: int):
        self._rows = rows
        self.dim = rows.shape[1]
        rng = np.random.default_rng(seed)
        order = np.concatenate(
            [rng.permutation(rows.shape[0]) for _ in range(cycles)]
        )
        self._order = order
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._order.shape[0]:
            raise StreamExhaustedError(
                f"dataset stream exhausted after {self._pos} samples"
            )
        row = self._rows[self._order[self._pos]]
        self._pos += 1
        return np.asarray(row, dtype=np.float64)


def split(dataset: DatasetSource, seed) -> DatasetSource:
    """Seeded shuffle into 40% train / 20% validation / 40% test.

    Rounding residue goes to the test split; needs at least 5 samples.
    """
    n = dataset.n
    if n < 5:
        raise ValueError(f"need at least 5 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(0.4 * n)
    n_val = int(0.2 * n)
    return DatasetSource(
        samples=dataset.samples,
        train_idx=np.sort(order[:n_train]),
        val_idx=np.sort(order[n_train : n_train + n_val]),
        test_idx=np.sort(order[n_train + n_val :]),
    )


def normalize(dataset: DatasetSource) -> DatasetSource:
    """Center and scale features using train-split statistics only.

    Each feature is centered by its train mean and divided by its train
    standard deviation (population convention) times sqrt(d), which makes
    the mean squared sample norm approximately one on the train split.
    Zero-variance features are passed through centered.
    """
    train = dataset.train
    if train.shape[0] == 0:
        raise ValueError("empty train split")
    d = dataset.dim
    mean = train.mean(axis=0)
    std = train.std(axis=0)  # population (divide by n)
    scale = np.where(std > 1e-12, std * math.sqrt(d), 1.0)
    transformed = (dataset.samples - mean) / scale
    return DatasetSource(
        samples=transformed.astype(np.float64),
        train_idx=dataset.train_idx,
        val_idx=dataset.val_idx,
        test_idx=dataset.test_idx,
    )


def generate_demo_images(
    n: int = 1000, seed: int = 1234, size: int = 28
) -> np.ndarray:
    """Deterministic synthetic image-like dataset, (n, size, size) uint8.

    Samples mix a handful of smooth spatial prototypes with pixel noise,
    giving a strongly low-rank second moment like scanned digits do.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size))
    prototypes = np.stack(
        [
            np.exp(-((xx**2 + yy**2) / 0.3)),
            np.exp(-(((xx - 0.4) ** 2 + yy**2) / 0.2)),
            np.abs(np.sin(2.5 * xx) * np.cos(1.5 * yy)),
            np.clip(1 - np.abs(xx + yy), 0, None),
            np.clip(1 - 2 * np.abs(xx - yy), 0, None),
        ]
    )
    p = prototypes.reshape(len(prototypes), -1)
    weights = rng.dirichlet(np.full(len(prototypes), 0.4), size=n)
    intensity = rng.uniform(0.55, 1.0, size=(n, 1))
    images = intensity * (weights @ p)
    images += rng.normal(0.0, 0.04, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    return (images * 255).astype(np.uint8).reshape(n, size, size)


def save_idx_images(path, images: np.ndarray) -> None:
    """Write (n, rows, cols) uint8 images as a rank-3 IDX file."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">BBBB", 0, 0, _IDX_UBYTE, 3))
        fh.write(struct.pack(">III", n, rows, cols))
        fh.write(images.tobytes())
