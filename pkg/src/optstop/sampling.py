"""Random streams, the log-normal sampling measure and trajectory simulation.

Randomness is organised in fixed-size row blocks.  Block ``b`` of a stream
draws from its own Philox generator keyed by ``(seed, stream key, b)``, so a
batch is a pure function of the seed and the configuration: it does not
depend on how many worker threads produced it.  Normals come from numpy's
``Generator.standard_normal`` (ziggurat method).
"""

from __future__ import annotations

import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BLOCK_ROWS = 32768

FIXED_X0 = "fixed_x0"
SAMPLED_FROM_MU = "sampled_from_mu"
_ORIGIN_CODES = {FIXED_X0: 0, SAMPLED_FROM_MU: 1}


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


@dataclass(frozen=True)
class RngStream:
    seed: int
    key: tuple = ()

    def child(self, *parts) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(_key_part(p) for p in parts))

    def generator(self, block: int) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.key + (int(block),))
        return np.random.Generator(np.random.Philox(seq))


def block_slices(count: int, block_rows: int = BLOCK_ROWS) -> list[slice]:
    return [slice(s, min(s + block_rows, count)) for s in range(0, count, block_rows)]


def map_blocks(fn, items, threads: int = 1) -> list:
    """Apply ``fn`` to each item, preserving order; threads only change speed."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def standard_normals(stream: RngStream, count: int, shape=(), threads: int = 1) -> np.ndarray:
    shape = tuple(shape)
    out = np.empty((count,) + shape)

    def fill(args):
        b, sl = args
        out[sl] = stream.generator(b).standard_normal((sl.stop - sl.start,) + shape)

    map_blocks(fill, enumerate(block_slices(count)), threads)
    return out


@dataclass(frozen=True)
class MuParams:
    """Log-normal sampling measure: i.i.d. components exp(m + sigma_hat * Z)."""

    m: float
    sigma_hat: float
    n: int

    def __post_init__(self):
        if not self.sigma_hat > 0:
            raise ValueError(f"sigma_hat must be > 0, got {self.sigma_hat!r}")
        if self.n < 1:
            raise ValueError("dimension n must be >= 1")

    @classmethod
    def from_offset(cls, x0: float, offset: float, sigma_hat: float, n: int) -> "MuParams":
        """m = ln(x0) + offset, the form used in the experiment tables."""
        return cls(math.log(x0) + offset, sigma_hat, n)

    @classmethod
    def from_model(cls, model, t_tilde: float, sigma_hat: float) -> "MuParams":
        """m = (r - delta - sigma^2/2) t_tilde + ln(x0) with t_tilde in [T/2, T]."""
        if not (model.T / 2 <= t_tilde <= model.T):
            raise ValueError(f"t_tilde must lie in [T/2, T] = [{model.T / 2}, {model.T}]")
        lo, hi = model.sigma * math.sqrt(model.T / 2), model.sigma * math.sqrt(model.T)
        if not (lo - 1e-12 <= sigma_hat <= hi + 1e-12):
            raise ValueError(f"sigma_hat must lie in [{lo:.4f}, {hi:.4f}]")
        m = (model.r - model.delta - 0.5 * model.sigma**2) * t_tilde + math.log(model.x0)
        return cls(m, sigma_hat, model.n)

    def sample(self, count: int, stream: RngStream, threads: int = 1) -> np.ndarray:
        return sample_mu(self, count, stream, threads)

    def to_dict(self) -> dict:
        return {"m": self.m, "sigma_hat": self.sigma_hat, "n": self.n}


def sample_mu(params: MuParams, count: int, stream: RngStream, threads: int = 1) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    z = standard_normals(stream, count, (params.n,), threads)
    return np.exp(params.m + params.sigma_hat * z)


@dataclass(frozen=True)
class TrajectoryBatch:
    paths: np.ndarray  # (M, J + 1, n)
    seed: int
    origin: str

    def __post_init__(self):
        if self.origin not in _ORIGIN_CODES:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.paths.ndim != 3 or self.paths.shape[0] < 1:
            raise ValueError(f"paths must have shape (M, J+1, n) with M >= 1, got {self.paths.shape}")
        self.paths.flags.writeable = False

    @property
    def M(self) -> int:
        return self.paths.shape[0]

    @property
    def J(self) -> int:
        return self.paths.shape[1] - 1

    @property
    def n(self) -> int:
        return self.paths.shape[2]


def simulate_paths(model, start, count: int, stream: RngStream, *, mu=None,
                   threads: int = 1, counters=None) -> TrajectoryBatch:
    """Simulate ``count`` exact trajectories over dates 0..J.

    ``start`` is ``"fixed_x0"`` (every path starts at ``model.start``) or
    ``"sampled_from_mu"`` (starting points drawn from ``mu``).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if start not in _ORIGIN_CODES:
        raise ValueError(f"start must be one of {sorted(_ORIGIN_CODES)}, got {start!r}")
    if start == SAMPLED_FROM_MU and mu is None:
        raise ValueError("sampled_from_mu requires mu")
    x_start = np.asarray(model.start, dtype=float)
    d = x_start.shape[0]
    paths = np.empty((count, model.J + 1, d))
    if start == FIXED_X0:
        paths[:, 0] = x_start
    else:
        paths[:, 0] = np.asarray(mu.sample(count, stream.child("start"), threads)).reshape(count, d)

    def fill(args):
        b, sl = args
        rng = stream.generator(b)
        x = paths[sl, 0]
        for j in range(model.J):
            x = model.transition(j, x, rng)
            paths[sl, j + 1] = x

    map_blocks(fill, enumerate(block_slices(count)), threads)
    if counters is not None:
        counters.add_sim(count * model.J)
    return TrajectoryBatch(paths, int(stream.seed), start)


class ShiftView:
    """Trajectories restarted at date j - 1, indexed by absolute date r = j..J.

    Relies on a time-homogeneous transition: X_r^{j-1,U} is column r - j + 1
    of a batch started from U at date 0.  Holds a view, never a copy.
    """

    def __init__(self, batch: TrajectoryBatch, j: int):
        self.j = j
        self.J = batch.J
        self.array = batch.paths[:, 1 : batch.J - j + 2]

    def column(self, r: int) -> np.ndarray:
        if not self.j <= r <= self.J:
            raise IndexError(f"date {r} outside {self.j}..{self.J}")
        return self.array[:, r - self.j]

    def __getitem__(self, index):
        m, r = index
        return self.column(r)[m]


def shift_view(batch: TrajectoryBatch, j: int) -> ShiftView:
    if batch.origin != SAMPLED_FROM_MU:
        raise ValueError("shift_view requires a batch started from mu")
    if not 1 <= j <= batch.J:
        raise ValueError(f"j must be in 1..{batch.J}, got {j}")
    return ShiftView(batch, j)


_HEADER = struct.Struct("<4sIQQQQI")
_MAGIC = b"TRJB"


def dump_batch(batch: TrajectoryBatch, path) -> None:
    """Little-endian layout: magic, version, M, J, n, seed, origin, then doubles (M, J+1, n) row-major."""
    header = _HEADER.pack(_MAGIC, 1, batch.M, batch.J, batch.n, batch.seed,
                          _ORIGIN_CODES[batch.origin])
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(batch.paths, dtype="<f8").tobytes())


def load_batch(path) -> TrajectoryBatch:
    raw = Path(path).read_bytes()
    magic, version, M, J, n, seed, origin = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path}: not a trajectory batch file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != M * (J + 1) * n:
        raise ValueError(f"{path}: truncated payload")
    origins = {v: k for k, v in _ORIGIN_CODES.items()}
    return TrajectoryBatch(data.reshape(M, J + 1, n).astype(float), seed, origins[origin])


def one_step_samples(model, j: int, start: np.ndarray, stream: RngStream, *,
                     threads: int = 1, counters=None) -> np.ndarray:
    """One transition from date ``j`` for every row of ``start``, drawn blockwise."""
    start = np.asarray(start, dtype=float)
    out = np.empty_like(start)

    def fill(args):
        b, sl = args
        out[sl] = model.transition(j, start[sl], stream.generator(b))

    map_blocks(fill, enumerate(block_slices(start.shape[0])), threads)
    if counters is not None:
        counters.add_sim(start.shape[0])
    return out
