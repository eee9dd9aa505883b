"""Rolling input/target windows and leak-free sample-wise decomposition.

Window ``b`` (1-based) ends at ``t_b = P + (b - 1) s``; its input covers
samples ``t_b - P + 1 .. t_b`` and its target ``t_b + 1 .. t_b + F``.  Arrays
are 0-based internally, so ``endpoints`` holds the 1-based ``t_b`` and the
input slice is ``series[t_b - P : t_b]``.

Each input window is decomposed on its own, so nothing after ``t_b`` can
influence the modes of window ``b``.
"""
from __future__ import annotations

import hashlib
import logging
import os
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (ConfigError, DegenerateSplit, NonFiniteNormalization,
                     SeriesTooShort, WindowDecompositionError, VmdNetError)
from .signal import Signal, as_array
from .vmd import VmdConfig, decompose_batch

logger = logging.getLogger(__name__)

# Windows handed to the solver per vectorized call.  Fixed so chunking never
# depends on the worker count.
CHUNK_SIZE = 256


@dataclass(frozen=True)
class WindowSpec:
    lookback: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        # Decomposition needs P >= 8; the solver enforces that, and run
        # configs check it up front, so plain windowing accepts any P >= 1.
        if self.lookback < 1:
            raise ConfigError(f"lookback must be >= 1, got {self.lookback}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def P(self):
        return self.lookback

    @property
    def F(self):
        return self.horizon


@dataclass
class WindowedDataset:
    X: np.ndarray  # B x P
    Y: np.ndarray  # B x F
    endpoints: np.ndarray  # B, 1-based t_b
    time_features: Optional[np.ndarray] = None  # B x P x n_t

    def __len__(self):
        return self.X.shape[0]


@dataclass
class NormStats:
    mean: float
    std: float

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class DecomposedDataset:
    U: np.ndarray  # B x K x P
    Omega: np.ndarray  # B x K
    Y: np.ndarray  # B x F
    vmd_config: Optional[VmdConfig] = None
    norm_stats: Optional[NormStats] = None
    time_features: Optional[np.ndarray] = None  # B x P x n_t
    endpoints: Optional[np.ndarray] = None

    def __len__(self):
        return self.U.shape[0]

    @property
    def K(self):
        return self.U.shape[1]

    @property
    def P(self):
        return self.U.shape[2]

    @property
    def F(self):
        return self.Y.shape[1]

    @property
    def X(self):
        """Raw windows recovered as the sum of modes."""
        return self.U.sum(axis=1)

    def subset(self, index) -> "DecomposedDataset":
        tf = None if self.time_features is None else self.time_features[index]
        ep = None if self.endpoints is None else self.endpoints[index]
        return DecomposedDataset(self.U[index], self.Omega[index], self.Y[index],
                                 self.vmd_config, self.norm_stats, tf, ep)


def window_count(T: int, spec: WindowSpec) -> int:
    if T < spec.lookback + spec.horizon:
        return 0
    return (T - spec.lookback - spec.horizon) // spec.stride + 1


def calendar_features(timestamps: np.ndarray) -> np.ndarray:
    """Hour-of-day and day-of-week as sin/cos pairs, shape T x 4."""
    ts = np.asarray(timestamps).astype("datetime64[h]").astype(np.int64)
    hour = np.mod(ts, 24)
    # 1970-01-01 was a Thursday; shift so Monday is 0.
    dow = np.mod(ts // 24 + 3, 7)
    h = 2 * np.pi * hour / 24.0
    d = 2 * np.pi * dow / 7.0
    return np.stack([np.sin(h), np.cos(h), np.sin(d), np.cos(d)], axis=1)


def make_windows(series, spec: WindowSpec, with_time_features: bool = True) -> WindowedDataset:
    """Slice a series into ``B = floor((T - P - F) / s) + 1`` input/target pairs."""
    x = as_array(series)
    T = x.shape[0]
    P, F, s = spec.lookback, spec.horizon, spec.stride
    if T < P + F:
        raise SeriesTooShort(f"series of length {T} cannot hold one window with P={P}, F={F}")
    B = window_count(T, spec)
    endpoints = P + np.arange(B) * s
    idx_in = endpoints[:, None] - P + np.arange(P)[None, :]
    idx_out = endpoints[:, None] + np.arange(F)[None, :]
    tf = None
    if with_time_features:
        sig = series if isinstance(series, Signal) else Signal(x)
        tf = calendar_features(sig.timestamps())[idx_in]
    return WindowedDataset(X=x[idx_in], Y=x[idx_out], endpoints=endpoints, time_features=tf)


def _decompose_chunk(args):
    X, cfg, offset = args
    try:
        res = decompose_batch(X, cfg)
    except VmdNetError:
        # Locate the failing window so the error names it.
        for i in range(X.shape[0]):
            try:
                decompose_batch(X[i:i + 1], cfg)
            except VmdNetError as exc:
                raise WindowDecompositionError(offset + i, exc) from exc
        raise
    return res.modes, res.center_frequencies, res.reconstruction_error


def decompose_windows(ds: WindowedDataset, cfg: VmdConfig, workers: int = 1,
                      norm_stats: Optional[NormStats] = None) -> DecomposedDataset:
    """Decompose every input window independently.

    Chunks of :data:`CHUNK_SIZE` windows are solved in vectorized passes and
    written into pre-allocated slots, so the result is bit-identical for any
    ``workers`` value.
    """
    B, P = ds.X.shape
    K = cfg.num_modes
    U = np.empty((B, K, P))
    Omega = np.empty((B, K))
    jobs = [(ds.X[lo:lo + CHUNK_SIZE], cfg, lo) for lo in range(0, B, CHUNK_SIZE)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_decompose_chunk, jobs))
    else:
        outputs = [_decompose_chunk(job) for job in jobs]
    errs = []
    for (X, _, lo), (modes, omega, err) in zip(jobs, outputs):
        U[lo:lo + X.shape[0]] = modes
        Omega[lo:lo + X.shape[0]] = omega
        errs.append(err)
    if B:
        logger.debug("decomposed %d windows, mean reconstruction error %.3g",
                     B, float(np.mean(np.concatenate(errs))))
    return DecomposedDataset(U=U, Omega=Omega, Y=ds.Y.copy(), vmd_config=cfg,
                             norm_stats=norm_stats, time_features=ds.time_features,
                             endpoints=ds.endpoints)


def split_series(series: Signal, fractions=(0.7, 0.1, 0.2)):
    """Chronological contiguous split into train/val/test signals."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be 3 positive numbers summing to 1, got {fractions}")
    T = series.length
    n_train = int(round(T * fr[0]))
    n_val = int(round(T * fr[1]))
    return (series.slice(0, n_train), series.slice(n_train, n_train + n_val),
            series.slice(n_train + n_val, T))


def split_and_normalize(series: Signal, fractions=(0.7, 0.1, 0.2), min_length: int = 0):
    """Split chronologically and z-score all parts with train-only statistics.

    Returns ``(train, val, test, stats)``.  ``min_length`` is ``P + F``; any
    shorter part raises :class:`DegenerateSplit`.
    """
    parts = split_series(series, fractions)
    for name, part in zip(("train", "val", "test"), parts):
        if part.length < max(min_length, 1):
            raise DegenerateSplit(f"{name} split has {part.length} samples, need {min_length}")
    train = parts[0].samples
    std = float(np.std(train))
    if not np.isfinite(std) or std == 0.0:
        raise NonFiniteNormalization("training split has zero or non-finite standard deviation")
    stats = NormStats(mean=float(np.mean(train)), std=std)
    out = tuple(p.with_samples(stats.apply(p.samples)) for p in parts)
    return out + (stats,)


# ---------------------------------------------------------------------------
# Binary cache of decomposed windows
#
# Layout (little-endian):
#   magic    4 bytes  b"VMDC"
#   version  uint32
#   B        uint64
#   K, P, F  uint32 each
#   alpha    float64
#   checksum uint32   CRC-32 of the payload bytes
#   payload  U (B*K*P), Omega (B*K), Y (B*F) as float64, row-major
# ---------------------------------------------------------------------------

CACHE_MAGIC = b"VMDC"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQIIIdI")


class CacheError(VmdNetError):
    pass


def write_cache(path, dd: DecomposedDataset) -> Path:
    path = Path(path)
    B, K, P = dd.U.shape
    F = dd.Y.shape[1]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in (dd.U, dd.Omega, dd.Y))
    alpha = dd.vmd_config.alpha if dd.vmd_config is not None else float("nan")
    header = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, B, K, P, F, alpha,
                          zlib.crc32(payload) & 0xFFFFFFFF)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
    return path


def read_cache(path):
    """Return ``(U, Omega, Y, alpha)`` from a cache file, verifying its checksum."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CacheError(f"{path}: truncated header")
    magic, version, B, K, P, F, alpha, crc = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: unsupported version {version}")
    payload = data[_HEADER.size:]
    expected = 8 * (B * K * P + B * K + B * F)
    if len(payload) != expected:
        raise CacheError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CacheError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    n_u, n_w = B * K * P, B * K
    U = flat[:n_u].reshape(B, K, P)
    Omega = flat[n_u:n_u + n_w].reshape(B, K)
    Y = flat[n_u + n_w:].reshape(B, F)
    return U, Omega, Y, alpha


def cache_key(X: np.ndarray, cfg: VmdConfig, F: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(repr((cfg, F)).encode())
    return h.hexdigest()[:16]


def decompose_windows_cached(ds: WindowedDataset, cfg: VmdConfig, cache_dir=None,
                             workers: int = 1, norm_stats: Optional[NormStats] = None,
                             tag: str = "") -> DecomposedDataset:
    """:func:`decompose_windows` backed by the on-disk cache.

    The file name carries ``(P, K, alpha)`` plus a digest of the windows and
    the full solver settings, so a stale entry is never reused.
    """
    if cache_dir is None:
        return decompose_windows(ds, cfg, workers, norm_stats)
    P = ds.X.shape[1]
    F = ds.Y.shape[1]
    name = f"{tag}P{P}_K{cfg.num_modes}_a{cfg.alpha:.6g}_{cache_key(ds.X, cfg, F)}.vmdc"
    path = Path(cache_dir) / name
    if path.exists():
        try:
            U, Omega, Y, _ = read_cache(path)
            if U.shape == (len(ds), cfg.num_modes, P) and np.array_equal(Y, ds.Y):
                logger.info("loaded decomposition cache %s", path)
                return DecomposedDataset(U, Omega, Y, cfg, norm_stats,
                                         ds.time_features, ds.endpoints)
        except CacheError as exc:
            logger.warning("ignoring unusable cache %s: %s", path, exc)
    dd = decompose_windows(ds, cfg, workers, norm_stats)
    write_cache(path, dd)
    return dd
