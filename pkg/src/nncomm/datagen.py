"""Synthetic datasets for BPSK detection over a fixed channel and CSI feedback.

Also reads/writes the ``NNCD`` dataset container::

    magic   "NNCD"                       4 bytes
    version u16                          (1)
    rank    u8
    dims    u32 x rank
    flags   u8                           bit0: payload is min-max normalized
    payload float32 x prod(dims)
    [lo, hi float64]                     only when bit0 is set
    crc32   u32 over every preceding byte

All integers and floats are little-endian.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError, ParseError

DATASET_MAGIC = b"NNCD"
DATASET_VERSION = 1

DETECTION_SPLITS = {"train": 100_000, "val": 30_000, "test": 20_000}
CSI_SPLITS = {"train": 80_000, "val": 10_000, "test": 10_000}
SMALL_FACTOR = 10


def split_sizes(task, small=False):
    sizes = dict(DETECTION_SPLITS if task == "detection" else CSI_SPLITS)
    if small:
        sizes = {k: v // SMALL_FACTOR for k, v in sizes.items()}
    return sizes


# -- detection ----------------------------------------------------------------

def gen_channel(n, k, seed):
    """Fixed real channel with i.i.d. N(0, 1/N) entries."""
    return np.random.default_rng(seed).standard_normal((n, k)) / np.sqrt(n)


@dataclass
class DetectionSamples:
    y: np.ndarray
    s: np.ndarray
    noise_var: np.ndarray
    snr_db: np.ndarray

    def __len__(self):
        return len(self.y)

    @property
    def bits(self):
        """Detector targets: (s + 1) / 2."""
        return (self.s + 1.0) / 2.0

    def subset(self, idx):
        return DetectionSamples(self.y[idx], self.s[idx], self.noise_var[idx], self.snr_db[idx])


def noise_variance(channel, snr_db):
    """Per-component noise variance for SNR = E||Hs||^2 / E||n||^2 with BPSK symbols."""
    n = channel.shape[0]
    signal = np.sum(channel ** 2)  # E||Hs||^2 for i.i.d. +-1 symbols
    return signal / (n * 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0))


def gen_detection_dataset(channel, count, snr_db, seed):
    """``count`` samples of ``y = H s + n``.

    ``snr_db`` is a scalar, a per-sample array, or a ``(low, high)`` pair drawn
    uniformly per sample.  ``np.inf`` disables noise.
    """
    if count <= 0:
        raise DataError(f"sample count must be positive, got {count}")
    channel = np.asarray(channel, dtype=np.float64)
    n, k = channel.shape
    rng = np.random.default_rng(seed)
    if isinstance(snr_db, tuple) and len(snr_db) == 2:
        snr = rng.uniform(snr_db[0], snr_db[1], size=count)
    else:
        snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (count,)).copy()
    s = rng.choice([-1.0, 1.0], size=(count, k))
    var = noise_variance(channel, snr)
    noise = rng.standard_normal((count, n)) * np.sqrt(var)[:, None]
    return DetectionSamples(s @ channel.T + noise, s, var, snr)


def gen_detection_splits(channel, snrs, seed, small=False, sizes=None):
    """Train/val mixed over the SNR span; test sets one per SNR point."""
    sizes = sizes or split_sizes("detection", small)
    seeds = np.random.SeedSequence(seed).spawn(2 + len(snrs))
    span = (float(min(snrs)), float(max(snrs)))
    train = gen_detection_dataset(channel, sizes["train"], span, seeds[0])
    val = gen_detection_dataset(channel, sizes["val"], span, seeds[1])
    test = {float(snr): gen_detection_dataset(channel, sizes["test"], float(snr), ss)
            for snr, ss in zip(snrs, seeds[2:])}
    return train, val, test


# -- CSI ----------------------------------------------------------------------

SCENARIOS = {
    # path count range, delay span (taps), angular spread around a cluster centre
    # drawn from [-centre, centre] (spatial-frequency units)
    "indoor_like": {"paths": (2, 6), "delay": 2.0, "spread": 0.06, "centre": 0.1},
    "outdoor_like": {"paths": (6, 14), "delay": 4.0, "spread": 0.1, "centre": 0.1},
}


@dataclass
class CsiDataset:
    """Angular-delay CSI ``(count, 2, H, W)`` (real, imag) with min-max scaling info."""

    raw: np.ndarray
    lo: float
    hi: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.raw)

    @property
    def normalized(self):
        return (self.raw - self.lo) / (self.hi - self.lo)

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * (self.hi - self.lo) + self.lo

    def subset(self, idx):
        return CsiDataset(self.raw[idx], self.lo, self.hi, dict(self.meta))


def angular_delay_matrix(gains, delays, spatial_freqs, n_ant=32, n_delay=32, n_sub=256):
    """Sum of paths -> spatial-frequency response -> truncated angular-delay matrix."""
    steer = np.exp(2j * np.pi * np.outer(np.arange(n_ant), spatial_freqs)) * np.asarray(gains)
    phase = np.exp(-2j * np.pi * np.outer(delays, np.arange(n_sub)) / n_sub)
    h_sf = steer @ phase
    h_ad = np.fft.ifft(np.fft.fft(h_sf, axis=0) / n_ant, axis=1)
    return h_ad[:, :n_delay]


def _csi_paths(rng, scenario):
    p = SCENARIOS[scenario]
    n_paths = int(rng.integers(p["paths"][0], p["paths"][1] + 1))
    power = np.exp(-rng.uniform(0, 3, n_paths))
    gains = np.sqrt(power / power.sum()) * np.exp(2j * np.pi * rng.random(n_paths))
    delays = np.sort(rng.uniform(0, p["delay"], n_paths))
    centre = rng.uniform(-p["centre"], p["centre"])
    phis = centre + rng.uniform(-p["spread"], p["spread"], n_paths)
    return gains, delays, phis


def gen_csi_dataset(scenario, count, seed, size=32):
    """Synthetic angular-delay-sparse CSI, each sample scaled to unit Frobenius norm.

    Values are stored float32-representable so file round-trips are exact.
    """
    if scenario not in SCENARIOS:
        raise DataError(f"scenario must be one of {sorted(SCENARIOS)}")
    if count <= 0:
        raise DataError(f"sample count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    out = np.empty((count, 2, size, size))
    for i in range(count):
        h = angular_delay_matrix(*_csi_paths(rng, scenario), n_ant=size, n_delay=size)
        h /= np.linalg.norm(h)
        out[i, 0], out[i, 1] = h.real, h.imag
    out = out.astype(np.float32).astype(np.float64)
    return CsiDataset(out, float(out.min()), float(out.max()),
                      {"scenario": scenario, "seed": int(seed) if np.isscalar(seed) else None})


def energy_concentration(raw, top=32):
    """Fraction of energy in the ``top`` strongest complex bins, per sample."""
    power = raw[:, 0] ** 2 + raw[:, 1] ** 2
    flat = np.sort(power.reshape(len(raw), -1), axis=1)[:, ::-1]
    return flat[:, :top].sum(axis=1) / flat.sum(axis=1)


def gen_csi_splits(scenario, seed, small=False, sizes=None):
    sizes = sizes or split_sizes("csi", small)
    seeds = np.random.SeedSequence(seed).spawn(3)
    parts = {k: gen_csi_dataset(scenario, sizes[k], ss) for k, ss in zip(("train", "val", "test"), seeds)}
    # one shared scaling, fitted on the training split
    lo, hi = parts["train"].lo, parts["train"].hi
    for p in parts.values():
        p.lo, p.hi = lo, hi
    return parts


# -- file format ---------------------------------------------------------------

def save_dataset(path, array, normalized=False, lo=None, hi=None):
    """Write ``array`` as an NNCD file (values are stored as float32)."""
    array = np.asarray(array)
    header = DATASET_MAGIC + struct.pack("<HB", DATASET_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += struct.pack("<B", 1 if normalized else 0)
    body = header + array.astype("<f4").tobytes()
    if normalized:
        body += struct.pack("<dd", lo, hi)
    body += struct.pack("<I", zlib.crc32(body))
    _atomic_write(path, body)
    return len(body)


def save_csi_dataset(path, data: CsiDataset, normalized=False):
    if normalized:
        return save_dataset(path, data.normalized, True, data.lo, data.hi)
    return save_dataset(path, data.raw)


@dataclass
class LoadedDataset:
    array: np.ndarray
    normalized: bool
    lo: float | None = None
    hi: float | None = None


def _need(buf, offset, n, what):
    if offset + n > len(buf):
        raise ParseError(f"truncated file: {what} at offset {offset} needs {offset + n - len(buf)} more bytes")
    return buf[offset:offset + n]


def load_external_dataset(path, expected_shape=None, normalize=False):
    """Parse an NNCD file.

    ``expected_shape`` checks the per-sample dims (everything after the first
    axis).  With ``normalize=True`` a raw payload is min-max scaled on load.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0
    magic = _need(buf, off, 4, "magic")
    if magic != DATASET_MAGIC:
        raise ParseError(f"bad magic {magic!r} at offset 0")
    off += 4
    version, rank = struct.unpack("<HB", _need(buf, off, 3, "version/rank"))
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported version {version} at offset 4")
    off += 3
    dims = struct.unpack(f"<{rank}I", _need(buf, off, 4 * rank, "dims"))
    off += 4 * rank
    (flags,) = struct.unpack("<B", _need(buf, off, 1, "flags"))
    off += 1
    n = int(np.prod(dims))
    payload = _need(buf, off, 4 * n, "payload")
    off += 4 * n
    lo = hi = None
    if flags & 1:
        lo, hi = struct.unpack("<dd", _need(buf, off, 16, "normalization range"))
        off += 16
    (crc,) = struct.unpack("<I", _need(buf, off, 4, "crc32"))
    if crc != zlib.crc32(buf[:off]):
        raise ParseError(f"CRC mismatch for dataset payload (crc at offset {off})")
    if off + 4 != len(buf):
        raise ParseError(f"{len(buf) - off - 4} trailing bytes after offset {off + 4}")
    if expected_shape is not None and tuple(dims[1:]) != tuple(expected_shape):
        raise DimensionError(f"dataset sample shape {tuple(dims[1:])} != expected {tuple(expected_shape)}")
    array = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    normalized = bool(flags & 1)
    if normalize and not normalized:
        lo, hi = float(array.min()), float(array.max())
        array = (array - lo) / (hi - lo)
        normalized = True
    return LoadedDataset(array, normalized, lo, hi)


def _atomic_write(path, data):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
