"""Weight quantization: k-means (adaptive) and sign/rounding (fixed) codebooks."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

log = logging.getLogger(__name__)

MAX_LLOYD_ITERATIONS = 300


@dataclass
class QuantizedTensor:
    """A tensor replaced by ``2**bits`` sorted codebook values plus one index per element."""

    bits: int
    codebook: np.ndarray
    indices: np.ndarray
    shape: tuple

    def __post_init__(self):
        self.codebook = np.asarray(self.codebook, dtype=np.float64)
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.codebook) != 2 ** self.bits:
            raise ConfigError(f"codebook has {len(self.codebook)} entries, expected 2**{self.bits}")
        if self.indices.size != int(np.prod(self.shape)):
            raise ConfigError("index count does not match shape")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= 2 ** self.bits):
            raise ConfigError("index out of codebook range")

    @property
    def size(self):
        return self.indices.size

    def dequantize(self):
        return self.codebook[self.indices].reshape(self.shape)

    def codebook_gradient(self, grad):
        """Mean of the member gradients for every codebook entry."""
        k = len(self.codebook)
        sums = np.bincount(self.indices, weights=np.ravel(grad), minlength=k)
        counts = np.bincount(self.indices, minlength=k)
        return sums / np.maximum(counts, 1)

    def canonicalize(self):
        """Restore a strictly increasing float32-representable codebook after training."""
        cb = self.codebook.astype(np.float32).astype(np.float64)
        order = np.argsort(cb, kind="stable")
        cb = cb[order]
        for i in range(1, len(cb)):
            if cb[i] <= cb[i - 1]:
                cb[i] = float(np.nextafter(np.float32(cb[i - 1]), np.float32(np.inf)))
        inverse = np.empty_like(order)
        inverse[order] = np.arange(len(order))
        self.codebook[...] = cb
        self.indices = inverse[self.indices]
        return self

    def copy(self):
        return QuantizedTensor(self.bits, self.codebook.copy(), self.indices.copy(), self.shape)

    def packed_indices(self):
        return pack_indices(self.indices, self.bits)


def pack_indices(indices, bits):
    """Pack ``bits``-wide codes MSB-first into bytes, zero-padded to a byte boundary."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    if bits == 0:
        return b""
    shifts = np.arange(bits - 1, -1, -1)
    bitarr = ((indices[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bitarr.reshape(-1)).tobytes()


def unpack_indices(data, count, bits):
    if bits == 0:
        return np.zeros(count, dtype=np.int64)
    raw = np.frombuffer(data, dtype=np.uint8)
    bitarr = np.unpackbits(raw, count=count * bits).reshape(count, bits).astype(np.int64)
    return bitarr @ (1 << np.arange(bits - 1, -1, -1))


# -- k-means -------------------------------------------------------------------

def _assign(values, centroids):
    """Nearest sorted centroid per value (ties go to the lower centroid)."""
    mids = 0.5 * (centroids[1:] + centroids[:-1])
    return np.searchsorted(mids, values, side="left")


def kmeans_objective(values, centroids, labels):
    return float(np.sum((values - centroids[labels]) ** 2))


def seed_centroids(values, k, rng):
    """k-means++ seeding: first centre uniform, later ones drawn proportional to D^2."""
    centres = [values[rng.integers(len(values))]]
    d2 = (values - centres[0]) ** 2
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        i = rng.choice(len(values), p=d2 / total)
        centres.append(values[i])
        d2 = np.minimum(d2, (values - values[i]) ** 2)
    return np.unique(np.asarray(centres))


def lloyd_1d(values, k, rng, max_iter=MAX_LLOYD_ITERATIONS, init=None):
    """Lloyd's algorithm on scalars.

    Returns ``(centroids, labels, objectives)``, centroids sorted ascending, one
    objective value per completed iteration (non-increasing).  Requires at least
    ``k`` distinct values.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    distinct = np.unique(values)
    if len(distinct) < k:
        raise ConfigError(f"lloyd_1d: {len(distinct)} distinct values for {k} clusters")
    centroids = np.sort(seed_centroids(values, k, rng) if init is None else np.asarray(init, float))
    if len(centroids) < k:
        # duplicates drawn during seeding: top up with the worst-served points
        extra = [c for c in distinct if c not in set(centroids)]
        centroids = np.sort(np.concatenate([centroids, extra[:k - len(centroids)]]))
    labels = _assign(values, centroids)
    objectives = [kmeans_objective(values, centroids, labels)]
    for _ in range(max_iter):
        sums = np.bincount(labels, weights=values, minlength=k)
        counts = np.bincount(labels, minlength=k)
        new = np.where(counts > 0, sums / np.maximum(counts, 1), centroids)
        err = (values - new[labels]) ** 2
        for e in np.flatnonzero(counts == 0):
            # empty cluster: move it onto the worst-served value
            j = int(np.argmax(err))
            new[e] = values[j]
            err[values == values[j]] = 0.0
        order = np.argsort(new, kind="stable")
        relabel = np.empty(k, dtype=np.int64)
        relabel[order] = np.arange(k)
        centroids = new[order]
        new_labels = _assign(values, centroids)
        objectives.append(kmeans_objective(values, centroids, new_labels))
        stable = np.array_equal(new_labels, relabel[labels])
        labels = new_labels
        if stable:
            break
    return centroids, labels, objectives


def kmeans_quantize(values, bits, rng, shape=None):
    """Cluster a tensor's values into at most ``2**bits`` centroids."""
    values = np.asarray(values, dtype=np.float64)
    shape = values.shape if shape is None else shape
    flat = values.reshape(-1)
    n_distinct = len(np.unique(flat))
    eff = min(bits, int(math.floor(math.log2(n_distinct))))
    if eff < bits:
        log.info("quantize: %d distinct values, bits reduced %d -> %d", n_distinct, bits, eff)
    if eff == 0:
        return QuantizedTensor(0, flat[:1].copy(), np.zeros(flat.size, dtype=np.int64), shape)
    centroids, labels, _ = lloyd_1d(flat, 2 ** eff, rng)
    return QuantizedTensor(eff, centroids, labels, shape).canonicalize()


def quantize_kmeans(model, bits, seed=0, include=None):
    """Attach k-means QuantizedTensors to the selected parameters of ``model``.

    ``include(name, kind)`` selects tensors (default: every parameter tensor).
    Parameters become trainable through their codebooks; call
    :func:`nncomm.compression.retrain` afterwards for shared-codebook retraining.
    """
    if not 1 <= bits <= 16:
        raise ConfigError(f"bits must be in [1, 16], got {bits}")
    rng = np.random.default_rng(seed)
    for name, layer, key, value in model.named_parameters():
        if include is not None and not include(name, layer.kind):
            continue
        if name in model.masks:
            raise ConfigError(f"'{name}' is pruned; quantize the unpruned model instead")
        q = kmeans_quantize(value, bits, rng)
        model.quantized[name] = q
        model.set_param(name, q.dequantize())
    return model


def dequantize_model(model):
    """Drop codebooks, keeping the materialized (quantized-valued) weights."""
    model.quantized.clear()
    return model


# -- fixed codebooks -----------------------------------------------------------

def quantize_fixed(tensor, mode="sign", step=None, stochastic=False, rng=None):
    """Predefined-codebook quantization.

    ``sign`` maps to {-1, +1} (0 -> +1).  ``round`` snaps to multiples of
    ``step`` (ties to even) or, with ``stochastic=True``, rounds down/up with
    probability given by the fractional part, which is unbiased.
    """
    x = np.asarray(tensor, dtype=np.float64)
    if mode == "sign":
        idx = (x >= 0).astype(np.int64)
        return QuantizedTensor(1, np.array([-1.0, 1.0]), idx.reshape(-1), x.shape)
    if mode != "round":
        raise ConfigError(f"unknown fixed quantization mode {mode!r}")
    if step is None or step <= 0:
        raise ConfigError("round mode needs step > 0")
    scaled = x / step
    if stochastic:
        rng = rng if rng is not None else np.random.default_rng()
        lo = np.floor(scaled)
        grid = lo + (rng.random(x.shape) < (scaled - lo))
    else:
        grid = np.round(scaled)
    grid = grid.astype(np.int64).reshape(-1)
    g0 = int(grid.min()) if grid.size else 0
    span = int(grid.max()) - g0 + 1 if grid.size else 1
    bits = max(0, math.ceil(math.log2(span)))
    codebook = (g0 + np.arange(2 ** bits)) * step
    return QuantizedTensor(bits, codebook, grid - g0, x.shape)
