"""BER and NMSE evaluators."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..errors import DataError

log = logging.getLogger(__name__)

NMSE_FLOOR_DB = -100.0


def wilson_interval(errors, total, confidence=0.95):
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise DataError("Wilson interval needs at least one trial")
    z = norm.ppf(0.5 + confidence / 2.0)
    p = errors / total
    denom = 1.0 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    low = 0.0 if errors == 0 else max(0.0, centre - half)
    high = 1.0 if errors == total else min(1.0, centre + half)
    return float(low), float(high)


@dataclass
class BerPoint:
    snr_db: float
    errors: int
    bits: int
    low: float
    high: float

    @property
    def ber(self):
        return self.errors / self.bits

    def overlaps(self, other):
        return self.low <= other.high and other.low <= self.high


def hard_decisions(outputs):
    """+1 where the detector output exceeds 0.5, else -1."""
    return np.where(np.asarray(outputs) > 0.5, 1.0, -1.0)


def count_bit_errors(outputs, symbols):
    return int(np.count_nonzero(hard_decisions(outputs) != np.asarray(symbols)))


def eval_ber(model, groups, batch_size=10_000):
    """BER per SNR for ``groups = {snr: DetectionSamples}``; returns ``{snr: BerPoint}``."""
    out = {}
    for snr, samples in groups.items():
        if len(samples) == 0:
            raise DataError(f"empty sample group at SNR {snr} dB")
        errors = count_bit_errors(model.predict(samples.y, batch_size), samples.s)
        bits = samples.s.size
        out[snr] = BerPoint(float(snr), errors, bits, *wilson_interval(errors, bits))
    return out


@dataclass
class NmseResult:
    nmse_db: float
    samples: int
    excluded: int
    capped: bool


def nmse_db(truth, estimate):
    """``10 log10(mean ||H - H_hat||^2 / ||H||^2)`` over samples with non-zero ``H``."""
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise DataError(f"NMSE shape mismatch {truth.shape} vs {estimate.shape}")
    axes = tuple(range(1, truth.ndim))
    power = np.sum(truth ** 2, axis=axes)
    keep = power > 0
    excluded = int(np.count_nonzero(~keep))
    if excluded:
        log.warning("NMSE: %d zero-norm samples excluded", excluded)
    if not keep.any():
        raise DataError("NMSE: every sample has zero norm")
    err = np.sum((truth - estimate) ** 2, axis=axes)[keep] / power[keep]
    mean = float(np.mean(err))
    value = 10.0 * np.log10(mean) if mean > 0 else -np.inf
    capped = value < NMSE_FLOOR_DB
    return NmseResult(max(value, NMSE_FLOOR_DB), int(keep.sum()), excluded, bool(capped))


def eval_nmse(model, data, batch_size=500):
    """NMSE of an autoencoder on a :class:`~nncomm.datagen.CsiDataset`, in de-normalized units."""
    recon = model.predict(data.normalized, batch_size)
    return nmse_db(data.raw, data.denormalize(recon))
