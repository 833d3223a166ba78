"""Magnitude pruning (fine-grained and filter-level) and masked retraining."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..training import Schedule, fit

log = logging.getLogger(__name__)

GRANULARITIES = ("fine_grained", "filter_level")


@dataclass
class PruneMask:
    masks: dict
    granularity: str
    threshold: float

    @property
    def remaining(self):
        return {n: float(m.mean()) for n, m in self.masks.items()}


@dataclass
class PruneReport:
    threshold: float
    granularity: str
    remaining: dict = field(default_factory=dict)
    kept: int = 0
    total: int = 0

    @property
    def remaining_fraction(self):
        return self.kept / self.total if self.total else 1.0

    @property
    def pruned_fraction(self):
        return 1.0 - self.remaining_fraction


def weights_only(name, kind):
    return not name.endswith("bias")


def dense_weights_only(name, kind):
    return kind == "dense" and not name.endswith("bias")


def prune_magnitude(model, threshold, granularity="fine_grained", include=weights_only):
    """Zero small-magnitude weights and attach boolean masks to ``model``.

    Fine-grained keeps ``|w| >= t``.  Filter-level drops whole output filters
    (conv output channels, dense output rows) whose mean absolute weight is
    below ``t``.  Biases are never pruned.  Returns a :class:`PruneReport`.
    """
    if threshold < 0:
        raise ConfigError(f"pruning threshold must be >= 0, got {threshold}")
    if granularity not in GRANULARITIES:
        raise ConfigError(f"granularity must be one of {GRANULARITIES}")
    report = PruneReport(threshold, granularity)
    for name, layer, key, value in model.named_parameters():
        if model.is_bias(name) or not include(name, layer.kind):
            continue
        if granularity == "fine_grained":
            mask = np.abs(value) >= threshold
        else:
            per_filter = np.abs(value).reshape(value.shape[0], -1).mean(axis=1)
            keep = per_filter >= threshold
            mask = np.broadcast_to(keep.reshape(-1, *[1] * (value.ndim - 1)), value.shape).copy()
        if name in model.masks:
            mask &= model.masks[name]
        if not mask.any():
            warnings.warn(f"threshold {threshold} removes every weight of '{name}'; keeping the largest")
            mask.flat[int(np.argmax(np.abs(value)))] = True
        model.masks[name] = mask
        value[~mask] = 0.0
        report.remaining[name] = float(mask.mean())
        report.kept += int(mask.sum())
        report.total += mask.size
    model.metadata.setdefault("compression", []).append(
        {"step": "prune", "threshold": threshold, "granularity": granularity})
    log.info("prune t=%g (%s): %.4f of selected weights remain", threshold, granularity,
             report.remaining_fraction)
    return report


def retrain(model, x, y, schedule=None, loss="mse", val=None):
    """Retrain a compressed model; masks and codebooks are respected at every step."""
    history = fit(model, x, y, schedule or Schedule(learning_rate=1e-4), loss=loss, val=val)
    for q in model.quantized.values():
        q.canonicalize()
    model.sync()
    return history


retrain_masked = retrain
