"""Mean-reduced losses returning ``(value, d value / d prediction)``."""
import numpy as np

from .errors import DimensionError

BCE_CLAMP = 1e-12


class ClampCounter:
    """Counts BCE predictions that fell outside ``[1e-12, 1 - 1e-12]``."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


bce_clamped = ClampCounter()


def _check(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target):
    pred, target = _check(pred, target)
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def bce(pred, target):
    """Binary cross-entropy; ``target`` may be soft (in [0, 1])."""
    pred, target = _check(pred, target)
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce_clamped.count += int(np.count_nonzero(p != pred))
    value = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    return float(value), grad


LOSSES = {"mse": mse, "bce": bce}


def get_loss(kind):
    try:
        return LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; choose from {sorted(LOSSES)}") from None
