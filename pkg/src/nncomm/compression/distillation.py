"""Teacher-student training on a mix of soft (teacher) and hard targets."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..losses import get_loss
from ..training import Schedule, fit


def teacher_outputs(teacher, x, batch_size=1000):
    """Outputs of a single teacher, or the mean over an ensemble (list of models)."""
    members = teacher if isinstance(teacher, (list, tuple)) else [teacher]
    return np.mean([m.predict(x, batch_size) for m in members], axis=0)


def mixed_loss(base, lam):
    """``lam * loss(pred, soft) + (1 - lam) * loss(pred, hard)``; targets stacked on axis 1."""
    base = get_loss(base) if isinstance(base, str) else base

    def loss(pred, targets):
        soft_v, soft_g = base(pred, targets[:, 0])
        hard_v, hard_g = base(pred, targets[:, 1])
        return lam * soft_v + (1.0 - lam) * hard_v, lam * soft_g + (1.0 - lam) * hard_g

    return loss


def distill_train(teacher, student, x, y, lam=0.5, schedule=None, loss="bce", val=None):
    """Train ``student`` in place against frozen teacher outputs mixed with true targets.

    Validation loss (for early stopping) is measured against the true targets only.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixing weight must be in [0, 1], got {lam}")
    members = teacher if isinstance(teacher, (list, tuple)) else [teacher]
    for m in members:
        if m.input_shape != student.input_shape or m.output_shape != student.output_shape:
            raise ConfigError(
                f"teacher {m.input_shape}->{m.output_shape} vs student "
                f"{student.input_shape}->{student.output_shape}"
            )
    soft = teacher_outputs(teacher, x)
    targets = np.stack([soft, np.asarray(y, dtype=np.float64)], axis=1)
    return fit(student, x, targets, schedule or Schedule(), loss=mixed_loss(loss, lam), val=val,
               val_loss=loss)
