"""Minibatch training with patience-based early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .losses import get_loss
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    """How long and how fast to train.

    Training stops once the validation loss has failed to improve by at least
    ``min_rel_improvement`` (relative) for ``patience`` consecutive epochs, or
    after ``max_epochs``.  The best-validation parameters are restored.
    """

    learning_rate: float = 1e-3
    batch_size: int = 1000
    max_epochs: int = 200
    patience: int = 10
    min_rel_improvement: float = 1e-4
    seed: int = 0


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    stopped: str = ""

    @property
    def epochs(self):
        return len(self.train_loss)


def evaluate_loss(model, x, y, loss="mse", batch_size=1000):
    loss_fn = get_loss(loss) if isinstance(loss, str) else loss
    pred = model.predict(x, batch_size)
    return loss_fn(pred, y)[0]


def train_steps(model, x, y, loss_fn, optimizer, batch_size, rng):
    """One epoch of shuffled minibatch steps; returns the mean batch loss."""
    order = rng.permutation(len(x))
    total = 0.0
    params = model.trainable()
    for i in range(0, len(x), batch_size):
        idx = order[i:i + batch_size]
        pred = model.forward(x[idx])
        value, grad = loss_fn(pred, y[idx])
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss in '{model.name}'")
        model.backward(grad)
        optimizer.step(params, model.trainable_grads())
        model.sync()
        total += value * len(idx)
    model.clear_cache()
    return total / len(x)


def fit(model, x, y, schedule=None, loss="mse", val=None, val_loss=None, callback=None):
    """Train ``model`` in place.

    ``loss`` is a name (``"mse"``/``"bce"``) or a callable ``(pred, target) ->
    (value, grad)``; ``val_loss`` defaults to the same.  Without ``val`` the
    training loss drives early stopping.  Masks and quantized codebooks attached
    to the model are honoured at every step.
    """
    schedule = schedule or Schedule()
    if len(x) == 0 or len(x) != len(y):
        raise DataError(f"fit: {len(x)} inputs vs {len(y)} targets")
    loss_fn = get_loss(loss) if isinstance(loss, str) else loss
    vloss_fn = loss_fn if val_loss is None else (get_loss(val_loss) if isinstance(val_loss, str) else val_loss)
    rng = np.random.default_rng(schedule.seed)
    optimizer = Adam(schedule.learning_rate)
    history = History()
    best_state = model.state()
    stale = 0
    for epoch in range(schedule.max_epochs):
        tl = train_steps(model, x, y, loss_fn, optimizer, schedule.batch_size, rng)
        vl = evaluate_loss(model, *val, vloss_fn, schedule.batch_size) if val is not None else tl
        if not np.isfinite(vl):
            raise NumericError(f"non-finite validation loss in '{model.name}' at epoch {epoch}")
        history.train_loss.append(tl)
        history.val_loss.append(vl)
        if callback is not None:
            callback(epoch, tl, vl)
        if vl < history.best_val * (1.0 - np.sign(history.best_val) * schedule.min_rel_improvement) \
                or not np.isfinite(history.best_val):
            history.best_val, history.best_epoch = vl, epoch
            best_state = model.state()
            stale = 0
        else:
            stale += 1
            if stale >= schedule.patience:
                history.stopped = "patience"
                break
    else:
        history.stopped = "epoch_cap"
    model.load_state(best_state)
    model.sync()
    log.info("fit %s: %d epochs (%s), best val %.6g at epoch %d, seed %d", model.name,
             history.epochs, history.stopped, history.best_val, history.best_epoch, schedule.seed)
    return history
