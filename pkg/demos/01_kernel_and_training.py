"""
Layers, gradients and a first training run
==========================================

Builds a tiny conv + dense classifier, checks its backward pass against
central differences, then trains it with Adam on a toy problem.
Run with ``python3 demos/01_kernel_and_training.py``.
"""
import numpy as np

from nncomm.accounting import cost_report
from nncomm.graph import ModelGraph
from nncomm.layers import Conv2d, Dense, ReLU, Reshape, Sigmoid
from nncomm.training import Schedule, fit

rng = np.random.default_rng(0)

# %% A model is an ordered list of layers plus the per-sample input shape.
model = ModelGraph([Conv2d(1, 4, 3), ReLU(), Reshape((4 * 6 * 6,)), Dense(144, 1), Sigmoid()],
                   (1, 6, 6), name="blob_detector").init_params(rng)
print(model.summary())

# %% Gradient check: d/dtheta of sum(w * f(x)) against central differences.
x = rng.standard_normal((3, 1, 6, 6))
w = rng.standard_normal((3, 1))
model.forward(x)
model.backward(w)
analytic = {k: v.copy() for k, v in model.grads().items()}
name = "conv2d1.weight"
param = model.get_param(name)
numeric = np.zeros_like(param)
h = 1e-5
for idx in np.ndindex(param.shape):
    old = param[idx]
    param[idx] = old + h
    up = np.sum(w * model.forward(x))
    param[idx] = old - h
    down = np.sum(w * model.forward(x))
    param[idx] = old
    numeric[idx] = (up - down) / (2 * h)
err = np.max(np.abs(numeric - analytic[name])) / np.max(np.abs(numeric))
print(f"relative gradient error on {name}: {err:.2e}")

# %% Toy task: is there a bright 2x2 blob in the image?
n = 2000
images = 0.3 * rng.standard_normal((n, 1, 6, 6))
labels = rng.random(n) < 0.5
for i in np.flatnonzero(labels):
    r, c = rng.integers(0, 5, size=2)
    images[i, 0, r:r + 2, c:c + 2] += 1.5
targets = labels[:, None].astype(float)

history = fit(model, images[:1500], targets[:1500], Schedule(1e-2, 100, 30, 5),
              loss="bce", val=(images[1500:], targets[1500:]))
acc = np.mean((model.predict(images[1500:]) > 0.5) == targets[1500:])
print(f"{history.epochs} epochs, best val BCE {history.best_val:.4f}, accuracy {acc:.3f}")

# %% Every model carries a cost report: weights, FLOPs and bytes per layer.
print(cost_report(model).to_csv())
