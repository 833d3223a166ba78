"""
The compression toolbox on a small detector
===========================================

Trains a FullyCon detector on a 30x20 BPSK channel, then compresses copies
of it four ways: magnitude pruning, k-means weight sharing, distillation
into a shallower student and (on a conv model) low-rank kernel splitting.
Each result is written to disk and its file size compared with the
accounting prediction.  Takes a couple of minutes on one core.
"""
import os
import tempfile

import numpy as np

from nncomm.accounting import count_weights, index_only_saving, storage_bytes, storage_saving
from nncomm.compression import (decompose_model, distill_train, prune_magnitude, quantize_kmeans,
                                retrain)
from nncomm.datagen import gen_channel, gen_detection_dataset
from nncomm.harness import eval_ber
from nncomm.persistence import save_model
from nncomm.training import Schedule, fit
from nncomm.zoo import DetectionConfig, FeedbackConfig, build_convcsinet, build_fullycon

out = tempfile.mkdtemp(prefix="nncomm_demo_")
h = gen_channel(30, 20, seed=0)
train = gen_detection_dataset(h, 20_000, (8.0, 13.0), 1)
val = gen_detection_dataset(h, 4_000, (8.0, 13.0), 2)
test = {snr: gen_detection_dataset(h, 5_000, snr, 3 + i) for i, snr in enumerate((8.0, 13.0))}


def ber_line(model):
    return "  ".join(f"{snr:g} dB: {p.ber:.2e}" for snr, p in eval_ber(model, test).items())


# %% Baseline
base = build_fullycon(DetectionConfig(hidden_layers=2), seed=0)
fit(base, train.y, train.bits, Schedule(1e-3, 500, 40), loss="bce", val=(val.y, val.bits))
print("baseline      ", ber_line(base), f" weights={count_weights(base)}")

# %% Pruning: zero every weight with |w| < t, then retrain with the mask fixed.
for t in (0.02, 0.05, 0.1):
    m = base.copy()
    report = prune_magnitude(m, t)
    retrain(m, train.y, train.bits, Schedule(1e-4, 500, 10), loss="bce", val=(val.y, val.bits))
    path = os.path.join(out, f"pruned_{t}.nncm")
    size = save_model(m, "sparse_bitmask", path)
    print(f"prune t={t:<5}", ber_line(m), f" kept={report.remaining_fraction:.3f}",
          f" file={size} B (payload {storage_bytes(m, 'sparse_bitmask')} B)")

# %% k-means weight sharing: one 2^B codebook per tensor, indices bit-packed.
for bits in (8, 5, 3):
    m = base.copy()
    quantize_kmeans(m, bits, seed=0)
    retrain(m, train.y, train.bits, Schedule(1e-4, 500, 10), loss="bce", val=(val.y, val.bits))
    size = save_model(m, "quantized", os.path.join(out, f"b{bits}.nncm"))
    print(f"k-means B={bits}   ", ber_line(m), f" saving={100 * storage_saving(m, 'quantized'):.2f}%",
          f"(index-only bound {100 * index_only_saving(bits):.3f}%)", f" file={size} B")

# %% Distillation: a 1-hidden-layer student fitted to a mix of teacher and true targets.
student = build_fullycon(DetectionConfig(hidden_layers=1), seed=5)
distill_train(base, student, train.y, train.bits, lam=0.5, schedule=Schedule(1e-3, 500, 40),
              val=(val.y, val.bits))
print("student       ", ber_line(student), f" weights={count_weights(student)}")

# %% Low rank: every KxK conv becomes a (Kx1) conv followed by a (1xK) conv.
conv = build_convcsinet(FeedbackConfig(16), seed=0)
split, report = decompose_model(conv, rank=1)
x = np.random.default_rng(0).random((4, 2, 32, 32))
gap = np.max(np.abs(split.predict(x) - conv.predict(x)))
print(f"ConvCsiNet weights {count_weights(conv)} -> {count_weights(split)} after rank-1 split;"
      f" max output change before retraining {gap:.3f}")
print("model files written to", out)
