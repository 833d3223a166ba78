"""
CSI feedback: autoencoder size and reconstruction NMSE
======================================================

Compares the weight budgets of the three CSI autoencoders across compression
rates, then trains the CsiNet+-like model briefly at CR 32 on synthetic
indoor-like channels and shows how k-means bit width affects NMSE.  The
full case study is

    python3 -m nncomm pipeline --config configs/csi_case.ini --out results/csi

(about an hour on one core).
"""
import numpy as np

from nncomm.accounting import count_flops, count_weights
from nncomm.compression import quantize_kmeans, retrain
from nncomm.datagen import energy_concentration, gen_csi_splits
from nncomm.harness import eval_nmse
from nncomm.training import Schedule, fit
from nncomm.zoo import (SUPPORTED_CRS, FeedbackConfig, build_convcsinet, build_convsqucsinet,
                        build_csinet_plus_like)

# %% Weights and FLOPs per architecture and CR
print(f"{'CR':>3} {'csinet+like':>12} {'convcsinet':>11} {'convsqu':>9} {'squ/conv':>9}")
for cr in SUPPORTED_CRS:
    cfg = FeedbackConfig(cr)
    w = [count_weights(b(cfg)) for b in (build_csinet_plus_like, build_convcsinet,
                                         build_convsqucsinet)]
    print(f"{cr:>3} {w[0]:>12} {w[1]:>11} {w[2]:>9} {w[2] / w[1]:>9.3f}")
cfg = FeedbackConfig(32)
print("FLOPs per sample at CR 32:",
      {b.__name__[6:]: count_flops(b(cfg)) for b in (build_csinet_plus_like, build_convsqucsinet)})

# %% Synthetic angular-delay data: a few strong bins per sample
data = gen_csi_splits("indoor_like", seed=0, sizes={"train": 1000, "val": 200, "test": 200})
print("median top-32-bin energy share:", np.median(energy_concentration(data["train"].raw)))

# %% Short training run at CR 32
x, v = data["train"].normalized, data["val"].normalized
model = build_csinet_plus_like(cfg, seed=0)
fit(model, x, x, Schedule(1e-3, 20, 15), loss="mse", val=(v, v))
print(f"baseline NMSE {eval_nmse(model, data['test']).nmse_db:.2f} dB")

# %% k-means on every tensor, codebooks retrained for a few epochs
for bits in (6, 4, 2):
    m = model.copy()
    quantize_kmeans(m, bits, seed=0)
    retrain(m, x, x, Schedule(1e-4, 20, 3), loss="mse", val=(v, v))
    print(f"B={bits}: NMSE {eval_nmse(m, data['test']).nmse_db:.2f} dB")
