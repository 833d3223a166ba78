"""
MIMO detection: BER versus SNR under pruning and quantization
=============================================================

Runs the experiment pipeline on a reduced detection configuration: train the
FullyCon detector, prune and quantize copies of it, retrain each, and tabulate
BER over 8..13 dB with Wilson intervals.  The same run is available from the
command line as

    python3 -m nncomm pipeline --config configs/detection_case.ini --out results/detection

which uses the full-size configuration (about 15 minutes).
"""
import sys
import tempfile

from nncomm.harness import config_from_text, run_pipeline
from nncomm.harness.report import plotdata_text

CONFIG = """
[experiment]
task = detection
seed = 0
small = true

[train]
max_epochs = 60
retrain_max_epochs = 15

[compression]
steps = prune:0.025, prune:0.1, quantize:9, quantize:5, quantize:3
"""

cfg = config_from_text(CONFIG)
out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="nncomm_detection_")
result = run_pipeline(cfg, out)

# %% BER table, one column per model (rows: SNR in dB)
print(plotdata_text(result.rows, "BER"))

# %% 95% Wilson intervals at the highest SNR
for r in result.rows:
    if r.coordinate == max(cfg.snrs):
        print(f"{r.descriptor:>9}: BER {r.value:.2e}  [{r.low:.2e}, {r.high:.2e}]  "
              f"remaining {r.remaining:.3f}  {r.storage_bytes} B")
print("results, costs and model files in", out)
