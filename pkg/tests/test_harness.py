import numpy as np
import pytest

from nncomm.datagen import DetectionSamples, gen_csi_splits
from nncomm.errors import ConfigError, DataError
from nncomm.harness import (ExperimentConfig, config_from_text, emit_report, eval_ber, nmse_db,
                            parse_steps, read_rows_csv, rows_to_csv, run_pipeline, wilson_interval)
from nncomm.harness.cli import main
from nncomm.harness.config import config_to_text, parse_snr_range
from nncomm.harness.metrics import count_bit_errors, eval_nmse
from nncomm.harness.pipeline import ResultRow
from nncomm.harness.report import nmse_table, plotdata_text


class Constant:
    def __init__(self, value):
        self.value = value

    def predict(self, x, batch_size=None):
        return np.full((len(x), 20), self.value)


class Oracle:
    """Returns the transmitted bits for the inputs it was built for."""

    def __init__(self, samples):
        self.samples = samples

    def predict(self, x, batch_size=None):
        return self.samples.bits


def samples(count, seed=0, k=20):
    rng = np.random.default_rng(seed)
    s = rng.choice([-1.0, 1.0], size=(count, k))
    return DetectionSamples(rng.standard_normal((count, 30)), s, np.ones(count), np.zeros(count))


# -- metrics -----------------------------------------------------------------------

def test_ber_perfect_predictor():
    d = samples(50)
    (point,) = eval_ber(Oracle(d), {10.0: d}).values()
    assert point.ber == 0.0 and point.low == 0.0 and point.high > 0


def test_ber_counts_mismatches():
    s = np.ones((1, 20))
    out = np.ones((1, 20))
    out[0, :3] = 0.2
    assert count_bit_errors(out, s) == 3
    assert count_bit_errors(out, s) / s.size == 0.15


def test_ber_tie_goes_to_minus_one():
    d = samples(5000, seed=1)
    (point,) = eval_ber(Constant(0.5), {8.0: d}).values()
    # every decision is -1, so errors = number of +1 symbols ~ Binomial(n, 1/2)
    n = d.s.size
    assert abs(point.ber - 0.5) < 3 * np.sqrt(0.25 / n)


def test_ber_empty_group():
    with pytest.raises(DataError):
        eval_ber(Constant(0.9), {8.0: samples(0)})


def test_wilson_interval():
    lo, hi = wilson_interval(10, 100)
    assert lo < 0.1 < hi
    assert (lo, hi) == pytest.approx((0.0552, 0.1744), abs=1e-4)
    lo, hi = wilson_interval(0, 1000)
    assert lo == 0.0 and hi == pytest.approx(3.8e-3, rel=0.02)


def test_nmse_examples():
    h = np.random.default_rng(0).standard_normal((10, 2, 4, 4))
    res = nmse_db(h, h)
    assert res.nmse_db == -100.0 and res.capped
    assert nmse_db(h, np.zeros_like(h)).nmse_db == pytest.approx(0.0, abs=1e-12)
    assert nmse_db(h, 0.5 * h).nmse_db == pytest.approx(10 * np.log10(0.25), abs=1e-12)
    assert nmse_db(h, 0.5 * h).nmse_db == pytest.approx(-6.0206, abs=1e-4)


def test_nmse_excludes_zero_norm_samples():
    h = np.random.default_rng(1).standard_normal((4, 2, 3, 3))
    h[1] = 0.0
    res = nmse_db(h, 0.5 * h)
    assert res.excluded == 1 and res.samples == 3


def test_eval_nmse_denormalizes():
    parts = gen_csi_splits("indoor_like", 0, sizes={"train": 8, "val": 2, "test": 4})

    class Identity:
        def predict(self, x, batch_size=None):
            return x

    assert eval_nmse(Identity(), parts["test"]).nmse_db < -100 + 1e-9


# -- config ------------------------------------------------------------------------

def test_parse_steps():
    steps = parse_steps("prune:0.01, quantize:9; distill:0.5, decompose:1")
    assert [s.descriptor for s in steps] == ["t=0.01", "B=9", "lambda=0.5", "r=1"]
    for bad in ("prune", "shrink:3", "quantize:2.5", "prune:x"):
        with pytest.raises(ConfigError):
            parse_steps(bad)


def test_parse_snr_range():
    assert parse_snr_range("8:13") == (8.0, 9.0, 10.0, 11.0, 12.0, 13.0)
    assert parse_snr_range("0:1:0.5") == (0.0, 0.5, 1.0)
    with pytest.raises(ConfigError):
        parse_snr_range("13:8")


def test_config_roundtrip():
    text = """
[experiment]
task = csi_feedback
seed = 7

[data]
scenario = outdoor_like
train = 100

[compression]
steps = prune:0.05, quantize:4

[eval]
crs = 4, 32
"""
    cfg = config_from_text(text)
    assert cfg.architecture == "csinet_plus_like"
    assert cfg.crs == (4, 32) and cfg.sizes == {"train": 100}
    assert config_from_text(config_to_text(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "[experiment]\ntask = regression\n",
    "[experiment]\nseed = x\n",
    "[model]\narchitecture = convcsinet\n",
    "[bogus]\na = 1\n",
    "[eval]\ncrs = 5\n",
    "[experiment]\ntask = csi_feedback\n[eval]\ncrs = 5\n",
    "[compression]\nsteps = decompose:1\n",
    "[data]\npath = /does/not/exist.nncd\n",
    "no section header\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        config_from_text(text)


def test_csinet_pruning_targets_dense_only():
    cfg = ExperimentConfig(task="csi_feedback")
    keep = cfg.layer_filter("prune")
    assert keep("enc_fc.weight", "dense") and not keep("enc_conv1.weight", "conv2d")
    assert cfg.layer_filter("quantize") is None


# -- pipeline and report -----------------------------------------------------------

TINY = """
[experiment]
task = detection
seed = 1

[data]
train = 600
val = 200
test = 100

[model]
hidden_layers = 1

[train]
max_epochs = 2
batch_size = 200
"""


def tiny_cfg(steps=""):
    return config_from_text(TINY + f"\n[compression]\nsteps = {steps}\n")


def test_empty_plan_gives_baseline_rows():
    res = run_pipeline(tiny_cfg())
    assert len(res.rows) == 6
    assert {r.descriptor for r in res.rows} == {"baseline"}
    assert [r.coordinate for r in res.rows] == [8.0, 9.0, 10.0, 11.0, 12.0, 13.0]


def test_threshold_sweep_row_count(tmp_path):
    res = run_pipeline(tiny_cfg("prune:0.01, prune:0.025, prune:0.05, prune:0.075, prune:0.1"),
                       tmp_path)
    assert len(res.rows) == 36
    descs = list(dict.fromkeys(r.descriptor for r in res.rows))
    assert descs == ["baseline", "t=0.01", "t=0.025", "t=0.05", "t=0.075", "t=0.1"]
    rem = [res.rows[6 * i].remaining for i in range(1, 6)]
    assert all(a > b for a, b in zip(rem, rem[1:]))
    assert (tmp_path / "models" / "t0.1.nncm").exists()
    assert (tmp_path / "costs" / "t0.05.csv").exists()
    assert (tmp_path / "ber_vs_snr.dat").read_text().startswith("# x baseline t=0.01")


def test_rerun_is_byte_identical(tmp_path):
    cfg = tiny_cfg("prune:0.05, quantize:3, distill:0.5")
    run_pipeline(cfg, tmp_path / "a")
    run_pipeline(cfg, tmp_path / "b")
    for name in ("results.csv", "ber_vs_snr.dat", "models/B3.nncm", "costs/lambda0.5.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_roundtrip_and_report(tmp_path):
    rows = [ResultRow("NMSE_dB", 4.0, "baseline", -12.5, 100, 0),
            ResultRow("NMSE_dB", 32.0, "baseline", -4.25, 100, 0),
            ResultRow("NMSE_dB", 4.0, "t=0.05", -12.0, 100, 0, remaining=0.4123),
            ResultRow("NMSE_dB", 32.0, "t=0.05", -4.5, 100, 0, remaining=0.5)]
    text = rows_to_csv(rows)
    assert text.startswith("metric,coordinate,descriptor,value,low,high,samples,seed")
    path = tmp_path / "rows.csv"
    path.write_text(text, newline="")
    assert read_rows_csv(path) == rows
    table = nmse_table(rows)
    assert "-12.00(41.23%)" in table and "-4.50(50.00%)" in table
    assert plotdata_text(rows, "NMSE_dB").splitlines() == [
        "# x baseline t=0.05", "4 -12.5 -12.0", "32 -4.25 -4.5"]
    files = emit_report(rows, {}, "plotdata", tmp_path / "plots")
    assert sorted(p.rsplit("/", 1)[1] for p in files) == ["nmse_table.txt", "nmse_vs_cr.dat"]


def test_empty_report_writes_nothing(tmp_path):
    with pytest.raises(DataError):
        emit_report([], {}, "csv", tmp_path / "none")
    assert not (tmp_path / "none").exists()


# -- CLI -----------------------------------------------------------------------------

def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\ntask = nope\n")
    assert main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["report", "--results", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 3
    assert main(["pipeline", "--cr", "x", "--out", str(tmp_path / "o")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_numeric_failure(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.replace("[train]", "[train]\nlearning_rate = 1e308"))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_cli_stage_commands(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY)
    out = tmp_path / "o"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "test_snr13_s.nncd").exists()
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    base = out / "baseline.nncm"
    assert main(["prune", "--config", str(cfg), "--model", str(base), "--threshold", "0.05",
                 "--out", str(out)]) == 0
    assert main(["quantize", "--config", str(cfg), "--model", str(base), "--bits", "4",
                 "--out", str(out)]) == 0
    assert main(["decompose", "--config", str(cfg), "--model", str(base), "--rank", "1",
                 "--out", str(out)]) == 2
    assert main(["eval", "--config", str(cfg), "--model", str(out / "baseline_B4.nncm"),
                 "--out", str(out / "eval")]) == 0
    rows = read_rows_csv(out / "eval" / "results.csv")
    assert {r.descriptor for r in rows} == {"B=4"}
    assert main(["report", "--results", str(out / "eval" / "results.csv"),
                 "--out", str(out / "plots")]) == 0
    assert (out / "plots" / "ber_vs_snr.dat").exists()


def test_cli_pipeline_flags(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY)
    assert main(["pipeline", "--config", str(cfg), "--snr", "8:9", "--threshold", "0.05",
                 "--bits", "5", "--seed", "3", "--out", str(tmp_path / "o")]) == 0
    rows = read_rows_csv(tmp_path / "o" / "results.csv")
    assert [r.descriptor for r in rows] == ["baseline"] * 2 + ["t=0.05"] * 2 + ["B=5"] * 2
    assert {r.seed for r in rows} == {3}
    assert (tmp_path / "o" / "config.ini").exists()
