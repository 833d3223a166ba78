"""Train, compress, retrain and evaluate as declared by an ExperimentConfig."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..accounting import cost_report, count_weights
from ..compression import (decompose_model, distill_train, prune_magnitude, quantize_kmeans,
                           retrain, weights_only)
from ..datagen import (CsiDataset, gen_channel, gen_csi_splits, gen_detection_splits,
                       load_external_dataset, save_dataset, split_sizes)
from ..errors import DataError, NNCommError
from ..persistence import save_model
from ..training import fit
from ..zoo import BUILDERS, DetectionConfig, FeedbackConfig
from .config import ExperimentConfig, Step
from .metrics import eval_ber, eval_nmse

log = logging.getLogger(__name__)

MIN_BER_BITS = 100_000
REPRESENTATION = {"prune": "sparse_bitmask", "quantize": "quantized",
                  "distill": "dense32", "decompose": "dense32"}


@dataclass
class ResultRow:
    """One evaluated point: a BER at an SNR or an NMSE at a CR."""

    metric: str
    coordinate: float
    descriptor: str
    value: float
    samples: int
    seed: int
    low: float | None = None
    high: float | None = None
    remaining: float = 1.0
    storage_bytes: int = 0

    def __post_init__(self):
        if self.metric == "BER" and not 0.0 <= self.value <= 0.5 + 1e-9:
            # a detector worse than chance still gets reported, but loudly
            log.warning("BER %.4f outside [0, 0.5] at %s (%s)", self.value, self.coordinate,
                        self.descriptor)
        if self.metric == "NMSE_dB" and not math.isfinite(self.value):
            raise DataError(f"non-finite NMSE at CR {self.coordinate} ({self.descriptor})")


@dataclass
class PipelineResult:
    rows: list = field(default_factory=list)
    cost_reports: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)


# -- data ----------------------------------------------------------------------

@dataclass
class DetectionData:
    channel: np.ndarray
    train: object
    val: object
    test: dict


def detection_sizes(cfg: ExperimentConfig):
    sizes = {**split_sizes("detection", cfg.small), **cfg.sizes}
    if "test" not in cfg.sizes:
        sizes["test"] = max(sizes["test"], math.ceil(MIN_BER_BITS / cfg.k))
    return sizes


def prepare_detection(cfg: ExperimentConfig):
    channel = gen_channel(cfg.n, cfg.k, cfg.channel_seed)
    train, val, test = gen_detection_splits(channel, cfg.snrs, cfg.seed, sizes=detection_sizes(cfg))
    return DetectionData(channel, train, val, test)


def _split_external(cfg: ExperimentConfig):
    loaded = load_external_dataset(cfg.data_path, expected_shape=(2, 32, 32))
    raw = loaded.array
    if loaded.normalized:
        raw = raw * (loaded.hi - loaded.lo) + loaded.lo
    n = len(raw)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    if min(n_train, n_val, n - n_train - n_val) <= 0:
        raise DataError(f"external dataset has only {n} samples")
    train = raw[:n_train]
    lo, hi = float(train.min()), float(train.max())
    meta = {"source": os.path.basename(cfg.data_path)}
    return {"train": CsiDataset(train, lo, hi, meta),
            "val": CsiDataset(raw[n_train:n_train + n_val], lo, hi, meta),
            "test": CsiDataset(raw[n_train + n_val:], lo, hi, meta)}


def prepare_csi(cfg: ExperimentConfig):
    if cfg.data_path:
        return _split_external(cfg)
    sizes = {**split_sizes("csi", cfg.small), **cfg.sizes}
    return gen_csi_splits(cfg.scenario, cfg.seed, sizes=sizes)


def prepare_data(cfg: ExperimentConfig):
    return prepare_detection(cfg) if cfg.task == "detection" else prepare_csi(cfg)


def training_arrays(cfg, data):
    """``(x, y, (x_val, y_val), loss)`` for the task."""
    if cfg.task == "detection":
        return data.train.y, data.train.bits, (data.val.y, data.val.bits), "bce"
    tr, va = data["train"].normalized, data["val"].normalized
    return tr, tr, (va, va), "mse"


# -- models --------------------------------------------------------------------

def build_model(cfg: ExperimentConfig, cr=None, seed=None, architecture=None, hidden_layers=None):
    seed = cfg.seed if seed is None else seed
    arch = architecture or cfg.architecture
    if cfg.task == "detection":
        dcfg = DetectionConfig(cfg.n, cfg.k, hidden_layers or cfg.hidden_layers)
        return BUILDERS[arch](dcfg, seed)
    return BUILDERS[arch](FeedbackConfig(cr), seed)


def train_baseline(cfg, data, cr=None):
    model = build_model(cfg, cr)
    x, y, val, loss = training_arrays(cfg, data)
    history = fit(model, x, y, cfg.schedule(), loss=loss, val=val)
    model.metadata["training"] = {"epochs": history.epochs, "best_val": history.best_val,
                                  "seed": cfg.seed}
    return model, history


def apply_step(cfg, step: Step, baseline, data, cr=None, stage_seed=1):
    """Compress a copy of ``baseline`` by ``step`` and retrain; returns ``(model, remaining)``.

    ``remaining`` is the fraction of compressible weights kept (pruning) or the
    weight-count ratio to the baseline (distillation, decomposition).
    """
    x, y, val, loss = training_arrays(cfg, data)
    include = cfg.layer_filter(step.kind)
    if step.kind == "prune":
        model = baseline.copy()
        report = prune_magnitude(model, step.value, cfg.granularity, include or weights_only)
        retrain(model, x, y, cfg.retrain_schedule(stage_seed), loss=loss, val=val)
        return model, report.remaining_fraction
    if step.kind == "quantize":
        model = baseline.copy()
        quantize_kmeans(model, int(step.value), seed=cfg.seed + stage_seed, include=include)
        retrain(model, x, y, cfg.retrain_schedule(stage_seed), loss=loss, val=val)
        return model, 1.0
    if step.kind == "distill":
        if cfg.task == "detection":
            student = build_model(cfg, seed=cfg.seed + stage_seed,
                                  hidden_layers=cfg.student_hidden_layers)
        else:
            student = build_model(cfg, cr, seed=cfg.seed + stage_seed,
                                  architecture=cfg.student_architecture)
        student.name = f"{student.name}_student"
        distill_train(baseline, student, x, y, lam=step.value, schedule=cfg.schedule(stage_seed),
                      loss=loss, val=val)
        return student, count_weights(student) / count_weights(baseline)
    if step.kind == "decompose":
        model, _ = decompose_model(baseline, int(step.value))
        retrain(model, x, y, cfg.retrain_schedule(stage_seed), loss=loss, val=val)
        return model, count_weights(model) / count_weights(baseline)
    raise NNCommError(f"unknown step kind {step.kind!r}")


def evaluate(cfg, model, data, descriptor, cr=None, remaining=1.0, storage=0):
    if cfg.task == "detection":
        points = eval_ber(model, data.test)
        return [ResultRow("BER", p.snr_db, descriptor, p.ber, p.bits, cfg.seed, p.low, p.high,
                          remaining, storage) for p in points.values()]
    res = eval_nmse(model, data["test"])
    return [ResultRow("NMSE_dB", float(cr), descriptor, res.nmse_db, res.samples, cfg.seed,
                      remaining=remaining, storage_bytes=storage)]


# -- driver --------------------------------------------------------------------

def _artifact_name(cfg, cr, descriptor):
    tag = descriptor.replace("=", "")
    return f"cr{cr}_{tag}" if cfg.task == "csi_feedback" else tag


def run_pipeline(cfg: ExperimentConfig, out_dir=None, data=None):
    """Baseline first, then each compression step from the trained baseline.

    With ``out_dir`` the model files, cost reports, ``results.csv``, plot data
    and (for detection) the channel matrix are written there.  A failing stage re-raises with the stage name after
    writing whatever rows were produced so far to ``results.partial.csv``.
    """
    from .report import emit_report, write_rows_csv

    result = PipelineResult()
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
    stage = "gen-data"
    try:
        data = data if data is not None else prepare_data(cfg)
        if out_dir is not None and cfg.task == "detection":
            # the fixed channel travels with the results it produced
            path = os.path.join(out_dir, "channel.nncd")
            save_dataset(path, data.channel)
            result.artifacts.append(path)
        coordinates = [None] if cfg.task == "detection" else list(cfg.crs)
        for cr in coordinates:
            stage = "train" if cr is None else f"train cr={cr}"
            baseline, _ = train_baseline(cfg, data, cr)
            _record(cfg, result, out_dir, cr, "baseline", baseline, "dense32", 1.0, data)
            for i, step in enumerate(cfg.steps, start=1):
                stage = f"{step.kind} {step.descriptor}" + ("" if cr is None else f" cr={cr}")
                model, remaining = apply_step(cfg, step, baseline, data, cr, stage_seed=i)
                _record(cfg, result, out_dir, cr, step.descriptor, model,
                        REPRESENTATION[step.kind], remaining, data)
    except NNCommError as exc:
        if out_dir is not None and result.rows:
            write_rows_csv(result.rows, os.path.join(out_dir, "results.partial.csv"))
        raise type(exc)(f"stage '{stage}' failed: {exc}") from exc
    if out_dir is not None:
        result.artifacts += emit_report(result.rows, result.cost_reports, "csv", out_dir)
        result.artifacts += emit_report(result.rows, result.cost_reports, "plotdata", out_dir)
    return result


def _record(cfg, result, out_dir, cr, descriptor, model, representation, remaining, data):
    name = _artifact_name(cfg, cr, descriptor)
    report = cost_report(model, representation)
    rows = evaluate(cfg, model, data, descriptor, cr, remaining, report.bytes_current)
    log.info("%s: %s", name, ", ".join(f"{r.coordinate:g}->{r.value:.6g}" for r in rows))
    result.rows += rows
    result.cost_reports[name] = report
    result.models[name] = model
    if out_dir is not None:
        path = os.path.join(out_dir, "models", f"{name}.nncm")
        save_model(model, representation, path,
                   provenance={"descriptor": descriptor, "seed": cfg.seed, "task": cfg.task})
        result.artifacts.append(path)
