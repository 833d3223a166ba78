"""Command-line entry point: ``python -m nncomm <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from ..accounting import cost_report
from ..datagen import save_csi_dataset, save_dataset
from ..errors import ConfigError, DataError, DimensionError, NNCommError, NumericError, ParseError
from ..persistence import load_model, save_model
from .config import ExperimentConfig, Step, config_to_text, load_config, parse_snr_range
from .pipeline import (REPRESENTATION, apply_step, evaluate, prepare_data, run_pipeline,
                       train_baseline)
from .report import emit_report, read_rows_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
log = logging.getLogger("nncomm")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (INI text)")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--snr", help="SNR sweep a:b[:step] in dB")
    common.add_argument("--cr", help="comma-separated compression rates")
    common.add_argument("--small", action="store_true", help="10x smaller datasets and epoch caps")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nncomm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the datasets as NNCD files")
    sub.add_parser("train", parents=[common], help="train the baseline model(s)")
    for name, flag, kw in (("prune", "--threshold", {"type": float}),
                           ("quantize", "--bits", {"type": int}),
                           ("distill", "--lam", {"type": float, "default": 0.5}),
                           ("decompose", "--rank", {"type": int})):
        sp = sub.add_parser(name, parents=[common], help=f"{name} a trained model and retrain")
        sp.add_argument("--model", required=True, help="trained model file")
        sp.add_argument(flag, required=name != "distill", **kw)
    ev = sub.add_parser("eval", parents=[common], help="evaluate a model file")
    ev.add_argument("--model", required=True)
    ev.add_argument("--descriptor", default=None, help="label for the result rows")
    rp = sub.add_parser("report", parents=[common], help="plot data and tables from a results CSV")
    rp.add_argument("--results", required=True)
    pl = sub.add_parser("pipeline", parents=[common], help="train, compress, evaluate, report")
    pl.add_argument("--threshold", type=float, action="append", help="prune step (repeatable)")
    pl.add_argument("--bits", type=int, action="append", help="quantize step (repeatable)")
    pl.add_argument("--rank", type=int, action="append", help="decompose step (repeatable)")
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {"seed": args.seed, "small": True if args.small else None}
    if args.snr:
        over["snrs"] = parse_snr_range(args.snr)
    if args.cr:
        try:
            over["crs"] = tuple(int(c) for c in args.cr.split(",") if c.strip())
        except ValueError:
            raise ConfigError(f"bad --cr list {args.cr!r}") from None
    if args.command == "pipeline":
        steps = [Step("prune", t) for t in args.threshold or ()]
        steps += [Step("quantize", b) for b in args.bits or ()]
        steps += [Step("decompose", r) for r in args.rank or ()]
        if steps:
            over["steps"] = tuple(steps)
    cfg = cfg.with_overrides(**over)
    cfg.validate()
    return cfg


def _cr_of(cfg, model):
    return model.metadata.get("cr") if cfg.task == "csi_feedback" else None


def cmd_gen_data(cfg, args):
    data = prepare_data(cfg)
    os.makedirs(args.out, exist_ok=True)
    if cfg.task == "detection":
        save_dataset(os.path.join(args.out, "channel.nncd"), data.channel)
        parts = {"train": data.train, "val": data.val}
        parts.update({f"test_snr{snr:g}": d for snr, d in data.test.items()})
        for name, d in parts.items():
            save_dataset(os.path.join(args.out, f"{name}_y.nncd"), d.y)
            save_dataset(os.path.join(args.out, f"{name}_s.nncd"), d.s)
    else:
        for name, d in data.items():
            save_csi_dataset(os.path.join(args.out, f"csi_{name}.nncd"), d, normalized=True)
    log.info("datasets written to %s", args.out)


def cmd_train(cfg, args):
    data = prepare_data(cfg)
    os.makedirs(args.out, exist_ok=True)
    for cr in ([None] if cfg.task == "detection" else cfg.crs):
        model, history = train_baseline(cfg, data, cr)
        name = "baseline" if cr is None else f"cr{cr}_baseline"
        save_model(model, "dense32", os.path.join(args.out, f"{name}.nncm"),
                   provenance={"descriptor": "baseline", "seed": cfg.seed, "task": cfg.task})
        print(f"{name}: {history.epochs} epochs, best validation loss {history.best_val:.6g}")


def cmd_compress(cfg, args):
    step = {"prune": lambda: Step("prune", args.threshold),
            "quantize": lambda: Step("quantize", args.bits),
            "distill": lambda: Step("distill", args.lam),
            "decompose": lambda: Step("decompose", args.rank)}[args.command]()
    cfg._check_step(step)
    baseline = load_model(args.model)
    data = prepare_data(cfg)
    model, remaining = apply_step(cfg, step, baseline, data, _cr_of(cfg, baseline))
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.model))[0]
    path = os.path.join(args.out, f"{stem}_{step.descriptor.replace('=', '')}.nncm")
    rep = REPRESENTATION[step.kind]
    size = save_model(model, rep, path, provenance={"descriptor": step.descriptor,
                                                    "seed": cfg.seed, "task": cfg.task})
    report = cost_report(model, rep)
    print(f"{path}: {size} bytes, remaining {remaining:.4f}, storage saving {report.saving:.4%}")


def cmd_eval(cfg, args):
    model = load_model(args.model)
    data = prepare_data(cfg)
    descriptor = args.descriptor or model.provenance.get("descriptor", "model")
    rows = evaluate(cfg, model, data, descriptor, _cr_of(cfg, model))
    for path in emit_report(rows, {}, "csv", args.out):
        print(path)
    for r in rows:
        print(f"{r.metric} @ {r.coordinate:g}: {r.value:.6g}")


def cmd_report(cfg, args):
    rows = read_rows_csv(args.results)
    for path in emit_report(rows, {}, "plotdata", args.out):
        print(path)


def cmd_pipeline(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.ini"), "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    result = run_pipeline(cfg, args.out)
    for path in result.artifacts:
        print(path)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "prune": cmd_compress,
            "quantize": cmd_compress, "distill": cmd_compress, "decompose": cmd_compress,
            "eval": cmd_eval, "report": cmd_report, "pipeline": cmd_pipeline}


def exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, DimensionError, ParseError, OSError)):
        return EXIT_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except (NNCommError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
