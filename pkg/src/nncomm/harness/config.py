"""Experiment configuration read from INI-style text files.

Example::

    [experiment]
    task = detection
    seed = 0

    [model]
    architecture = fullycon
    hidden_layers = 4

    [compression]
    steps = prune:0.01, prune:0.05, quantize:9

    [eval]
    snrs = 8, 9, 10, 11, 12, 13
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from ..errors import ConfigError
from ..training import Schedule
from ..zoo import BUILDERS, DEFAULT_SNRS, SUPPORTED_CRS

TASKS = ("detection", "csi_feedback")
STEP_KINDS = ("prune", "quantize", "distill", "decompose")
DETECTION_ARCHITECTURES = ("fullycon",)
CSI_ARCHITECTURES = ("csinet_plus_like", "convcsinet", "convsqucsinet")
# hard epoch caps per task; --small divides them by SMALL_EPOCH_FACTOR
EPOCH_CAPS = {"detection": 200, "csi_feedback": 500}
SMALL_EPOCH_FACTOR = 10
# the CSI autoencoders need many small steps to leave the initial plateau
BATCH_SIZES = {"detection": 1000, "csi_feedback": 20}


@dataclass(frozen=True)
class Step:
    kind: str
    value: float

    @property
    def descriptor(self):
        key = {"prune": "t", "quantize": "B", "distill": "lambda", "decompose": "r"}[self.kind]
        v = int(self.value) if self.kind in ("quantize", "decompose") else self.value
        return f"{key}={v:g}" if isinstance(v, float) else f"{key}={v}"

    def __str__(self):
        return f"{self.kind}:{self.value:g}"


def parse_steps(text):
    steps = []
    for item in (s.strip() for s in text.replace(";", ",").split(",")):
        if not item:
            continue
        kind, sep, value = item.partition(":")
        kind = kind.strip()
        if kind not in STEP_KINDS or not sep:
            raise ConfigError(f"compression step {item!r}: expected <{'|'.join(STEP_KINDS)}>:<value>")
        try:
            v = float(value)
        except ValueError:
            raise ConfigError(f"compression step {item!r}: value is not a number") from None
        if kind in ("quantize", "decompose") and v != int(v):
            raise ConfigError(f"compression step {item!r}: needs an integer")
        steps.append(Step(kind, v))
    return tuple(steps)


def parse_floats(text):
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"not a list of numbers: {text!r}") from None


def parse_snr_range(text):
    """``"a:b"`` (1 dB steps) or ``"a:b:step"`` into a tuple of SNRs."""
    parts = text.split(":")
    try:
        nums = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"bad SNR range {text!r}") from None
    if len(nums) == 1:
        return (nums[0],)
    if len(nums) not in (2, 3) or nums[1] < nums[0]:
        raise ConfigError(f"bad SNR range {text!r}; expected a:b or a:b:step")
    step = nums[2] if len(nums) == 3 else 1.0
    if step <= 0:
        raise ConfigError(f"bad SNR step in {text!r}")
    count = int(round((nums[1] - nums[0]) / step)) + 1
    return tuple(nums[0] + i * step for i in range(count))


@dataclass
class ExperimentConfig:
    task: str = "detection"
    seed: int = 0
    small: bool = False
    # data
    scenario: str = "indoor_like"
    sizes: dict = field(default_factory=dict)
    channel_seed: int = 0
    data_path: str | None = None
    # model
    architecture: str | None = None
    n: int = 30
    k: int = 20
    hidden_layers: int = 4
    student_hidden_layers: int = 2
    student_architecture: str = "convsqucsinet"
    # training
    learning_rate: float = 1e-3
    retrain_learning_rate: float = 1e-4
    batch_size: int | None = None
    max_epochs: int | None = None
    retrain_max_epochs: int | None = None
    patience: int = 10
    # compression
    steps: tuple = ()
    granularity: str = "fine_grained"
    layer_kinds: tuple = ()
    # evaluation
    snrs: tuple = DEFAULT_SNRS
    crs: tuple = (4,)

    def __post_init__(self):
        if self.architecture is None:
            self.architecture = "fullycon" if self.task == "detection" else "csinet_plus_like"
        if self.batch_size is None:
            self.batch_size = BATCH_SIZES.get(self.task, 1000)
        self.validate()

    # -- derived ----------------------------------------------------------------
    @property
    def metric(self):
        return "BER" if self.task == "detection" else "NMSE_dB"

    @property
    def epoch_cap(self):
        cap = self.max_epochs if self.max_epochs is not None else EPOCH_CAPS[self.task]
        return max(1, cap // SMALL_EPOCH_FACTOR) if self.small and self.max_epochs is None else cap

    @property
    def retrain_epoch_cap(self):
        return self.retrain_max_epochs if self.retrain_max_epochs is not None else self.epoch_cap

    def schedule(self, stage_seed=0):
        return Schedule(self.learning_rate, self.batch_size, self.epoch_cap, self.patience,
                        seed=self.seed + stage_seed)

    def retrain_schedule(self, stage_seed=0):
        return Schedule(self.retrain_learning_rate, self.batch_size, self.retrain_epoch_cap,
                        self.patience, seed=self.seed + stage_seed)

    def layer_filter(self, step_kind="prune"):
        """Which tensors a compression step touches (``None`` = every parameter tensor).

        Without explicit ``layers``, pruning of the two-FC-layer CSI autoencoder
        is limited to its dense weights; everything else touches all tensors.
        """
        if self.layer_kinds:
            kinds = set(self.layer_kinds)
        elif (step_kind == "prune" and self.task == "csi_feedback"
              and self.architecture == "csinet_plus_like"):
            kinds = {"dense"}
        else:
            return None
        return lambda name, kind: kind in kinds and not name.endswith("bias")

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # -- checks -----------------------------------------------------------------
    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        allowed = DETECTION_ARCHITECTURES if self.task == "detection" else CSI_ARCHITECTURES
        if self.architecture not in allowed:
            raise ConfigError(f"architecture {self.architecture!r} does not fit task {self.task!r}")
        if self.architecture not in BUILDERS:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.student_architecture not in CSI_ARCHITECTURES:
            raise ConfigError(f"unknown student architecture {self.student_architecture!r}")
        for kind in self.layer_kinds:
            if kind not in ("dense", "conv2d"):
                raise ConfigError(f"compression layer kind must be dense or conv2d, got {kind!r}")
        if self.learning_rate <= 0 or self.retrain_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size <= 0 or self.patience <= 0:
            raise ConfigError("batch_size and patience must be positive")
        if self.granularity not in ("fine_grained", "filter_level"):
            raise ConfigError(f"unknown pruning granularity {self.granularity!r}")
        if self.task == "detection" and not self.snrs:
            raise ConfigError("detection needs at least one SNR")
        if self.task == "csi_feedback" and not self.crs:
            raise ConfigError("CSI feedback needs at least one CR")
        for cr in self.crs:
            if cr not in SUPPORTED_CRS:
                raise ConfigError(f"CR must be one of {SUPPORTED_CRS}, got {cr}")
        for step in self.steps:
            self._check_step(step)
        if self.data_path is not None and not os.path.isfile(self.data_path):
            raise ConfigError(f"data file not found: {self.data_path}")

    def _check_step(self, step):
        if step.kind == "prune" and step.value < 0:
            raise ConfigError(f"{step}: threshold must be >= 0")
        if step.kind == "quantize" and not 1 <= step.value <= 16:
            raise ConfigError(f"{step}: bits must be in [1, 16]")
        if step.kind == "distill" and not 0 <= step.value <= 1:
            raise ConfigError(f"{step}: mixing weight must be in [0, 1]")
        if step.kind == "decompose":
            if step.value < 1:
                raise ConfigError(f"{step}: rank must be >= 1")
            if self.task == "detection" or self.layer_kinds == ("dense",):
                raise ConfigError(f"{step}: low-rank decomposition needs conv2d layers")


_FIELDS = {
    "experiment": {"task": str, "seed": int, "small": bool},
    "data": {"scenario": str, "channel_seed": int, "path": str,
             "train": int, "val": int, "test": int},
    "model": {"architecture": str, "n": int, "k": int, "hidden_layers": int,
              "student_hidden_layers": int, "student_architecture": str},
    "train": {"learning_rate": float, "retrain_learning_rate": float, "batch_size": int,
              "max_epochs": int, "retrain_max_epochs": int, "patience": int},
    "compression": {"steps": str, "granularity": str, "layers": str},
    "eval": {"snrs": str, "crs": str},
}


def _get(parser, section, key, typ):
    try:
        if typ is bool:
            return parser.getboolean(section, key)
        if typ is int:
            return parser.getint(section, key)
        if typ is float:
            return parser.getfloat(section, key)
        return parser.get(section, key).strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def config_from_text(text, source="<text>"):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    kw, sizes = {}, {}
    for section in parser.sections():
        if section not in _FIELDS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _FIELDS[section]:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            value = _get(parser, section, key, _FIELDS[section][key])
            if section == "data" and key in ("train", "val", "test"):
                if value <= 0:
                    raise ConfigError(f"{source}: [data] {key} must be positive")
                sizes[key] = value
            elif key == "path":
                kw["data_path"] = value
            elif key == "steps":
                kw["steps"] = parse_steps(value)
            elif key == "layers":
                kw["layer_kinds"] = tuple(v.strip() for v in value.split(",") if v.strip())
            elif key == "snrs":
                kw["snrs"] = parse_floats(value)
            elif key == "crs":
                kw["crs"] = tuple(int(v) for v in parse_floats(value))
            else:
                kw[key] = value
    if sizes:
        kw["sizes"] = sizes
    return ExperimentConfig(**kw)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = config_from_text(text, source=str(path))
    if cfg.data_path is not None and not os.path.isabs(cfg.data_path):
        resolved = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.data_path)
        cfg = replace(cfg, data_path=resolved)
    return cfg


def config_to_text(cfg: ExperimentConfig):
    """Inverse of :func:`config_from_text` (used to record the config next to results)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["experiment"] = {"task": cfg.task, "seed": str(cfg.seed), "small": str(cfg.small).lower()}
    data = {"scenario": cfg.scenario, "channel_seed": str(cfg.channel_seed)}
    data.update({k: str(v) for k, v in cfg.sizes.items()})
    if cfg.data_path:
        data["path"] = cfg.data_path
    parser["data"] = data
    parser["model"] = {"architecture": cfg.architecture, "n": str(cfg.n), "k": str(cfg.k),
                       "hidden_layers": str(cfg.hidden_layers),
                       "student_hidden_layers": str(cfg.student_hidden_layers),
                       "student_architecture": cfg.student_architecture}
    train = {"learning_rate": repr(cfg.learning_rate),
             "retrain_learning_rate": repr(cfg.retrain_learning_rate),
             "batch_size": str(cfg.batch_size), "patience": str(cfg.patience)}
    if cfg.max_epochs is not None:
        train["max_epochs"] = str(cfg.max_epochs)
    if cfg.retrain_max_epochs is not None:
        train["retrain_max_epochs"] = str(cfg.retrain_max_epochs)
    parser["train"] = train
    parser["compression"] = {"steps": ", ".join(str(s) for s in cfg.steps),
                             "granularity": cfg.granularity,
                             "layers": ", ".join(cfg.layer_kinds)}
    parser["eval"] = {"snrs": ", ".join(f"{s:g}" for s in cfg.snrs),
                      "crs": ", ".join(str(c) for c in cfg.crs)}
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in parser[section].items())
        lines.append("")
    return "\n".join(lines)
