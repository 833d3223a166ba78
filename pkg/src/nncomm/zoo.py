"""Network constructors for the detection and CSI-feedback case studies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .graph import ModelGraph
from .layers import AvgPool, Conv2d, Dense, Fire, ReLU, Reshape, Shift, Sigmoid, Upsample

DEFAULT_SNRS = (8.0, 9.0, 10.0, 11.0, 12.0, 13.0)
SUPPORTED_CRS = (4, 8, 16, 32)
# CSI inputs are scaled to [0, 1]; every CSI model first moves them to [-0.5, 0.5]
# because an uncentred input slows Adam to a crawl on this data
CSI_INPUT_SHIFT = -0.5


@dataclass
class DetectionConfig:
    """FullyCon detector sizes.  ``channel`` is the fixed ``(N, K)`` real channel."""

    n: int = 30
    k: int = 20
    hidden_layers: int = 4
    channel: np.ndarray | None = None
    snrs_db: tuple = DEFAULT_SNRS

    def __post_init__(self):
        if self.n <= 0 or self.k <= 0 or self.hidden_layers <= 0:
            raise ConfigError("DetectionConfig: N, K and hidden_layers must be positive")
        if self.channel is not None:
            self.channel = np.asarray(self.channel, dtype=np.float64)
            if self.channel.shape != (self.n, self.k):
                raise ConfigError(f"channel shape {self.channel.shape} != ({self.n}, {self.k})")

    @property
    def hidden_width(self):
        return 10 * self.k


@dataclass
class FeedbackConfig:
    cr: int = 4
    channels: int = 2
    height: int = 32
    width: int = 32
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cr not in SUPPORTED_CRS:
            raise ConfigError(f"CR must be one of {SUPPORTED_CRS}, got {self.cr}")
        if self.size % self.cr:
            raise ConfigError(f"CR {self.cr} does not divide CSI size {self.size}")

    @property
    def size(self):
        return self.channels * self.height * self.width

    @property
    def codeword_length(self):
        return self.size // self.cr

    @property
    def input_shape(self):
        return (self.channels, self.height, self.width)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def build_fullycon(cfg: DetectionConfig, seed=0) -> ModelGraph:
    """Dense(N->10K)+ReLU, (hidden-1) x [Dense(10K->10K)+ReLU], Dense(10K->K)+sigmoid."""
    w = cfg.hidden_width
    layers = [Dense(cfg.n, w, name="fc1"), ReLU(name="relu1")]
    for i in range(2, cfg.hidden_layers + 1):
        layers += [Dense(w, w, name=f"fc{i}"), ReLU(name=f"relu{i}")]
    layers += [Dense(w, cfg.k, name=f"fc{cfg.hidden_layers + 1}"), Sigmoid(name="out")]
    meta = {"arch": "fullycon", "N": cfg.n, "K": cfg.k, "hidden_layers": cfg.hidden_layers}
    return ModelGraph(layers, (cfg.n,), name="fullycon", metadata=meta).init_params(_rng(seed))


def build_csinet_plus_like(cfg: FeedbackConfig, seed=0) -> ModelGraph:
    """Two-FC-layer CSI autoencoder with convolutional refinement at the decoder.

    Encoder: centring shift, 3x3 conv (2 -> 8) + ReLU, 3x3 conv (8 -> 2), flatten,
    dense(2048 -> M).  Decoder: dense(M -> 2048), reshape, two refine stages (3x3 convs
    2 -> 8 -> 16 -> 2 with ReLU between), sigmoid.  No rectifier acts on a 2-channel
    map, where a single dead channel would drop half the signal.
    """
    c, h, w = cfg.input_shape
    m = cfg.codeword_length
    layers = [
        Shift(CSI_INPUT_SHIFT, name="centre"),
        Conv2d(c, 8, 3, name="enc_conv1"), ReLU(name="enc_relu1"),
        Conv2d(8, c, 3, name="enc_conv2"),
        Reshape((cfg.size,), name="flatten"),
        Dense(cfg.size, m, name="enc_fc"),
        Dense(m, cfg.size, name="dec_fc"),
        Reshape(cfg.input_shape, name="unflatten"),
    ]
    for stage in (1, 2):
        layers += [
            Conv2d(c, 8, 3, name=f"ref{stage}_conv1"), ReLU(name=f"ref{stage}_relu1"),
            Conv2d(8, 16, 3, name=f"ref{stage}_conv2"), ReLU(name=f"ref{stage}_relu2"),
            Conv2d(16, c, 3, name=f"ref{stage}_conv3"),
        ]
    layers.append(Sigmoid(name="out"))
    meta = {"arch": "csinet_plus_like", "cr": cfg.cr, "codeword_length": m, "encoder_layers": 6}
    return ModelGraph(layers, cfg.input_shape, name=f"csinet_plus_like_cr{cfg.cr}",
                      metadata=meta).init_params(_rng(seed))


def convcsinet_plan(cfg: FeedbackConfig, base_width=16):
    """Pooling depth, per-stage widths and bottleneck channels reaching length M."""
    _, h, w = cfg.input_shape
    m = cfg.codeword_length
    for depth in range(2, 6):
        if h % 2 ** depth or w % 2 ** depth:
            break
        cells = (h // 2 ** depth) * (w // 2 ** depth)
        if m % cells == 0 and m // cells >= 1:
            widths = [base_width * 2 ** i for i in range(depth)]
            return {"depth": depth, "widths": widths, "bottleneck": m // cells,
                    "bottleneck_hw": (h // 2 ** depth, w // 2 ** depth)}
    raise ConfigError(f"CR {cfg.cr} unreachable with the 2x pooling plan")


def _block(kind, cin, cout, name):
    if kind == "conv":
        return [Conv2d(cin, cout, 3, name=f"{name}_conv"), ReLU(name=f"{name}_relu")]
    # fire: s = out/4, e1 = e3 = out/2
    return [Fire(cin, cout // 4, cout // 2, cout // 2, name=f"{name}_fire")]


def _build_conv_family(cfg, block_kind, seed):
    plan = convcsinet_plan(cfg)
    c = cfg.channels
    widths = plan["widths"]
    layers = [Shift(CSI_INPUT_SHIFT, name="centre")]
    cin = c
    for i, wd in enumerate(widths, 1):
        layers += _block(block_kind, cin, wd, f"enc{i}")
        layers.append(AvgPool(2, name=f"enc{i}_pool"))
        cin = wd
    layers.append(Conv2d(cin, plan["bottleneck"], 3, name="bottleneck"))
    n_enc = len(layers)
    cin = plan["bottleneck"]
    for i, wd in enumerate(reversed(widths), 1):
        layers += _block(block_kind, cin, wd, f"dec{i}")
        layers.append(Upsample(2, name=f"dec{i}_up"))
        cin = wd
    layers += [Conv2d(cin, c, 3, name="dec_out"), Sigmoid(name="out")]
    arch = "convcsinet" if block_kind == "conv" else "convsqucsinet"
    meta = {"arch": arch, "cr": cfg.cr, "codeword_length": cfg.codeword_length,
            "encoder_layers": n_enc, "plan": {k: list(v) if isinstance(v, tuple) else v
                                              for k, v in plan.items()}}
    return ModelGraph(layers, cfg.input_shape, name=f"{arch}_cr{cfg.cr}",
                      metadata=meta).init_params(_rng(seed))


def build_convcsinet(cfg: FeedbackConfig, seed=0) -> ModelGraph:
    """Fully convolutional autoencoder: conv+avgpool stages down, conv+upsample up."""
    return _build_conv_family(cfg, "conv", seed)


def build_convsqucsinet(cfg: FeedbackConfig, seed=0) -> ModelGraph:
    """ConvCsiNet with every stacked conv block swapped for a fire module."""
    return _build_conv_family(cfg, "fire", seed)


def fire_module(in_channels, squeeze, expand1x1, expand3x3, name="fire"):
    return Fire(in_channels, squeeze, expand1x1, expand3x3, name=name)


BUILDERS = {
    "fullycon": build_fullycon,
    "csinet_plus_like": build_csinet_plus_like,
    "convcsinet": build_convcsinet,
    "convsqucsinet": build_convsqucsinet,
}
