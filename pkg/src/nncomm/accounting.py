"""Weight, FLOP and storage accounting.

Conventions:

* dense weights ``(fan_in + 1) * fan_out``; conv weights ``(C_in/g * K_h * K_w + 1) * C_out``
  (the ``+1`` only when the layer has a bias);
* a multiply-accumulate is 2 FLOPs, so a conv costs ``2 * H' * W' * (C_in K^2 + 1) * C_out``
  on its output grid and a dense layer ``2 * (fan_in + 1) * fan_out`` per sample;
* ReLU/sigmoid/shift cost 1 FLOP per element, pooling 1 FLOP per input element,
  upsampling and reshapes are free;
* storage: 4 bytes per dense32 value; fine-grained sparse tensors take one mask bit
  per position (byte-padded) plus 4 bytes per survivor; a quantized tensor takes
  ``ceil(n * B / 8)`` index bytes plus a ``4 * 2**B`` byte codebook.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

REPRESENTATIONS = ("dense32", "sparse_bitmask", "quantized")
CSV_COLUMNS = ("layer", "kind", "weights", "flops", "bytes_dense32", "bytes_current", "saving")


@dataclass
class LayerCost:
    layer: str
    kind: str
    weights: int
    flops: int
    bytes_dense32: int
    bytes_current: int

    @property
    def saving(self):
        return 1.0 - self.bytes_current / self.bytes_dense32 if self.bytes_dense32 else 0.0


@dataclass
class CostReport:
    model: str
    representation: str
    layers: list = field(default_factory=list)
    sparsity: dict = field(default_factory=dict)

    @property
    def weights(self):
        return sum(r.weights for r in self.layers)

    @property
    def flops(self):
        return sum(r.flops for r in self.layers)

    @property
    def bytes_dense32(self):
        return sum(r.bytes_dense32 for r in self.layers)

    @property
    def bytes_current(self):
        return sum(r.bytes_current for r in self.layers)

    @property
    def saving(self):
        return 1.0 - self.bytes_current / self.bytes_dense32 if self.bytes_dense32 else 0.0

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.layers:
            w.writerow([r.layer, r.kind, r.weights, r.flops, r.bytes_dense32, r.bytes_current,
                        f"{r.saving:.6f}"])
        w.writerow(["TOTAL", "", self.weights, self.flops, self.bytes_dense32, self.bytes_current,
                    f"{self.saving:.6f}"])
        return buf.getvalue()


def conv_weight_count(c_in, c_out, k_h, k_w=None, bias=True, groups=1):
    k_w = k_h if k_w is None else k_w
    return (c_in // groups * k_h * k_w + int(bias)) * c_out


def conv_flops(c_in, c_out, k_h, h_out, w_out, k_w=None, bias=True, groups=1):
    return 2 * h_out * w_out * conv_weight_count(c_in, c_out, k_h, k_w, bias, groups)


def dense_weight_count(fan_in, fan_out, bias=True):
    return (fan_in + int(bias)) * fan_out


def _layer_flops(layer, in_shape, out_shape):
    kind = layer.kind
    if kind == "dense":
        return 2 * dense_weight_count(layer.fan_in, layer.fan_out, layer.has_bias)
    if kind == "conv2d":
        return conv_flops(layer.in_channels, layer.out_channels, layer.kernel[0], out_shape[1],
                          out_shape[2], layer.kernel[1], layer.has_bias, layer.groups)
    if kind in ("relu", "sigmoid", "shift"):
        return int(np.prod(out_shape))
    if kind in ("avgpool", "global_avgpool"):
        return int(np.prod(in_shape))
    if kind == "fire":
        s_shape = layer.squeeze.output_shape(in_shape)
        e1 = layer.expand1.output_shape(s_shape)
        e3 = layer.expand3.output_shape(s_shape)
        return (_layer_flops(layer.squeeze, in_shape, s_shape) + int(np.prod(s_shape))
                + _layer_flops(layer.expand1, s_shape, e1) + _layer_flops(layer.expand3, s_shape, e3)
                + int(np.prod(out_shape)))
    return 0


def tensor_bytes(model, name, representation):
    """Bytes one parameter tensor occupies under ``representation``."""
    n = model.get_param(name).size
    if representation == "sparse_bitmask" and name in model.masks:
        return math.ceil(n / 8) + 4 * int(model.masks[name].sum())
    if representation == "quantized" and name in model.quantized:
        q = model.quantized[name]
        return math.ceil(n * q.bits / 8) + 4 * 2 ** q.bits
    if representation not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {representation!r}")
    return 4 * n


def storage_bytes(model, representation="dense32"):
    """Total parameter payload bytes (codebooks and padding included)."""
    return sum(tensor_bytes(model, n, representation) for n in model.param_names())


def index_only_saving(bits, reference_bits=32):
    """Saving versus ``reference_bits``-bit floats ignoring codebook overhead: ``1 - B/32``."""
    return 1.0 - bits / reference_bits


def storage_saving(model, representation):
    return 1.0 - storage_bytes(model, representation) / storage_bytes(model, "dense32")


def sparsity_report(model):
    """Remaining (unmasked) fraction per tensor plus ``"overall"`` over all parameters."""
    out = {}
    kept = total = 0
    for name in model.param_names():
        n = model.get_param(name).size
        k = int(model.masks[name].sum()) if name in model.masks else n
        out[name] = k / n
        kept += k
        total += n
    out["overall"] = kept / total if total else 1.0
    return out


def cost_report(model, representation="dense32", input_shape=None):
    """Per-layer weights, FLOPs and bytes for one forward pass of a single sample."""
    shapes = model.shapes
    if input_shape is not None and tuple(input_shape) != model.input_shape:
        from .graph import ModelGraph
        shapes = ModelGraph(model.layers, input_shape).shapes
    report = CostReport(model.name, representation, sparsity=sparsity_report(model))
    for layer, si, so in zip(model.layers, shapes[:-1], shapes[1:]):
        names = [f"{layer.name}.{k}" for k in layer.params.keys()]
        dense = sum(4 * model.get_param(n).size for n in names)
        cur = sum(tensor_bytes(model, n, representation) for n in names)
        report.layers.append(LayerCost(layer.name, layer.kind, layer.n_params,
                                       _layer_flops(layer, si, so), dense, cur))
    return report


def count_weights(model):
    return cost_report(model).weights


def count_flops(model, input_shape=None):
    return cost_report(model, input_shape=input_shape).flops
