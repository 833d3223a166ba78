"""Two-component (w x 1 then 1 x h) low-rank factorization of conv kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..graph import ModelGraph
from ..layers import Conv2d


@dataclass
class LowRankFactors:
    """Per-slice rank-``r`` factors of a ``(C_out, C_in, K_h, K_w)`` kernel.

    ``vertical[o, i, j]`` is the ``K_h``-long column factor and
    ``horizontal[o, i, j]`` the ``K_w``-long row factor of component ``j``.
    """

    rank: int
    vertical: np.ndarray
    horizontal: np.ndarray
    singular_values: np.ndarray

    def reconstruct(self):
        return np.einsum("oijh,oijw->oihw", self.vertical, self.horizontal)

    @property
    def slice_errors(self):
        """Squared Frobenius error per slice: energy of the discarded singular values."""
        return np.sum(self.singular_values[..., self.rank:] ** 2, axis=-1)

    @property
    def error(self):
        return float(self.slice_errors.sum())


def factorize_kernel(weight, rank):
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim == 2:
        weight = weight[None, None]
    c_out, c_in, kh, kw = weight.shape
    if rank <= 0:
        raise ConfigError("rank must be positive")
    if kh < 2 or kw < 2:
        raise ConfigError(f"kernel {kh}x{kw} too small to decompose")
    if rank > min(kh, kw):
        raise ConfigError(f"rank {rank} exceeds min(kernel) = {min(kh, kw)}")
    u, s, vt = np.linalg.svd(weight, full_matrices=False)
    root = np.sqrt(s[..., :rank])
    vertical = np.moveaxis(u[..., :, :rank] * root[..., None, :], -1, -2)
    horizontal = vt[..., :rank, :] * root[..., :, None]
    return LowRankFactors(rank, vertical, horizontal, s)


def decompose_conv_lowrank(layer: Conv2d, rank):
    """Replace ``layer`` by a ``K_h x 1`` conv followed by a ``1 x K_w`` conv.

    The pair computes exactly the convolution with the per-slice rank-``r``
    approximation of the kernel.  Returns ``(vertical_layer, horizontal_layer,
    factors)``.
    """
    if layer.groups != 1 or layer.in_order is not None:
        raise ConfigError(f"conv2d '{layer.name}': only plain (ungrouped) convs can be decomposed")
    f = factorize_kernel(layer.params["weight"], rank)
    c_out, c_in = layer.out_channels, layer.in_channels
    kh, kw = layer.kernel
    (ph, pw), (sh, sw) = layer.padding, layer.stride
    r = rank
    mid = c_in * c_out * r
    first = Conv2d(c_in, mid, (kh, 1), (sh, 1), (ph, 0), bias=False, groups=c_in,
                   name=f"{layer.name}_v")
    # intermediate channel (i, o, j) lives at i*c_out*r + o*r + j
    first.params["weight"][:, 0, :, 0] = np.transpose(f.vertical, (1, 0, 2, 3)).reshape(mid, kh)
    i, o, j = np.meshgrid(np.arange(c_in), np.arange(c_out), np.arange(r), indexing="ij")
    src = (i * c_out * r + o * r + j)
    # the second conv groups by output channel, so reorder to (o, i, j)
    in_order = np.transpose(src, (1, 0, 2)).reshape(-1).tolist()
    second = Conv2d(mid, c_out, (1, kw), (1, sw), (0, pw), bias=layer.has_bias, groups=c_out,
                    in_order=in_order, name=f"{layer.name}_h")
    second.params["weight"][:, :, 0, :] = f.horizontal.reshape(c_out, c_in * r, kw)
    if layer.has_bias:
        second.params["bias"][...] = layer.params["bias"]
    return first, second, f


def decompose_model(model: ModelGraph, rank, layers=None):
    """New model with each selected conv (default: all with both kernel dims >= 2) decomposed."""
    new_layers, report = [], {}
    for layer in model.layers:
        eligible = (layer.kind == "conv2d" and min(layer.kernel) >= 2 and layer.groups == 1
                    and (layers is None or layer.name in layers))
        if eligible:
            a, b, f = decompose_conv_lowrank(layer, min(rank, *layer.kernel))
            new_layers += [a, b]
            report[layer.name] = f
        else:
            new_layers.append(layer)
    meta = dict(model.metadata)
    meta.setdefault("compression", [])
    meta["compression"] = meta["compression"] + [{"step": "decompose", "rank": rank}]
    out = ModelGraph(new_layers, model.input_shape, name=model.name, metadata=meta)
    out = out.copy()
    for name, mask in model.masks.items():
        if name in out.param_names():
            out.masks[name] = mask.copy()
    for name, q in model.quantized.items():
        if name in out.param_names():
            out.quantized[name] = q.copy()
    return out, report
