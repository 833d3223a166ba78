"""Layer kinds with explicit forward/backward passes.

Every layer works on batched float64 arrays: dense layers take ``(batch, features)``,
spatial layers take ``(batch, channels, height, width)``.  A forward call caches
what the matching backward call needs; calling ``backward`` first raises
:class:`~nncomm.errors.StateError`.

Dense weights are stored ``(fan_out, fan_in)`` so that ``y = W x + b`` for a single
sample.  Conv weights are stored ``(C_out, C_in // groups, K_h, K_w)`` and the
forward pass is a cross-correlation.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ConfigError, DimensionError, StateError

LAYER_KINDS = (
    "dense",
    "conv2d",
    "relu",
    "sigmoid",
    "avgpool",
    "upsample",
    "global_avgpool",
    "reshape",
    "fire",
    "shift",
)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ConfigError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


class Layer:
    """Base class.  Subclasses fill ``params`` and implement the passes."""

    kind = "layer"

    def __init__(self, name=None):
        self.auto_named = name is None
        self.name = name or self.kind
        self.params = {}
        self.grads = {}
        self._cache = None

    # -- shape / construction -------------------------------------------------
    def output_shape(self, input_shape):
        return tuple(input_shape)

    def init_params(self, rng):
        """Draw initial parameters from ``rng``; parameter-free layers ignore it."""

    def spec(self):
        return {"kind": self.kind, "name": self.name}

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    # -- passes ---------------------------------------------------------------
    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"layer '{self.name}': backward called before forward")
        return self._cache

    def clear_cache(self):
        self._cache = None

    def __repr__(self):
        fields = {k: v for k, v in self.spec().items() if k not in ("kind", "name")}
        inner = ", ".join(f"{k}={v}" for k, v in fields.items())
        return f"{type(self).__name__}({self.name!r}, {inner})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, fan_in, fan_out, bias=True, name=None):
        super().__init__(name)
        if fan_in <= 0 or fan_out <= 0:
            raise ConfigError(f"dense '{self.name}': sizes must be positive")
        self.fan_in = int(fan_in)
        self.fan_out = int(fan_out)
        self.has_bias = bool(bias)
        self.params["weight"] = np.zeros((self.fan_out, self.fan_in))
        if self.has_bias:
            self.params["bias"] = np.zeros(self.fan_out)

    def init_params(self, rng):
        self.params["weight"][...] = glorot_uniform(
            rng, (self.fan_out, self.fan_in), self.fan_in, self.fan_out
        )
        if self.has_bias:
            self.params["bias"][...] = 0.0

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.fan_in,):
            raise DimensionError(
                f"dense '{self.name}': expected input ({self.fan_in},), got {tuple(input_shape)}"
            )
        return (self.fan_out,)

    def spec(self):
        return {**super().spec(), "fan_in": self.fan_in, "fan_out": self.fan_out,
                "bias": self.has_bias}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise DimensionError(
                f"dense '{self.name}': expected last dim {self.fan_in}, got shape {x.shape}"
            )
        self._cache = x
        y = x @ self.params["weight"].T
        if self.has_bias:
            y = y + self.params["bias"]
        return y

    def backward(self, dy):
        x = self._need_cache()
        self.grads["weight"] = dy.T @ x
        if self.has_bias:
            self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"]


class Conv2d(Layer):
    """2-D cross-correlation with optional grouping and input channel reordering.

    ``in_order`` is a permutation of the input channels applied before the
    grouped convolution; low-rank decomposition uses it to route per-slice
    factors between two grouped layers.
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding="same",
                 bias=True, groups=1, in_order=None, name=None):
        super().__init__(name)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        self.groups = int(groups)
        self.has_bias = bool(bias)
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, *self.stride, self.groups) <= 0:
            raise ConfigError(f"conv2d '{self.name}': sizes must be positive")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"conv2d '{self.name}': channels ({self.in_channels}, {self.out_channels}) "
                f"not divisible by groups={self.groups}"
            )
        if padding == "same":
            if kh % 2 == 0 or kw % 2 == 0:
                raise ConfigError(f"conv2d '{self.name}': 'same' padding needs odd kernel sizes")
            padding = ((kh - 1) // 2, (kw - 1) // 2)
        elif padding == "valid":
            padding = (0, 0)
        self.padding = _pair(padding)
        if min(self.padding) < 0:
            raise ConfigError(f"conv2d '{self.name}': negative padding")
        if in_order is not None:
            in_order = [int(i) for i in in_order]
            if sorted(in_order) != list(range(self.in_channels)):
                raise ConfigError(f"conv2d '{self.name}': in_order must permute the input channels")
        self.in_order = in_order
        cg = self.in_channels // self.groups
        self.params["weight"] = np.zeros((self.out_channels, cg, kh, kw))
        if self.has_bias:
            self.params["bias"] = np.zeros(self.out_channels)

    @property
    def fan_in(self):
        return self.in_channels // self.groups * self.kernel[0] * self.kernel[1]

    def init_params(self, rng):
        kh, kw = self.kernel
        self.params["weight"][...] = glorot_uniform(
            rng, self.params["weight"].shape, self.fan_in, self.out_channels * kh * kw
        )
        if self.has_bias:
            self.params["bias"][...] = 0.0

    def _out_hw(self, h, w):
        kh, kw = self.kernel
        (ph, pw), (sh, sw) = self.padding, self.stride
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if ho <= 0 or wo <= 0:
            raise ConfigError(
                f"conv2d '{self.name}': non-positive output size ({ho}, {wo}) for input ({h}, {w})"
            )
        return ho, wo

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise DimensionError(
                f"conv2d '{self.name}': expected ({self.in_channels}, H, W), got {tuple(input_shape)}"
            )
        return (self.out_channels, *self._out_hw(*input_shape[1:]))

    def spec(self):
        return {**super().spec(), "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": list(self.kernel),
                "stride": list(self.stride), "padding": list(self.padding),
                "bias": self.has_bias, "groups": self.groups, "in_order": self.in_order}

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv2d '{self.name}': expected (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        if self.in_order is not None:
            x = x[:, self.in_order]
        b, c, h, w = x.shape
        kh, kw = self.kernel
        (ph, pw), (sh, sw) = self.padding, self.stride
        ho, wo = self._out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
        # (B*Ho*Wo, C, kh*kw)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c, kh * kw)
        weight = self.params["weight"]
        g, cg, og = self.groups, c // self.groups, self.out_channels // self.groups
        if g == 1:
            out = cols.reshape(len(cols), -1) @ weight.reshape(self.out_channels, -1).T
        else:
            out = np.empty((len(cols), self.out_channels))
            for k in range(g):
                ck = cols[:, k * cg:(k + 1) * cg].reshape(len(cols), -1)
                out[:, k * og:(k + 1) * og] = ck @ weight[k * og:(k + 1) * og].reshape(og, -1).T
        if self.has_bias:
            out += self.params["bias"]
        self._cache = (cols, x.shape, (ho, wo))
        return out.reshape(b, ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy):
        cols, xshape, (ho, wo) = self._need_cache()
        b, c, h, w = xshape
        kh, kw = self.kernel
        (ph, pw), (sh, sw) = self.padding, self.stride
        weight = self.params["weight"]
        g, cg, og = self.groups, c // self.groups, self.out_channels // self.groups
        d2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        if self.has_bias:
            self.grads["bias"] = d2.sum(axis=0)
        if g == 1:
            self.grads["weight"] = (d2.T @ cols.reshape(len(cols), -1)).reshape(weight.shape)
        else:
            dw = np.empty_like(weight)
            for k in range(g):
                ck = cols[:, k * cg:(k + 1) * cg].reshape(len(cols), -1)
                dw[k * og:(k + 1) * og] = (d2[:, k * og:(k + 1) * og].T @ ck).reshape(og, cg, kh, kw)
            self.grads["weight"] = dw
        if (sh, sw) == (1, 1) and ph < kh and pw < kw and self.out_channels <= c:
            dx = self._input_grad_by_correlation(dy, xshape)
        else:
            dx = self._input_grad_by_scatter(d2, xshape, (ho, wo))
        if self.in_order is not None:
            out = np.empty_like(dx)
            out[:, self.in_order] = dx
            dx = out
        return dx

    def _input_grad_by_scatter(self, d2, xshape, out_hw):
        b, c, h, w = xshape
        ho, wo = out_hw
        kh, kw = self.kernel
        (ph, pw), (sh, sw) = self.padding, self.stride
        weight = self.params["weight"]
        g, cg, og = self.groups, c // self.groups, self.out_channels // self.groups
        if g == 1:
            dcols = d2 @ weight.reshape(self.out_channels, -1)
        else:
            dcols = np.empty((len(d2), c * kh * kw))
            for k in range(g):
                wk = weight[k * og:(k + 1) * og].reshape(og, -1)
                dcols[:, k * cg * kh * kw:(k + 1) * cg * kh * kw] = d2[:, k * og:(k + 1) * og] @ wk
        dcols = dcols.reshape(b, ho, wo, c, kh, kw)
        # accumulate channels-last so each shifted add is contiguous in the last axis
        dxp = np.zeros((b, h + 2 * ph, w + 2 * pw, c))
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[..., i, j]
        return dxp[:, ph:ph + h, pw:pw + w].transpose(0, 3, 1, 2)

    def _input_grad_by_correlation(self, dy, xshape):
        """Stride-1 input gradient: correlate the padded output gradient with the flipped kernel."""
        b, c, h, w = xshape
        kh, kw = self.kernel
        ph, pw = self.padding
        weight = self.params["weight"]
        g, cg, og = self.groups, c // self.groups, self.out_channels // self.groups
        dyp = np.pad(dy, ((0, 0), (0, 0), (kh - 1 - ph, kh - 1 - ph), (kw - 1 - pw, kw - 1 - pw)))
        win = sliding_window_view(dyp, (kh, kw), axis=(2, 3))[:, :, :h, :w]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, self.out_channels, kh * kw)
        # (C_out, C_in/g, kh, kw) -> (C_out, kh*kw, C_in/g), kernel rotated by 180 degrees
        rot = weight[:, :, ::-1, ::-1].transpose(0, 2, 3, 1).reshape(self.out_channels, kh * kw, cg)
        if g == 1:
            dx = cols.reshape(len(cols), -1) @ rot.reshape(-1, cg)
        else:
            dx = np.empty((len(cols), c))
            for k in range(g):
                ck = cols[:, k * og:(k + 1) * og].reshape(len(cols), -1)
                dx[:, k * cg:(k + 1) * cg] = ck @ rot[k * og:(k + 1) * og].reshape(-1, cg)
        return dx.reshape(b, h, w, c).transpose(0, 3, 1, 2)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._need_cache(), dy, 0.0)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = expit(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * y * (1.0 - y)


class AvgPool(Layer):
    kind = "avgpool"

    def __init__(self, factor=2, name=None):
        super().__init__(name)
        self.factor = int(factor)
        if self.factor <= 0:
            raise ConfigError(f"avgpool '{self.name}': factor must be positive")

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise DimensionError(f"avgpool '{self.name}': expected (C, H, W), got {tuple(input_shape)}")
        c, h, w = input_shape
        f = self.factor
        if h % f or w % f:
            raise ConfigError(f"avgpool '{self.name}': spatial dims ({h}, {w}) not divisible by {f}")
        return (c, h // f, w // f)

    def spec(self):
        return {**super().spec(), "factor": self.factor}

    def forward(self, x):
        b, c, h, w = x.shape
        f = self.factor
        if h % f or w % f:
            raise ConfigError(f"avgpool '{self.name}': spatial dims ({h}, {w}) not divisible by {f}")
        self._cache = x.shape
        return x.reshape(b, c, h // f, f, w // f, f).mean(axis=(3, 5))

    def backward(self, dy):
        self._need_cache()
        f = self.factor
        return np.repeat(np.repeat(dy, f, axis=2), f, axis=3) / (f * f)


class Upsample(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    kind = "upsample"

    def __init__(self, factor=2, name=None):
        super().__init__(name)
        self.factor = int(factor)
        if self.factor <= 0:
            raise ConfigError(f"upsample '{self.name}': factor must be positive")

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise DimensionError(f"upsample '{self.name}': expected (C, H, W), got {tuple(input_shape)}")
        c, h, w = input_shape
        return (c, h * self.factor, w * self.factor)

    def spec(self):
        return {**super().spec(), "factor": self.factor}

    def forward(self, x):
        self._cache = x.shape
        f = self.factor
        return np.repeat(np.repeat(x, f, axis=2), f, axis=3)

    def backward(self, dy):
        b, c, h, w = self._need_cache()
        f = self.factor
        return dy.reshape(b, c, h, f, w, f).sum(axis=(3, 5))


class GlobalAvgPool(Layer):
    kind = "global_avgpool"

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise DimensionError(f"global_avgpool '{self.name}': expected (C, H, W), got {tuple(input_shape)}")
        return (input_shape[0],)

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self._need_cache()
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (b, c, h, w)).copy()


class Reshape(Layer):
    """Per-sample reshape (flatten is ``Reshape((-1,))``)."""

    kind = "reshape"

    def __init__(self, shape, name=None):
        super().__init__(name)
        self.shape = tuple(int(s) for s in shape)

    def output_shape(self, input_shape):
        n = int(np.prod(input_shape))
        try:
            return np.empty(n, dtype=np.int8).reshape(self.shape).shape
        except ValueError as exc:
            raise DimensionError(f"reshape '{self.name}': cannot map {tuple(input_shape)} to {self.shape}") from exc

    def spec(self):
        return {**super().spec(), "shape": list(self.shape)}

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class Shift(Layer):
    """Adds a fixed constant: ``Shift(-0.5)`` centres inputs scaled to [0, 1]."""

    kind = "shift"

    def __init__(self, offset, name=None):
        super().__init__(name)
        self.offset = float(offset)

    def spec(self):
        return {**super().spec(), "offset": self.offset}

    def forward(self, x):
        self._cache = True
        return x + self.offset

    def backward(self, dy):
        self._need_cache()
        return dy


class Fire(Layer):
    """Squeeze 1x1 conv, then parallel 1x1 / 3x3 expand convs, concatenated.

    Every conv is followed by a ReLU.  Spatial size is preserved.
    """

    kind = "fire"

    def __init__(self, in_channels, squeeze, expand1x1, expand3x3, name=None):
        super().__init__(name)
        self.in_channels, self.squeeze_channels = int(in_channels), int(squeeze)
        self.e1, self.e3 = int(expand1x1), int(expand3x3)
        if self.squeeze_channels >= self.e1 + self.e3:
            raise ConfigError(
                f"fire '{self.name}': squeeze width {self.squeeze_channels} must be below "
                f"expand width {self.e1 + self.e3}"
            )
        self.squeeze = Conv2d(in_channels, squeeze, 1, padding=0, name="squeeze")
        self.expand1 = Conv2d(squeeze, expand1x1, 1, padding=0, name="expand1x1")
        self.expand3 = Conv2d(squeeze, expand3x3, 3, padding="same", name="expand3x3")
        self._relus = [ReLU(), ReLU(), ReLU()]
        self.params = _PrefixedView(self, "params")
        self.grads = _PrefixedView(self, "grads")

    @property
    def sublayers(self):
        return {"squeeze": self.squeeze, "expand1x1": self.expand1, "expand3x3": self.expand3}

    def init_params(self, rng):
        for layer in self.sublayers.values():
            layer.init_params(rng)

    def output_shape(self, input_shape):
        s = self.squeeze.output_shape(input_shape)
        return (self.e1 + self.e3, *self.expand3.output_shape(s)[1:])

    def spec(self):
        return {**super().spec(), "in_channels": self.in_channels,
                "squeeze": self.squeeze_channels, "expand1x1": self.e1, "expand3x3": self.e3}

    def forward(self, x):
        s = self._relus[0].forward(self.squeeze.forward(x))
        a = self._relus[1].forward(self.expand1.forward(s))
        c = self._relus[2].forward(self.expand3.forward(s))
        self._cache = True
        return np.concatenate([a, c], axis=1)

    def backward(self, dy):
        self._need_cache()
        da = self.expand1.backward(self._relus[1].backward(dy[:, :self.e1]))
        dc = self.expand3.backward(self._relus[2].backward(dy[:, self.e1:]))
        return self.squeeze.backward(self._relus[0].backward(da + dc))

    def clear_cache(self):
        super().clear_cache()
        for layer in [*self.sublayers.values(), *self._relus]:
            layer.clear_cache()


class _PrefixedView(dict):
    """Live ``{"squeeze.weight": array, ...}`` view over a block's sublayers."""

    def __init__(self, owner, attr):
        super().__init__()
        self._owner, self._attr = owner, attr

    def _items(self):
        for prefix, layer in self._owner.sublayers.items():
            for key, value in getattr(layer, self._attr).items():
                yield f"{prefix}.{key}", value

    def __getitem__(self, key):
        prefix, sub = key.split(".", 1)
        return getattr(self._owner.sublayers[prefix], self._attr)[sub]

    def __setitem__(self, key, value):
        prefix, sub = key.split(".", 1)
        getattr(self._owner.sublayers[prefix], self._attr)[sub] = value

    def __contains__(self, key):
        return any(k == key for k, _ in self._items())

    def __iter__(self):
        return (k for k, _ in self._items())

    def __len__(self):
        return sum(1 for _ in self._items())

    def keys(self):
        return [k for k, _ in self._items()]

    def values(self):
        return [v for _, v in self._items()]

    def items(self):
        return list(self._items())

    def get(self, key, default=None):
        return self[key] if key in self else default


_REGISTRY = {
    "dense": lambda s: Dense(s["fan_in"], s["fan_out"], s.get("bias", True), name=s.get("name")),
    "conv2d": lambda s: Conv2d(s["in_channels"], s["out_channels"], s["kernel"], s.get("stride", 1),
                               s.get("padding", "same"), s.get("bias", True), s.get("groups", 1),
                               s.get("in_order"), name=s.get("name")),
    "relu": lambda s: ReLU(name=s.get("name")),
    "sigmoid": lambda s: Sigmoid(name=s.get("name")),
    "avgpool": lambda s: AvgPool(s["factor"], name=s.get("name")),
    "upsample": lambda s: Upsample(s["factor"], name=s.get("name")),
    "global_avgpool": lambda s: GlobalAvgPool(name=s.get("name")),
    "reshape": lambda s: Reshape(s["shape"], name=s.get("name")),
    "shift": lambda s: Shift(s["offset"], name=s.get("name")),
    "fire": lambda s: Fire(s["in_channels"], s["squeeze"], s["expand1x1"], s["expand3x3"],
                           name=s.get("name")),
}


def layer_from_spec(spec):
    """Rebuild a layer (zero parameters) from the dict produced by ``Layer.spec``."""
    try:
        return _REGISTRY[spec["kind"]](spec)
    except KeyError as exc:
        raise ConfigError(f"unknown or incomplete layer spec {spec!r}") from exc


# -- functional helpers -------------------------------------------------------

def _batched(x, rank):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == rank - 1:
        return x[None], True
    return x, False


def dense_forward(weight, bias, x):
    """``W x + b`` for one sample or a batch of row vectors."""
    weight = np.asarray(weight, dtype=np.float64)
    layer = Dense(weight.shape[1], weight.shape[0], bias is not None)
    layer.params["weight"][...] = weight
    if bias is not None:
        layer.params["bias"][...] = bias
    xb, single = _batched(x, 2)
    y = layer.forward(xb)
    return y[0] if single else y


def conv2d_forward(weight, bias, x, stride=1, padding="same"):
    weight = np.asarray(weight, dtype=np.float64)
    c_out, c_in, kh, kw = weight.shape
    layer = Conv2d(c_in, c_out, (kh, kw), stride, padding, bias is not None)
    layer.params["weight"][...] = weight
    if bias is not None:
        layer.params["bias"][...] = bias
    xb, single = _batched(x, 4)
    y = layer.forward(xb)
    return y[0] if single else y


def activation_forward(kind, x):
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    raise ConfigError(f"unknown activation {kind!r}")


def pool_resize_forward(kind, x, factor=2):
    layer = {"avgpool": lambda: AvgPool(factor), "upsample": lambda: Upsample(factor),
             "global_avgpool": GlobalAvgPool}[kind]()
    xb, single = _batched(x, 4)
    y = layer.forward(xb)
    return y[0] if single else y
