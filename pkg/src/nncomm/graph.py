"""Sequential model container with pruning masks and shared-codebook weights."""
from __future__ import annotations

import copy

import numpy as np

from .errors import DimensionError, StateError
from .layers import Layer, layer_from_spec


class ModelGraph:
    """An ordered stack of layers validated against a fixed per-sample input shape.

    Parameters are addressed as ``"<layer name>.<key>"`` (for example
    ``"fc1.weight"`` or ``"fire2.expand3x3.bias"``).

    Two kinds of compression state can be attached per parameter:

    * ``masks[name]`` -- a boolean array; ``False`` entries are held at exactly 0
      and receive zero gradient.
    * ``quantized[name]`` -- a :class:`~nncomm.compression.quantization.QuantizedTensor`;
      the parameter is materialized from its codebook and training updates the
      codebook instead of the raw weights.
    """

    def __init__(self, layers, input_shape, name="model", metadata=None):
        self.layers: list[Layer] = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.name = name
        self.metadata = dict(metadata or {})
        self.masks: dict[str, np.ndarray] = {}
        self.quantized: dict = {}
        self.provenance: dict = {}
        seen = {}
        for layer in self.layers:
            if getattr(layer, "auto_named", False):
                seen[layer.kind] = seen.get(layer.kind, 0) + 1
                layer.name = f"{layer.kind}{seen[layer.kind]}"
                layer.auto_named = False
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise DimensionError(f"model '{name}': duplicate layer names {names}")
        self.shapes = self._validate()

    def _validate(self):
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        return shapes

    @property
    def output_shape(self):
        return self.shapes[-1]

    def init_params(self, rng):
        for layer in self.layers:
            layer.init_params(rng)
        return self

    # -- parameter access -----------------------------------------------------
    def layer(self, name) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def named_parameters(self):
        """Yield ``(qualified_name, layer, key, array)`` in deterministic order."""
        for layer in self.layers:
            for key, value in layer.params.items():
                yield f"{layer.name}.{key}", layer, key, value

    def param_names(self):
        return [n for n, *_ in self.named_parameters()]

    def params(self):
        return {n: v for n, _, _, v in self.named_parameters()}

    def get_param(self, name):
        layer, key = self._split(name)
        return layer.params[key]

    def set_param(self, name, value):
        """Overwrite a parameter in place (shape must match)."""
        arr = self.get_param(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != arr.shape:
            raise DimensionError(f"parameter '{name}': shape {value.shape} != {arr.shape}")
        arr[...] = value

    def _split(self, name):
        for layer in self.layers:
            prefix = layer.name + "."
            if name.startswith(prefix):
                return layer, name[len(prefix):]
        raise KeyError(name)

    def kind_of(self, name):
        return self._split(name)[0].kind

    @staticmethod
    def is_bias(name):
        return name.endswith("bias")

    @property
    def n_params(self):
        return int(sum(v.size for *_, v in self.named_parameters()))

    # -- passes ---------------------------------------------------------------
    def forward(self, x, start=0, stop=None):
        x = np.asarray(x, dtype=np.float64)
        expected = self.shapes[start]
        if x.shape[1:] != expected:
            if x.shape == expected:
                return self.forward(x[None], start, stop)[0]
            raise DimensionError(
                f"model '{self.name}': expected input (batch, {', '.join(map(str, expected))}), got {x.shape}"
            )
        for layer in self.layers[start:stop]:
            x = layer.forward(x)
        self._ran = (start, stop)
        return x

    __call__ = forward

    def predict(self, x, batch_size=1000):
        """Forward pass in batches without keeping caches alive."""
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        self.clear_cache()
        return np.concatenate(outs, axis=0) if outs else np.empty((0, *self.output_shape))

    def backward(self, dy):
        """Backpropagate ``dy``; fills ``layer.grads`` and returns the input gradient."""
        ran = getattr(self, "_ran", None)
        if ran is None:
            raise StateError(f"model '{self.name}': backward called before forward")
        start, stop = ran
        for layer in reversed(self.layers[start:stop]):
            dy = layer.backward(dy)
        for name, mask in self.masks.items():
            layer, key = self._split(name)
            layer.grads[key] = np.where(mask, layer.grads[key], 0.0)
        return dy

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()
        self._ran = None

    def grads(self):
        return {f"{layer.name}.{k}": g for layer in self.layers for k, g in layer.grads.items()}

    # -- encoder / decoder split for autoencoders ------------------------------
    def encode(self, x):
        return self.predict_range(x, 0, self.metadata["encoder_layers"])

    def decode(self, z):
        return self.predict_range(z, self.metadata["encoder_layers"], None)

    def predict_range(self, x, start, stop, batch_size=1000):
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(x[i:i + batch_size], start, stop) for i in range(0, len(x), batch_size)]
        self.clear_cache()
        return np.concatenate(outs, axis=0)

    # -- trainable view (codebooks replace quantized raw weights) -------------
    def trainable(self):
        out = {}
        for name, *_, value in self.named_parameters():
            q = self.quantized.get(name)
            out[name] = q.codebook if q is not None else value
        return out

    def trainable_grads(self):
        grads = self.grads()
        out = {}
        for name in self.param_names():
            g = grads[name]
            q = self.quantized.get(name)
            out[name] = q.codebook_gradient(g) if q is not None else g
        return out

    def sync(self):
        """Re-materialize quantized parameters and re-apply masks after an update."""
        for name, q in self.quantized.items():
            self.set_param(name, q.dequantize())
        for name, mask in self.masks.items():
            arr = self.get_param(name)
            arr[~mask] = 0.0

    # -- state snapshots --------------------------------------------------------
    def state(self):
        """Deep copy of everything training can change."""
        return (
            {n: v.copy() for n, v in self.params().items()},
            {n: q.copy() for n, q in self.quantized.items()},
        )

    def load_state(self, state):
        params, quantized = state
        for n, v in params.items():
            self.set_param(n, v)
        for n, q in quantized.items():
            self.quantized[n] = q.copy()

    def copy(self):
        self.clear_cache()
        return copy.deepcopy(self)

    # -- manifest ---------------------------------------------------------------
    def topology(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.spec() for layer in self.layers],
            "metadata": self.metadata,
        }

    @classmethod
    def from_topology(cls, topo):
        layers = [layer_from_spec(s) for s in topo["layers"]]
        return cls(layers, topo["input_shape"], name=topo.get("name", "model"),
                   metadata=topo.get("metadata"))

    def summary(self):
        lines = [f"{self.name}: input {self.input_shape}"]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            lines.append(f"  {layer.name:<16} {layer.kind:<15} -> {shape}  params={layer.n_params}")
        lines.append(f"  total params: {self.n_params}")
        return "\n".join(lines)

    def __repr__(self):
        return f"ModelGraph({self.name!r}, layers={len(self.layers)}, params={self.n_params})"
