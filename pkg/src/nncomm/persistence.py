"""Binary model files in dense, bitmask-sparse and quantized representations.

Layout (little-endian integers)::

    magic "NNCM" | version u16 | manifest_len u32 | manifest (UTF-8 JSON)
    one section per parameter tensor, in manifest order:
        tag u8 | payload_len u32 | payload | crc32 u32 (over tag, length and payload)

Payloads by tag:

* ``0`` dense32 -- ``n`` float32 values;
* ``1`` sparse_bitmask -- ``ceil(n/8)`` mask bytes (MSB first) then one float32 per set bit;
* ``2`` quantized -- ``B`` u8, ``2**B`` float32 codebook, ``ceil(n*B/8)`` packed indices.

Values are stored as float32; parameters are computed in float64, so a saved model
reloads as its float32-rounded self.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .compression.quantization import QuantizedTensor, pack_indices, unpack_indices
from .datagen import _atomic_write
from .errors import ConfigError, ParseError
from .graph import ModelGraph

MODEL_MAGIC = b"NNCM"
MODEL_VERSION = 1
TAGS = {"dense32": 0, "sparse_bitmask": 1, "quantized": 2}
TAG_NAMES = {v: k for k, v in TAGS.items()}
SECTION_OVERHEAD = 1 + 4 + 4


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def tensor_representation(model, name, representation):
    if representation == "sparse_bitmask" and name in model.masks:
        return "sparse_bitmask"
    if representation == "quantized" and name in model.quantized:
        return "quantized"
    return "dense32"


def _encode(model, name, rep):
    value = model.get_param(name)
    if rep == "dense32":
        return value.astype("<f4").tobytes()
    if rep == "sparse_bitmask":
        mask = model.masks[name].reshape(-1)
        return np.packbits(mask.astype(np.uint8)).tobytes() + value.reshape(-1)[mask].astype("<f4").tobytes()
    q = model.quantized[name]
    return struct.pack("<B", q.bits) + q.codebook.astype("<f4").tobytes() + q.packed_indices()


def save_model(model: ModelGraph, representation, path, provenance=None):
    """Write ``model`` to ``path`` atomically; returns the number of bytes written.

    ``provenance`` (a JSON-able dict) defaults to ``model.provenance``.
    """
    if representation not in TAGS:
        raise ConfigError(f"unknown representation {representation!r}")
    if representation == "quantized" and not model.quantized:
        raise ConfigError("quantized representation requested but the model has no codebooks")
    if representation == "sparse_bitmask" and not model.masks:
        raise ConfigError("sparse_bitmask representation requested but the model has no masks")
    tensors = []
    for name in model.param_names():
        rep = tensor_representation(model, name, representation)
        tensors.append({"name": name, "shape": list(model.get_param(name).shape), "repr": rep})
    manifest = {
        **model.topology(),
        "representation": representation,
        "provenance": provenance if provenance is not None else model.provenance,
        "tensors": tensors,
    }
    text = json.dumps(_to_jsonable(manifest), sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray(MODEL_MAGIC + struct.pack("<HI", MODEL_VERSION, len(text)) + text)
    for t in tensors:
        payload = _encode(model, t["name"], t["repr"])
        head = struct.pack("<BI", TAGS[t["repr"]], len(payload))
        out += head + payload + struct.pack("<I", zlib.crc32(head + payload))
    _atomic_write(path, bytes(out))
    return len(out)


@dataclass
class Section:
    name: str
    representation: str
    offset: int
    payload: bytes


def _read(buf, off, n, what):
    if off + n > len(buf):
        raise ParseError(f"truncated model file: {what} at offset {off} needs {off + n - len(buf)} more bytes")
    return buf[off:off + n]


def read_sections(path):
    """Parse a model file into ``(manifest, [Section, ...])`` with CRC checks."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if _read(buf, 0, 4, "magic") != MODEL_MAGIC:
        raise ParseError(f"bad magic {buf[:4]!r} at offset 0")
    version, mlen = struct.unpack("<HI", _read(buf, 4, 6, "header"))
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model file version {version} at offset 4")
    try:
        manifest = json.loads(_read(buf, 10, mlen, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable manifest at offset 10: {exc}") from exc
    off = 10 + mlen
    sections = []
    for t in manifest["tensors"]:
        head = _read(buf, off, 5, f"section '{t['name']}' header")
        tag, plen = struct.unpack("<BI", head)
        if tag not in TAG_NAMES:
            raise ParseError(f"unknown representation tag {tag} in section '{t['name']}' at offset {off}")
        payload = _read(buf, off + 5, plen, f"section '{t['name']}' payload")
        (crc,) = struct.unpack("<I", _read(buf, off + 5 + plen, 4, f"section '{t['name']}' crc"))
        if crc != zlib.crc32(head + payload):
            raise ParseError(f"CRC mismatch in section '{t['name']}' at offset {off}")
        if TAG_NAMES[tag] != t["repr"]:
            raise ParseError(f"section '{t['name']}' tag {TAG_NAMES[tag]} disagrees with manifest {t['repr']}")
        sections.append(Section(t["name"], TAG_NAMES[tag], off, payload))
        off += SECTION_OVERHEAD + plen
    if off != len(buf):
        raise ParseError(f"{len(buf) - off} trailing bytes after offset {off}")
    return manifest, sections


def payload_bytes(section):
    """Bytes of stored data in a section, excluding framing and the quantized bit-width byte."""
    return len(section.payload) - (1 if section.representation == "quantized" else 0)


def load_model(path) -> ModelGraph:
    manifest, sections = read_sections(path)
    model = ModelGraph.from_topology(manifest)
    model.provenance = dict(manifest.get("provenance", {}))
    shapes = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
    for sec in sections:
        shape = shapes[sec.name]
        n = int(np.prod(shape))
        p = sec.payload
        try:
            if sec.representation == "dense32":
                value = np.frombuffer(p, dtype="<f4", count=n).reshape(shape)
            elif sec.representation == "sparse_bitmask":
                nb = math.ceil(n / 8)
                mask = np.unpackbits(np.frombuffer(p[:nb], dtype=np.uint8), count=n).astype(bool)
                vals = np.frombuffer(p[nb:], dtype="<f4", count=int(mask.sum()))
                value = np.zeros(n)
                value[mask] = vals
                value = value.reshape(shape)
                model.masks[sec.name] = mask.reshape(shape)
            else:
                bits = p[0]
                k = 2 ** bits
                codebook = np.frombuffer(p[1:1 + 4 * k], dtype="<f4", count=k).astype(np.float64)
                idx = unpack_indices(p[1 + 4 * k:], n, bits)
                q = QuantizedTensor(bits, codebook, idx, shape)
                model.quantized[sec.name] = q
                value = q.dequantize()
        except ValueError as exc:
            raise ParseError(f"section '{sec.name}' payload malformed: {exc}") from exc
        model.set_param(sec.name, value)
    return model


def file_size_prediction(model, representation, manifest_bytes):
    """Header + manifest + per-section framing + payload, for a given manifest size."""
    from .accounting import tensor_bytes
    total = 10 + manifest_bytes
    for name in model.param_names():
        rep = tensor_representation(model, name, representation)
        total += SECTION_OVERHEAD + tensor_bytes(model, name, representation) + (rep == "quantized")
    return total
