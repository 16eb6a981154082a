"""The ``.luqc`` container: models, calibration sets and quantized stacks.

Layout, all little-endian::

    b"LUQC" | version u32 | header_len u64 | header (UTF-8 JSON) | blob

The header holds ``version``, ``kind``, ``config`` and ``tensors``; every
tensor record names a byte range of the blob. Writing is deterministic: the
same content always produces the same bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .net import LINEARS, QUANT_TAGS, LayerStack, StackConfig
from .quant.tensor import PART_DTYPES, Part, QuantizedTensor, part_nbytes

MAGIC = b"LUQC"
VERSION = 1
KINDS = ("model", "calib", "quantized")
DTYPES = tuple(PART_DTYPES)
PREFIX = struct.Struct("<4sIQ")
IMAGE_TOKEN = 0xFFFFFFFF  # token id slot of a position carried by a precomputed embedding


class ContainerError(ValueError):
    """Base class for every rejection of a container."""


class BadMagicError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class UnknownDtypeError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


class HeaderError(ContainerError):
    pass


class ManifestError(ContainerError):
    pass


@dataclass(frozen=True)
class TensorRecord:
    name: str
    dtype: str
    shape: tuple
    offset: int
    nbytes: int

    def to_json(self) -> dict:
        return {"name": self.name, "dtype": self.dtype, "shape": list(self.shape),
                "offset": self.offset, "nbytes": self.nbytes}


@dataclass
class Container:
    kind: str
    config: dict
    tensors: dict = field(default_factory=dict)  # name -> Part, in blob order


# ------------------------------------------------------------------ raw format


def _records(tensors: dict):
    offset = 0
    out = []
    for name, part in tensors.items():
        out.append(TensorRecord(name, part.dtype, tuple(int(s) for s in part.shape), offset, part.nbytes))
        offset += part.nbytes
    return out, offset


def write_container(c: Container) -> bytes:
    if c.kind not in KINDS:
        raise HeaderError(f"unknown container kind {c.kind!r}")
    names = list(c.tensors)
    if len(set(names)) != len(names):
        raise HeaderError("duplicate tensor name")
    for name, part in c.tensors.items():
        if part.dtype not in DTYPES:
            raise UnknownDtypeError(f"unknown dtype {part.dtype!r} for tensor {name!r}")
        if part.nbytes != part_nbytes(part.dtype, part.shape):
            raise ContainerError(f"tensor {name!r}: dtype/shape mismatch")
    validate(c)
    records, _ = _records(c.tensors)
    header = {
        "version": VERSION,
        "kind": c.kind,
        "config": c.config,
        "tensors": [r.to_json() for r in records],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p.data).astype(p.data.dtype.newbyteorder("<"), copy=False).tobytes()
                    for p in c.tensors.values())
    return PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + blob


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _parse_record(obj) -> TensorRecord:
    if not isinstance(obj, dict):
        raise HeaderError("tensor record must be an object")
    for key in ("name", "dtype", "shape", "offset", "nbytes"):
        if key not in obj:
            raise HeaderError(f"tensor record lacks {key!r}")
    name, dtype, shape = obj["name"], obj["dtype"], obj["shape"]
    if not isinstance(name, str) or not name:
        raise HeaderError("tensor name must be a non-empty string")
    if not isinstance(dtype, str) or dtype not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r} for tensor {name!r}")
    if not isinstance(shape, list) or not all(_is_int(s) and s >= 0 for s in shape):
        raise HeaderError(f"tensor {name!r}: shape must be a list of non-negative integers")
    if not _is_int(obj["offset"]) or not _is_int(obj["nbytes"]) or obj["offset"] < 0 or obj["nbytes"] < 0:
        raise HeaderError(f"tensor {name!r}: offset and nbytes must be non-negative integers")
    if math.prod(shape) > 2**40:
        raise HeaderError(f"tensor {name!r}: shape too large")
    if obj["nbytes"] != part_nbytes(dtype, shape):
        raise HeaderError(f"tensor {name!r}: nbytes does not match dtype and shape")
    return TensorRecord(name, dtype, tuple(shape), obj["offset"], obj["nbytes"])


def read_container(data: bytes) -> Container:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a LUQC container")
    if len(data) < PREFIX.size:
        raise TruncatedError("truncated payload")
    _, version, hlen = PREFIX.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"container version {version} is not supported (expected {VERSION})")
    if len(data) - PREFIX.size < hlen:
        raise TruncatedError("truncated payload")
    try:
        header = json.loads(data[PREFIX.size:PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError, RecursionError) as exc:
        raise HeaderError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise HeaderError("header must be a JSON object")
    for key in ("version", "kind", "config", "tensors"):
        if key not in header:
            raise HeaderError(f"header lacks {key!r}")
    if header["version"] != VERSION:
        raise VersionMismatchError("header version disagrees with the file version")
    if header["kind"] not in KINDS:
        raise HeaderError(f"unknown container kind {header['kind']!r}")
    if not isinstance(header["config"], dict) or not isinstance(header["tensors"], list):
        raise HeaderError("config must be an object and tensors a list")

    blob = memoryview(data)[PREFIX.size + hlen:]
    records = [_parse_record(r) for r in header["tensors"]]
    names = [r.name for r in records]
    if len(set(names)) != len(names):
        raise HeaderError("duplicate tensor name")
    end = 0
    for r in sorted(records, key=lambda r: (r.offset, r.nbytes)):
        if r.offset < end:
            raise HeaderError(f"tensor {r.name!r} overlaps another tensor")
        end = r.offset + r.nbytes
    if end > len(blob):
        raise TruncatedError("truncated payload")
    if end < len(blob):
        raise HeaderError("blob carries bytes no tensor refers to")

    tensors = {}
    for r in records:
        raw = np.frombuffer(blob[r.offset:r.offset + r.nbytes], dtype=np.dtype(PART_DTYPES[r.dtype]).newbyteorder("<"))
        arr = raw.astype(PART_DTYPES[r.dtype])
        if r.dtype in ("f32", "u32"):
            arr = arr.reshape(r.shape)
        tensors[r.name] = Part(r.dtype, r.shape, arr)
    c = Container(header["kind"], header["config"], tensors)
    validate(c)
    return c


def save(path, c: Container):
    with open(path, "wb") as f:
        f.write(write_container(c))


def load(path) -> Container:
    with open(path, "rb") as f:
        return read_container(f.read())


# ------------------------------------------------------------------ manifests

MODEL_KEYS = ("num_layers", "hidden_dim", "heads", "ff_dim", "vocab_size")


def _need(cond, msg):
    if not cond:
        raise ManifestError(msg)


def expected_parts(fmt: str, shape, meta: dict) -> dict:
    """Part name -> (dtype, shape) a payload of this format must carry."""
    rows, cols = shape
    if fmt == "bin":
        for key in ("block_size", "group_size", "n_salient"):
            _need(_is_int(meta.get(key)) and meta[key] >= (0 if key == "n_salient" else 1), f"bin payload meta lacks {key}")
        n_sal, bs, gs = meta["n_salient"], meta["block_size"], meta["group_size"]
        _need(n_sal <= cols, "more salient columns than columns")
        return {
            "signs": ("packedbin", (rows, cols)),
            "residual_signs": ("packedbin", (rows, n_sal)),
            "salient": ("u32", (n_sal,)),
            "column_groups": ("packedbin", (cols,)),
            "scales": ("f32", (-(-rows // gs), -(-cols // bs), 4)),
            "thresholds": ("f32", (-(-cols // bs),)),
        }
    family, bits = fmt[:-1], fmt[-1:]
    _need(family in ("rtn", "gptq") and bits == "4", f"unknown payload format {fmt!r}")
    _need(meta.get("bits") == 4 and _is_int(meta.get("group_size")) and meta["group_size"] >= 1,
          "uniform payload meta must give bits=4 and a positive group_size")
    return {"codes": ("packed4", (rows, cols)), "scales": ("f32", (rows, -(-cols // meta["group_size"])))}


def _validate_model(c: Container):
    cfg = c.config
    for key in MODEL_KEYS:
        _need(_is_int(cfg.get(key)) and cfg[key] >= 1, f"model config needs a positive integer {key!r}")
    _need(isinstance(cfg.get("positions", True), bool), "positions must be a boolean")
    L, d, heads, ff, V = (cfg[k] for k in MODEL_KEYS)
    _need(d % heads == 0, "hidden_dim must be divisible by heads")
    used = []

    def tensor(name, dtype, shape):
        _need(isinstance(name, str) and name in c.tensors, f"missing tensor {name!r}")
        part = c.tensors[name]
        _need(part.dtype == dtype and tuple(part.shape) == tuple(shape),
              f"tensor {name!r} should be {dtype}{list(shape)}, found {part.dtype}{list(part.shape)}")
        used.append(name)
        return part

    tensor(cfg.get("embed"), "f32", (V, d))
    tensor(cfg.get("head"), "f32", (V, d))
    layers = cfg.get("layers")
    _need(isinstance(layers, list) and len(layers) == L, "layer table length must equal num_layers")
    shapes = StackConfig(L, d, heads, ff, V).weight_shapes()
    quantized = False
    for i, layer in enumerate(layers):
        _need(isinstance(layer, dict) and layer.get("tag") in QUANT_TAGS, f"layer {i}: bad quant tag")
        weights = layer.get("weights")
        _need(isinstance(weights, dict) and sorted(weights) == sorted(LINEARS), f"layer {i}: needs weights {LINEARS}")
        for wname in LINEARS:
            entry = weights[wname]
            if layer["tag"] == "fp32":
                tensor(entry, "f32", shapes[wname])
                continue
            quantized = True
            _need(isinstance(entry, dict), f"layer {i} {wname}: quantized entry must be an object")
            _need(entry.get("format") == layer["tag"], f"layer {i} {wname}: payload format disagrees with tag")
            _need(entry.get("shape") == list(shapes[wname]), f"layer {i} {wname}: shape inconsistent with config")
            meta = entry.get("meta")
            _need(isinstance(meta, dict), f"layer {i} {wname}: meta must be an object")
            parts = entry.get("parts")
            want = expected_parts(entry["format"], shapes[wname], meta)
            _need(isinstance(parts, dict) and sorted(parts) == sorted(want), f"layer {i} {wname}: wrong part set")
            for pname, (dtype, shape) in want.items():
                tensor(parts[pname], dtype, shape)
            if entry["format"] == "bin":
                sal = c.tensors[parts["salient"]].data
                _need(np.all(np.diff(sal.astype(np.int64)) > 0) and (sal.size == 0 or int(sal.max()) < shapes[wname][1]),
                      f"layer {i} {wname}: salient columns must be ascending and in range")
    _need(len(used) == len(set(used)), "a tensor is referenced more than once")
    _need(set(used) == set(c.tensors), "container holds tensors the manifest does not reference")
    _need(quantized == (c.kind == "quantized"), "kind must be 'quantized' exactly when some layer is quantized")


def _validate_calib(c: Container):
    cfg = c.config
    for key in ("seq_len", "hidden_dim"):
        _need(_is_int(cfg.get(key)) and cfg[key] >= 1, f"calib config needs a positive integer {key!r}")
    alpha = cfg.get("alpha")
    _need(isinstance(alpha, (int, float)) and not isinstance(alpha, bool) and 0.0 <= alpha <= 1.0, "alpha must lie in [0, 1]")
    _need(_is_int(cfg.get("seed", 0)), "seed must be an integer")
    mod = cfg.get("modality")
    _need(isinstance(mod, list) and all(m in ("text", "multimodal") for m in mod), "modality must list text/multimodal")
    N, d = cfg["seq_len"], cfg["hidden_dim"]
    n_text = sum(m == "text" for m in mod)
    n_mm = len(mod) - n_text
    want = {"text_ids": ("u32", (n_text, N)), "mm_ids": ("u32", (n_mm, N)), "mm_embeds": ("f32", (n_mm, N, d))}
    _need(sorted(c.tensors) == sorted(want), f"calib container must hold exactly {sorted(want)}")
    for name, (dtype, shape) in want.items():
        part = c.tensors[name]
        _need(part.dtype == dtype and tuple(part.shape) == shape,
              f"tensor {name!r} should be {dtype}{list(shape)}, found {part.dtype}{list(part.shape)}")
    _need(not np.any(c.tensors["text_ids"].data == IMAGE_TOKEN), "text sequences cannot hold image positions")
    _need(np.all(np.isfinite(c.tensors["mm_embeds"].data)), "multimodal embeddings must be finite")


def validate(c: Container):
    if c.kind == "calib":
        _validate_calib(c)
    else:
        _validate_model(c)


# ------------------------------------------------------------------ stacks


def stack_to_container(stack: LayerStack, extra: dict | None = None) -> Container:
    """Manifest plus payloads; ``extra`` keys (e.g. a plan) ride along in the config."""
    cfg = stack.config
    tensors = {"embed": Part("f32", tuple(stack.embed.shape), np.ascontiguousarray(stack.embed, dtype=np.float32)),
               "head": Part("f32", tuple(stack.head.shape), np.ascontiguousarray(stack.head, dtype=np.float32))}
    layers = []
    for i, tag in enumerate(stack.tags):
        weights = {}
        for name in LINEARS:
            w = stack.layers[i][name]
            key = f"layers.{i}.{name}"
            if isinstance(w, QuantizedTensor):
                parts = {}
                for pname, part in w.parts.items():
                    tensors[f"{key}.{pname}"] = part
                    parts[pname] = f"{key}.{pname}"
                weights[name] = {"format": w.format, "shape": list(w.shape), "meta": dict(w.meta), "parts": parts}
            else:
                w = np.ascontiguousarray(w, dtype=np.float32)
                tensors[key] = Part("f32", tuple(w.shape), w)
                weights[name] = key
        layers.append({"tag": tag, "weights": weights})
    config = {
        "num_layers": cfg.num_layers, "hidden_dim": cfg.hidden_dim, "heads": cfg.heads,
        "ff_dim": cfg.ff_dim, "vocab_size": cfg.vocab_size, "positions": cfg.positions,
        "embed": "embed", "head": "head", "layers": layers,
    }
    for key, value in (extra or {}).items():
        if key in config:
            raise ManifestError(f"extra config key {key!r} collides with the manifest")
        config[key] = value
    kind = "model" if all(t == "fp32" for t in stack.tags) else "quantized"
    return Container(kind, config, tensors)


def stack_from_container(c: Container) -> LayerStack:
    if c.kind == "calib":
        raise ManifestError("expected a model container, got a calibration set")
    validate(c)
    cfg = c.config
    config = StackConfig(*(cfg[k] for k in MODEL_KEYS), positions=cfg.get("positions", True))
    layers, tags = [], []
    for layer in cfg["layers"]:
        weights = {}
        for name in LINEARS:
            entry = layer["weights"][name]
            if layer["tag"] == "fp32":
                weights[name] = c.tensors[entry].data
            else:
                parts = {p: c.tensors[t] for p, t in entry["parts"].items()}
                weights[name] = QuantizedTensor(entry["format"], tuple(entry["shape"]), parts, dict(entry["meta"]))
        layers.append(weights)
        tags.append(layer["tag"])
    return LayerStack(config, c.tensors[cfg["embed"]].data, c.tensors[cfg["head"]].data, layers, tags)


def save_stack(path, stack: LayerStack, extra: dict | None = None):
    save(path, stack_to_container(stack, extra))


def load_stack(path) -> LayerStack:
    return stack_from_container(load(path))
