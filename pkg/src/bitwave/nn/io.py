"""Binary model files.

Layout (all little-endian)::

    b"BWNN" | u16 version | u32 crc32(payload) | payload
    payload = u32 header_len | header JSON (UTF-8)
              | float32 weight/bias tensors in layer order (W0, b0, W1, b1, ...)
              | pre-packed QuantizedTensor blocks, one per layer listed in header["packed"]
"""

import json
import struct
import zlib

import numpy as np

from ..dsp.stft import NormStats
from ..quant import QuantizedTensor
from .model import Model, ModelError, ModelSpec

MAGIC = b"BWNN"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class ModelFormatError(ModelError):
    pass


def model_to_bytes(model):
    spec = model.spec
    header = {
        "spec": spec.to_dict(),
        "meta": model.meta,
        "act_scales": [None if s is None else [float(v) for v in s] for s in model.act_scales],
        "feature_stats": model.feature_stats.to_dict() if model.feature_stats is not None else None,
        "target_stats": model.target_stats.to_dict() if model.target_stats is not None else None,
        "packed": [l for l, q in enumerate(model.packed) if q is not None],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [struct.pack("<I", len(head)), head]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    for l in header["packed"]:
        parts.append(model.packed[l].to_bytes())
    payload = b"".join(parts)
    return _PREFIX.pack(MAGIC, VERSION, zlib.crc32(payload)) + payload


def model_from_bytes(buf):
    if len(buf) < _PREFIX.size:
        raise ModelFormatError("truncated model file (checksum cannot be verified)")
    magic, version, crc = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise ModelFormatError("not a bitwave model file (bad magic)")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {VERSION})")
    payload = memoryview(buf)[_PREFIX.size :]
    if zlib.crc32(payload) != crc:
        raise ModelFormatError("checksum mismatch: model file is corrupt or truncated")
    (head_len,) = struct.unpack_from("<I", payload)
    header = json.loads(bytes(payload[4 : 4 + head_len]))
    spec = ModelSpec.from_dict(header["spec"])
    offset = 4 + head_len
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(payload, dtype="<f4", count=fan_in * fan_out, offset=offset)
        offset += 4 * w.size
        b = np.frombuffer(payload, dtype="<f4", count=fan_out, offset=offset)
        offset += 4 * b.size
        weights.append(w.astype(np.float32).reshape(fan_out, fan_in))
        biases.append(b.astype(np.float32))
    packed = [None] * spec.n_layers
    for l in header["packed"]:
        packed[l], offset = QuantizedTensor.from_bytes(payload, offset)
    if offset != len(payload):
        raise ModelFormatError(f"{len(payload) - offset} trailing bytes after model payload")
    scales = [None if s is None else np.asarray(s, dtype=np.float64) for s in header["act_scales"]]
    fs = header.get("feature_stats")
    ts = header.get("target_stats")
    return Model(
        spec,
        weights,
        biases,
        act_scales=scales,
        packed=packed,
        feature_stats=NormStats.from_dict(fs) if fs else None,
        target_stats=NormStats.from_dict(ts) if ts else None,
        meta=header.get("meta") or {},
    )


def save_model(model, path):
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
