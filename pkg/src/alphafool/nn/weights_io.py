"""Self-describing weight container with integrity checking.

Layout: magic, 8-byte little-endian header length, JSON header (format
version, embedded model spec, tensor name/shape/dtype list), raw
little-endian float64 payload, trailing SHA-256 of everything before it.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .graph import ModelGraph

MAGIC = b"AFNN"
FORMAT_VERSION = 1


class WeightsIOError(ValueError):
    """Malformed, corrupted, or incompatible weight file."""


def save_weights(model: ModelGraph, path) -> None:
    tensors = []
    chunks = []
    for name, arr in model.param_items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "<f8"})
        chunks.append(arr.tobytes())
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "model": model.spec(),
        "tensors": tensors,
    }).encode()
    body = MAGIC + len(header).to_bytes(8, "little") + header + b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_weights(path, model: ModelGraph | None = None) -> ModelGraph:
    """Load a weight file, rebuilding the graph from the embedded spec.

    If a model is given, its architecture must match the stored tensor
    shapes; the first offending layer is named on mismatch.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 8 + 32:
        raise WeightsIOError(f"{path}: truncated file (checksum failure)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise WeightsIOError(f"{path}: checksum failure")
    if body[:len(MAGIC)] != MAGIC:
        raise WeightsIOError(f"{path}: not a weight file (bad magic)")
    header_len = int.from_bytes(body[len(MAGIC):len(MAGIC) + 8], "little")
    header_start = len(MAGIC) + 8
    try:
        header = json.loads(body[header_start:header_start + header_len])
    except json.JSONDecodeError as exc:
        raise WeightsIOError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise WeightsIOError(
            f"{path}: format version mismatch: file has "
            f"{header.get('format_version')}, reader supports {FORMAT_VERSION}")

    payload = body[header_start + header_len:]
    values: dict[str, np.ndarray] = {}
    offset = 0
    for t in header["tensors"]:
        if t["dtype"] != "<f8":
            raise WeightsIOError(f"{path}: unsupported dtype {t['dtype']}")
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        end = offset + 8 * n
        if end > len(payload):
            raise WeightsIOError(f"{path}: payload shorter than declared tensors")
        values[t["name"]] = np.frombuffer(
            payload[offset:end], dtype="<f8").reshape(t["shape"]).copy()
        offset = end

    if model is None:
        model = ModelGraph.from_spec(header["model"])
    else:
        for name, arr in model.param_items():
            if name not in values:
                raise WeightsIOError(f"{path}: missing tensor {name}")
            if tuple(values[name].shape) != arr.shape:
                raise WeightsIOError(
                    f"{path}: shape mismatch at {name}: file has "
                    f"{tuple(values[name].shape)}, model expects {arr.shape}")
    model.set_params(values)
    return model
