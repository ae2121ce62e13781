"""CKPT1 model checkpoints.

Layout: magic ``CKPT1``, u32 LE header length, UTF-8 JSON header, then the
parameters' float32 LE payloads concatenated in model order. The header holds
the architecture spec, the init seed, an optional training-config record and a
parameter table of name / shape / byte offset.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ParseError, TruncatedPayloadError
from .models import ArchitectureSpec, build

MAGIC = b"CKPT1"


def dumps(model, training=None):
    table, chunks, offset = [], [], 0
    for p in model.parameters:
        buf = np.ascontiguousarray(p.value, dtype="<f4").tobytes()
        table.append({"name": p.name, "shape": list(p.value.shape), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    header = {"spec": model.spec.to_dict(), "seed": model.seed, "parameters": table}
    if training is not None:
        header["training"] = training
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)


def loads(buf):
    """Rebuild a Model (and the stored training record) from CKPT1 bytes."""
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not a CKPT1 checkpoint")
    start = len(MAGIC) + 4
    if len(buf) < start:
        raise TruncatedPayloadError("checkpoint header truncated")
    (hlen,) = struct.unpack_from("<I", buf, len(MAGIC))
    try:
        header = json.loads(buf[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}") from exc
    payload = memoryview(buf)[start + hlen :]
    model = build(ArchitectureSpec.from_dict(header["spec"]), header["seed"])
    by_name = model.named()
    if set(by_name) != {e["name"] for e in header["parameters"]}:
        raise ParseError("checkpoint parameter table does not match its architecture spec")
    for entry in header["parameters"]:
        p = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != p.value.shape:
            raise ParseError(f"{entry['name']}: stored shape {shape} != model shape {p.value.shape}")
        n = int(np.prod(shape)) * 4
        if entry["offset"] + n > len(payload):
            raise TruncatedPayloadError(f"payload truncated at {entry['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=n // 4, offset=entry["offset"])
        p.value = arr.reshape(shape).astype(np.float32)
        p.grad = np.zeros_like(p.value)
    return model, header.get("training")


def save(model, path, training=None):
    path = Path(path)
    path.write_bytes(dumps(model, training))
    return path


def load(path):
    return loads(Path(path).read_bytes())


def checkpoint_id(model):
    """Short content hash of a model's spec and parameter values."""
    return hashlib.sha256(dumps(model)).hexdigest()[:16]
