"""GRD1 raster files and their JSON sidecars.

Layout: magic ``GRD1``, u32 LE rank, ``rank`` u32 LE dimension sizes, then the
row-major float32 LE payload. Metadata lives next to the raster in a file with
the same basename and a ``.json`` suffix.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagicError, MissingSidecarError, ParseError, TruncatedPayloadError

MAGIC = b"GRD1"
SIDECAR_KEYS = ("variable", "units", "lat_min", "lat_max", "lon_min", "lon_max", "source", "timestamp")


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def encode(grid):
    grid = np.ascontiguousarray(grid, dtype="<f4")
    head = MAGIC + struct.pack("<I", grid.ndim) + struct.pack(f"<{grid.ndim}I", *grid.shape)
    return head + grid.tobytes()


def decode(buf):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise BadMagicError(f"not a GRD1 raster (magic {bytes(buf[:4])!r})")
    (rank,) = struct.unpack_from("<I", buf, 4)
    if rank < 1 or len(buf) < 8 + 4 * rank:
        raise TruncatedPayloadError(f"header truncated (rank {rank})")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    if min(shape) < 1:
        raise ParseError(f"zero-sized dimension in shape {shape}")
    offset = 8 + 4 * rank
    need = 4 * int(np.prod(shape))
    if len(buf) - offset != need:
        raise TruncatedPayloadError(f"payload has {len(buf) - offset} bytes, expected {need}")
    return np.frombuffer(buf, dtype="<f4", offset=offset).reshape(shape).astype(np.float32)


def write_grd(path, grid, meta=None):
    path = Path(path)
    path.write_bytes(encode(grid))
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def read_grd(path):
    return decode(Path(path).read_bytes())


def read_meta(path):
    side = sidecar_path(path)
    if not side.exists():
        raise MissingSidecarError(f"missing sidecar {side}")
    return json.loads(side.read_text())
