"""Parameter checkpoint file format.

Layout: magic bytes ``TNSR1``, then one record per array:
name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE each),
values (f32 LE, row-major). Records run to end of file. The blob-level
helpers exist so the format can be embedded inside larger containers.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpoint

MAGIC = b"TNSR1"


def tensor_blob(arrays: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    return b"".join(chunks)


def parse_tensor_blob(blob: bytes, origin: str = "checkpoint") -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{origin}: bad magic (expected {MAGIC!r})")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    total = len(blob)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > total:
            raise CorruptCheckpoint(f"{origin}: truncated while reading {what}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < total:
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        if rank > 8:
            raise CorruptCheckpoint(f"{origin}: implausible rank {rank} for {name!r}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(4 * count, f"values of {name!r}"), dtype="<f4")
        out[name] = values.reshape(dims).astype(np.float32)
    return out


def save_tensors(arrays: dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(tensor_blob(arrays))


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    return parse_tensor_blob(path.read_bytes(), origin=str(path))
