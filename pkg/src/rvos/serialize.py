"""Little-endian binary tensor records and named checkpoints.

Tensor record::

    u32 rank | u32 dims[rank] | f64 data[prod(dims)]   (row-major)

Checkpoint file::

    u32 count | count x (u32 key_len | utf-8 key | tensor record)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from .errors import ContractError


def write_tensor(fh: BinaryIO, arr) -> None:
    arr = np.asarray(arr, dtype="<f8", order="C")  # keeps rank-0 arrays rank 0
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    head = fh.read(4)
    if len(head) != 4:
        raise ContractError("truncated tensor record (rank)")
    (rank,) = struct.unpack("<I", head)
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ContractError(f"truncated tensor record: expected {count} values")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)


def tensor_to_bytes(arr) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(raw))


def save_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_checkpoint(path, state: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(state)))
        for key in sorted(state):
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_tensor(fh, state[key])


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", fh.read(4))
            key = fh.read(n).decode("utf-8")
            state[key] = read_tensor(fh)
    return state
