"""Binary checkpoint container for named float32 parameter arrays.

Layout (little-endian):
    magic   7 bytes  b"DSCKPT1"
    count   u32      number of records
    record  repeated:
        name_len u32, name UTF-8 bytes,
        rank u32, dims rank x u32,
        payload rank-product x float32
"""

import struct

import numpy as np

MAGIC = b"DSCKPT1"


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays):
    """Write name -> float array records; order is the dict's order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_arrays(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (count,) = take("<I")
    out = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = payload.copy()
    return out


def save_model(path, module):
    save_arrays(path, {name: p.data for name, p in module.named_parameters()})


def load_model(path, module):
    """Load arrays into the module's parameters in place; shapes must match."""
    arrays = load_arrays(path)
    for name, p in module.named_parameters():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"parameter {name!r} shape {arr.shape} != model shape {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
