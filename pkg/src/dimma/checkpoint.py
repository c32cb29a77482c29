"""Binary checkpoint container shared by the MDN and the UNet.

Layout (all integers little-endian)::

    magic           bytes, e.g. b"DIMMA-MDN\\0" or b"DIMMA-UNET\\0"
    version         u32 (currently 1)
    config_len      u32
    config          UTF-8 JSON, keys sorted
    n_tensors       u32
    n_tensors times:
        name_len    u16
        name        UTF-8
        ndim        u8
        dims        ndim x u32
        data        prod(dims) x float32 LE, C order

Tensors are written in module declaration order (``state_dict`` order).
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

VERSION = 1


def write_checkpoint(path, magic, config, state_dict):
    chunks = [magic, struct.pack("<I", VERSION)]
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(state_dict))]
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path, magic):
    buf = Path(path).read_bytes()
    if not buf.startswith(magic):
        raise CheckpointError(f"{path}: bad magic header, expected {magic!r}")
    pos = len(magic)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = take("<I")
    config = json.loads(buf[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = take("<I")
    state = OrderedDict()
    for _ in range(count):
        (name_len,) = take("<H")
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 4 * n > len(buf):
            raise CheckpointError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims)
        pos += 4 * n
        state[name] = torch.from_numpy(arr.astype(np.float32))
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return config, state
