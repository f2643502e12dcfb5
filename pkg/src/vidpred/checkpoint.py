"""Single-file checkpoint container.

Layout (all integers little-endian)::

    b"VIDPRED1"
    u64 header length, header JSON (utf-8)
    repeated blocks:
        u32 name length, name (utf-8)
        u8  dtype code (b'f' float32, b'd' float64, b'B' uint8, b'q' int64)
        u32 ndim, u64 * ndim shape
        u64 byte length, raw little-endian data

The header also lists ``blocks`` as ``[name, dtype, shape]`` in file order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"VIDPRED1"
_CODES = {np.dtype("<f4"): b"f", np.dtype("<f8"): b"d", np.dtype("u1"): b"B",
          np.dtype("<i8"): b"q"}
_DTYPES = {v: k for k, v in _CODES.items()}


class CheckpointFormatError(ValueError):
    pass


def _as_array(x):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x)
    return np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))


def write_container(path, header: dict, blocks: dict):
    """Atomically write ``header`` and named array ``blocks`` to ``path``."""
    path = Path(path)
    arrays = {k: _as_array(v) for k, v in blocks.items()}
    for k, a in arrays.items():
        if a.dtype not in _CODES:
            raise CheckpointFormatError(f"block {k!r}: unsupported dtype {a.dtype}")
    header = dict(header)
    header["blocks"] = [[k, a.dtype.str, list(a.shape)] for k, a in arrays.items()]
    hbytes = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for name, a in arrays.items():
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(_CODES[a.dtype])
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            data = a.tobytes()
            fh.write(struct.pack("<Q", len(data)))
            fh.write(data)
    os.replace(tmp, path)
    return path


def read_container(path):
    """Return ``(header, blocks)`` with blocks as numpy arrays."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    try:
        return _parse(buf)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"{path}: truncated or corrupt checkpoint ({e})") from e


def _parse(buf):
    pos = 8
    (hlen,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    blocks = {}
    while pos < len(buf):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        code = buf[pos:pos + 1]
        pos += 1
        if code not in _DTYPES:
            raise CheckpointFormatError(f"block {name!r}: unknown dtype code {code!r}")
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        (nbytes,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        if pos + nbytes > len(buf):
            raise CheckpointFormatError(f"block {name!r} runs past end of file")
        arr = np.frombuffer(buf, dtype=_DTYPES[code], count=nbytes // _DTYPES[code].itemsize,
                            offset=pos).reshape(shape)
        pos += nbytes
        blocks[name] = arr.copy()
    return header, blocks


def module_blocks(prefix, module):
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_module_blocks(prefix, module, blocks):
    sd = module.state_dict()
    missing = [k for k in sd if f"{prefix}/{k}" not in blocks]
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks {prefix} entries: {missing[:5]}")
    module.load_state_dict({k: torch.from_numpy(blocks[f"{prefix}/{k}"]).to(sd[k].dtype)
                            for k in sd})


def optimizer_blocks(prefix, opt):
    """Split an optimizer state dict into array blocks and a JSON-able header part."""
    sd = opt.state_dict()
    blocks = {}
    for pid, st in sd["state"].items():
        for key, val in st.items():
            blocks[f"{prefix}/{pid}/{key}"] = val
    return blocks, {"param_groups": sd["param_groups"],
                    "state_keys": {str(pid): sorted(st) for pid, st in sd["state"].items()}}


def load_optimizer_blocks(prefix, opt, blocks, meta):
    state = {}
    for pid, keys in meta["state_keys"].items():
        state[int(pid)] = {k: torch.from_numpy(blocks[f"{prefix}/{pid}/{k}"].copy()) for k in keys}
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})
