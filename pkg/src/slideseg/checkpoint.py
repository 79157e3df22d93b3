"""Model checkpoints: config record, named parameters, BN running stats.

Layout: magic ``SGCK``, format version u16, a length-prefixed canonical
config block (``key=value`` lines in fixed field order), then named
parameter records, then named buffer records. Every tensor is stored in the
raw tensor format, so round trips are bit-exact. Loading rebuilds the model
from the config and validates every stored shape against it.
"""

import struct

import numpy as np

from . import network, tensor_io
from .tensor_io import FormatError

MAGIC = b"SGCK"
VERSION = 1


def _pack_named(name, arr):
    encoded = name.encode("utf-8")
    return struct.pack("<H", len(encoded)) + encoded + tensor_io.tensor_bytes(arr)


def _unpack_named(buf, offset):
    (nlen,) = struct.unpack_from("<H", buf, offset)
    offset += 2
    name = buf[offset : offset + nlen].decode("utf-8")
    offset += nlen
    arr, offset = tensor_io.read_tensor(buf, offset)
    return name, arr, offset


def checkpoint_bytes(model):
    cfg_block = "\n".join(f"{k}={v}" for k, v in model.cfg.canonical_items()).encode("utf-8")
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(cfg_block)), cfg_block]

    params = list(model.named_parameters())
    out.append(struct.pack("<I", len(params)))
    for name, p in params:
        out.append(_pack_named(name, p.data))

    buffers = list(model.named_buffers())
    out.append(struct.pack("<I", len(buffers)))
    for name, b in buffers:
        out.append(_pack_named(name, b))
    return b"".join(out)


def save_checkpoint(path, model):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes and restore its state."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", buf, 6)
    offset = 10
    cfg_text = buf[offset : offset + cfg_len].decode("utf-8")
    offset += cfg_len
    items = [line.split("=", 1) for line in cfg_text.split("\n") if line]
    try:
        cfg = network.NetworkConfig.from_items(items)
    except (KeyError, ValueError, IndexError) as exc:
        raise FormatError(f"invalid checkpoint config: {exc}") from exc
    model = network.SegNet(cfg)

    params = dict(model.named_parameters())
    (n_params,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if n_params != len(params):
        raise FormatError(f"checkpoint has {n_params} parameters, model needs {len(params)}")
    seen = set()
    for _ in range(n_params):
        name, arr, offset = _unpack_named(buf, offset)
        if name not in params:
            raise FormatError(f"unexpected parameter {name!r}")
        target = params[name]
        if arr.shape != target.data.shape:
            raise FormatError(f"{name}: stored shape {arr.shape} != expected {target.data.shape}")
        target.data = arr.astype(target.data.dtype, copy=False)
        target.name = name
        seen.add(name)
    if seen != set(params):
        raise FormatError(f"missing parameters: {sorted(set(params) - seen)}")

    buffers = dict(model.named_buffers())
    (n_buffers,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if n_buffers != len(buffers):
        raise FormatError(f"checkpoint has {n_buffers} buffers, model needs {len(buffers)}")
    for _ in range(n_buffers):
        name, arr, offset = _unpack_named(buf, offset)
        if name not in buffers:
            raise FormatError(f"unexpected buffer {name!r}")
        if arr.shape != buffers[name].shape:
            raise FormatError(f"{name}: stored shape {arr.shape} != expected {buffers[name].shape}")
        buffers[name][...] = arr
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes in checkpoint")
    return model
