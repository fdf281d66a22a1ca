"""Versioned binary checkpoints: model, optimizer, summary state and RNG state.

Layout (little-endian): ``MUSC`` magic, ``u32`` version, ``u64`` header length,
UTF-8 JSON header, ``u64`` array count, then per array ``u32`` name length,
name, ``u8`` dtype code, ``u32`` ndim, ``u64`` dims, raw data.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import MLP, ModelParams
from .unfold import SummaryState

MAGIC = b"MUSC"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8", 2: "|b1"}
_CODES = {np.dtype("float64"): 0, np.dtype("int64"): 1, np.dtype("bool"): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    state: SummaryState
    header: dict = field(default_factory=dict)
    optimizer_arrays: dict = field(default_factory=dict)


def save_checkpoint(path, params, state, header, optimizer=None, rng=None):
    header = dict(header)
    header["dropout"] = params.dropout
    header["f_widths"] = params.f.widths
    header["g_widths"] = params.g.widths
    if optimizer is not None:
        header["optimizer_kind"] = optimizer.kind
        header["optimizer_t"] = optimizer.t
    if rng is not None:
        header["rng_state"] = rng.bit_generator.state
    arrays = {f"param:{k}": v for k, v in params.arrays().items()}
    if optimizer is not None:
        arrays.update({f"opt:{k}": v for k, v in optimizer.state_arrays().items()})
    arrays["state:M"] = state.M
    arrays["state:c"] = state.c
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(arrays)))
        for name, a in arrays.items():
            a = np.asarray(a)
            code = _CODES[a.dtype]
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack(f"<BI{a.ndim}Q", code, a.ndim, *a.shape))
            fh.write(np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<IQ", data, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        arrays = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + klen].decode("utf-8")
            pos += klen
            code, ndim = struct.unpack_from("<BI", data, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            dtype = np.dtype(_DTYPES[code])
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: truncated checkpoint")
            arrays[name] = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize,
                                         offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
            pos += nbytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")

    def net(prefix, widths):
        L = len(widths) - 1
        return MLP([arrays[f"param:{prefix}.W{i}"] for i in range(L)],
                   [arrays[f"param:{prefix}.b{i}"] for i in range(L)])

    params = ModelParams(net("f", header["f_widths"]), net("g", header["g_widths"]), header["dropout"])
    state = SummaryState(arrays["state:M"], arrays["state:c"])
    opt = {k[4:]: v for k, v in arrays.items() if k.startswith("opt:")}
    return Checkpoint(params, state, header, opt)


def restore_rng(header):
    state = header.get("rng_state")
    if state is None:
        return None
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
