"""Self-describing binary checkpoint.

Layout:

    magic "TAWQ" | version u16 | header length u32 | header JSON (utf-8)
    | tensor count u32 | tensors... | crc32 u32

Per tensor: name length u16, name utf-8, dtype tag u8 (0 = float64,
1 = int64, 2 = 2-bit packed ternary), ndim u8, dims u32 each, byte
length u64, raw payload.  The trailing CRC covers everything before it.
The header JSON carries the run-configuration echo and a metrics summary.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, StateError
from .layers import BatchNorm, Network
from .runconfig import RunConfig, build_network, parse_runconfig
from .runtime import PackedTernaryTensor, pack_ternary, unpack_ternary

MAGIC = b"TAWQ"
VERSION = 1

TAG_F64, TAG_I64, TAG_PACKED2 = 0, 1, 2


@dataclass
class Checkpoint:
    runconfig: dict
    metrics: dict
    tensors: dict[str, np.ndarray | PackedTernaryTensor] = field(default_factory=dict)


def _tensor_bytes(name: str, value) -> bytes:
    if isinstance(value, PackedTernaryTensor):
        tag, dims, payload = TAG_PACKED2, value.shape, value.codes
    else:
        arr = np.ascontiguousarray(value)
        if arr.dtype == np.int64:
            tag = TAG_I64
        else:
            arr = arr.astype(np.float64)
            tag = TAG_F64
        dims, payload = arr.shape, arr.tobytes()
    name_b = name.encode()
    head = struct.pack("<H", len(name_b)) + name_b
    head += struct.pack("<BB", tag, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    head += struct.pack("<Q", len(payload))
    return head + payload


def _read_tensor(blob: bytes, off: int):
    (nlen,) = struct.unpack_from("<H", blob, off)
    off += 2
    name = blob[off:off + nlen].decode()
    off += nlen
    tag, ndim = struct.unpack_from("<BB", blob, off)
    off += 2
    dims = struct.unpack_from(f"<{ndim}I", blob, off)
    off += 4 * ndim
    (blen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    payload = blob[off:off + blen]
    off += blen
    if tag == TAG_PACKED2:
        value = PackedTernaryTensor(codes=payload, shape=tuple(dims))
    elif tag == TAG_I64:
        value = np.frombuffer(payload, dtype=np.int64).reshape(dims).copy()
    else:
        value = np.frombuffer(payload, dtype=np.float64).reshape(dims).copy()
    return name, value, off


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    header = json.dumps({"runconfig": ckpt.runconfig, "metrics": ckpt.metrics},
                        sort_keys=True).encode()
    body = MAGIC + struct.pack("<H", VERSION)
    body += struct.pack("<I", len(header)) + header
    body += struct.pack("<I", len(ckpt.tensors))
    for name, value in ckpt.tensors.items():
        body += _tensor_bytes(name, value)
    body += struct.pack("<I", zlib.crc32(body))
    with open(path, "wb") as fh:
        fh.write(body)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a TAWQ checkpoint")
    (crc_stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != crc_stored:
        raise DataError(f"{path}: checksum mismatch, checkpoint is corrupt")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", blob, 6)
    off = 10
    header = json.loads(blob[off:off + hlen].decode())
    off += hlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    tensors: dict = {}
    for _ in range(count):
        name, value, off = _read_tensor(blob, off)
        tensors[name] = value
    return Checkpoint(runconfig=header["runconfig"], metrics=header["metrics"],
                      tensors=tensors)


def checkpoint_from_network(net: Network, cfg: RunConfig,
                            metrics: dict | None = None) -> Checkpoint:
    """Snapshot all parameters, BN buffers, and per-timestep packed weights."""
    tensors: dict = {}
    for i, layer in enumerate(net.layers):
        for pname, value in layer.params.items():
            tensors[f"{i}.{pname}"] = value
        if isinstance(layer, BatchNorm):
            tensors[f"{i}.running_mean"] = layer.running_mean
            tensors[f"{i}.running_var"] = layer.running_var
        if layer.kind in ("qlinear", "qconv"):
            if layer.state is None:
                layer.materialize()
            tensors[f"{i}.alpha"] = layer.alpha
            for t, w in enumerate(layer.state.w_q):
                if layer.quant.n_level == 1:
                    tensors[f"{i}.w_q.{t}"] = pack_ternary(w)
                else:
                    tensors[f"{i}.w_q.{t}"] = w.astype(np.int64)
    return Checkpoint(runconfig=cfg.to_dict(), metrics=metrics or {},
                      tensors=tensors)


def network_from_checkpoint(ckpt: Checkpoint) -> tuple[Network, RunConfig]:
    """Rebuild the network: restore parameters and buffers, re-materialize
    quantized weights, and verify them against the stored packed stacks."""
    cfg = parse_runconfig(ckpt.runconfig)
    net = build_network(cfg)
    for i, layer in enumerate(net.layers):
        for pname in layer.params:
            key = f"{i}.{pname}"
            if key not in ckpt.tensors:
                raise StateError(f"checkpoint missing tensor {key}")
            layer.params[pname] = np.asarray(ckpt.tensors[key])
        if isinstance(layer, BatchNorm):
            layer.running_mean = np.asarray(ckpt.tensors[f"{i}.running_mean"])
            layer.running_var = np.asarray(ckpt.tensors[f"{i}.running_var"])
        if layer.kind in ("qlinear", "qconv"):
            layer.materialize()
            for t, w in enumerate(layer.state.w_q):
                key = f"{i}.w_q.{t}"
                stored = ckpt.tensors.get(key)
                if stored is None:
                    raise StateError(f"checkpoint missing tensor {key}")
                if isinstance(stored, PackedTernaryTensor):
                    stored = unpack_ternary(stored)
                if not np.array_equal(np.asarray(stored, dtype=np.float64), w):
                    raise DataError(
                        f"checkpoint tensor {key} disagrees with the stimulus")
    return net, cfg
