"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic   8 bytes  b"HFBCKPT\\0"
    version u32
    hlen    u64      length of the JSON header
    header  hlen bytes, UTF-8 JSON (sorted keys, compact separators)
    blocks  concatenated payloads addressed by the header's ``tensors`` table

Full-precision arrays are stored as float32 little-endian. Ternary matrices are
stored row-major at 2 bits per entry, four entries per byte starting at the low
bits, with codes ``00 -> 0``, ``01 -> +1``, ``10 -> -1``; ``11`` is invalid.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..arch import ArchSpec, QuantPlan
from ..network import Network, instantiate
from ..quant import TernaryMatrix
from ..spn import LifecycleState

MAGIC = b"HFBCKPT\x00"
VERSION = 1
_PRELUDE = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# 2-bit packing
# ---------------------------------------------------------------------------

def pack_ternary(entries: np.ndarray) -> bytes:
    flat = np.asarray(entries, dtype=np.int8).reshape(-1)
    codes = np.zeros(flat.size, dtype=np.uint8)
    codes[flat == 1] = 1
    codes[flat == -1] = 2
    if not np.isin(flat, (-1, 0, 1)).all():
        raise CheckpointError("ternary entries outside {-1, 0, +1}")
    pad = (-flat.size) % 4
    codes = np.concatenate([codes, np.zeros(pad, dtype=np.uint8)]).reshape(-1, 4)
    packed = codes[:, 0] | (codes[:, 1] << 2) | (codes[:, 2] << 4) | (codes[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def unpack_ternary(buf: bytes, n: int) -> np.ndarray:
    if len(buf) != (n + 3) // 4:
        raise CheckpointError("ternary block has the wrong length")
    b = np.frombuffer(buf, dtype=np.uint8)
    codes = np.stack([(b >> s) & 3 for s in (0, 2, 4, 6)], axis=1).reshape(-1)[:n]
    if (codes == 3).any():
        raise CheckpointError("invalid ternary code 11")
    out = np.zeros(n, dtype=np.int8)
    out[codes == 1] = 1
    out[codes == 2] = -1
    return out


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    network: Network
    optimizer_state: Optional[list] = None
    rng_state: Optional[dict] = None
    cursor: dict = field(default_factory=dict)
    metrics: list = field(default_factory=list)
    config: Optional[dict] = None
    teacher: Optional[Network] = None


def _encode_tensors(prefix: str, items, table: list, blobs: list, offset: list) -> None:
    for name, value in items:
        if isinstance(value, TernaryMatrix):
            data = pack_ternary(value.entries)
            entry = {"name": prefix + name, "kind": "ternary", "shape": list(value.shape),
                     "scale": value.scale, "degenerate": bool(value.degenerate)}
        elif value is None:
            continue
        else:
            arr = np.asarray(value)
            data = arr.astype("<f4").tobytes()
            entry = {"name": prefix + name, "kind": "fp32", "shape": list(arr.shape)}
        entry.update(offset=offset[0], nbytes=len(data))
        table.append(entry)
        blobs.append(data)
        offset[0] += len(data)


def checkpoint_bytes(network: Network, optimizer_state: Optional[list] = None,
                     rng_state: Optional[dict] = None, cursor: Optional[dict] = None,
                     metrics: Optional[list] = None, config: Optional[dict] = None,
                     teacher: Optional[Network] = None) -> bytes:
    table: list = []
    blobs: list = []
    offset = [0]
    _encode_tensors("net.", network.state_dict().items(), table, blobs, offset)
    if teacher is not None:
        _encode_tensors("teacher.", teacher.state_dict().items(), table, blobs, offset)
    if optimizer_state is not None:
        _encode_tensors("opt.", ((str(i), b) for i, b in enumerate(optimizer_state)), table, blobs, offset)
    header = {
        "arch": network.spec.to_dict(),
        "plan": network.plan.to_dict(),
        "seed": network.seed,
        "phase": network.phase.value,
        "teacher_phase": teacher.phase.value if teacher is not None else None,
        "optimizer_len": None if optimizer_state is None else len(optimizer_state),
        "rng_state": rng_state,
        "cursor": cursor or {},
        "metrics": metrics or [],
        "config": config,
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PRELUDE.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(path, network: Network, **kwargs) -> bytes:
    data = checkpoint_bytes(network, **kwargs)
    Path(path).write_bytes(data)
    return data


def _decode(header: dict, body: bytes, prefix: str) -> "OrderedDict[str, Any]":
    out: OrderedDict[str, Any] = OrderedDict()
    for t in header["tensors"]:
        if not t["name"].startswith(prefix):
            continue
        end = t["offset"] + t["nbytes"]
        if end > len(body):
            raise CheckpointError("checkpoint is truncated")
        raw = body[t["offset"]:end]
        n = int(np.prod(t["shape"], dtype=np.int64))
        name = t["name"][len(prefix):]
        if t["kind"] == "ternary":
            ent = unpack_ternary(raw, n).reshape(t["shape"])
            out[name] = TernaryMatrix(ent, t["scale"], t.get("degenerate", False))
        elif t["kind"] == "fp32":
            if len(raw) != 4 * n:
                raise CheckpointError(f"{t['name']}: wrong byte count")
            out[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(t["shape"])
        else:
            raise CheckpointError(f"unknown tensor kind {t['kind']!r}")
    return out


def _rebuild(spec: ArchSpec, plan: QuantPlan, seed: int, phase: str, state) -> Network:
    net = instantiate(spec, plan, seed)
    phase = LifecycleState(phase)
    net.set_phase(phase)
    net.load_state_dict(state, phase)
    return net


def read_header(data: bytes) -> tuple[dict, bytes]:
    if len(data) < _PRELUDE.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, hlen = _PRELUDE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {VERSION}")
    if len(data) < _PRELUDE.size + hlen:
        raise CheckpointError("checkpoint is truncated")
    header = json.loads(data[_PRELUDE.size:_PRELUDE.size + hlen].decode("utf-8"))
    body = data[_PRELUDE.size + hlen:]
    need = max((t["offset"] + t["nbytes"] for t in header["tensors"]), default=0)
    if len(body) < need:
        raise CheckpointError("checkpoint is truncated")
    if len(body) > need:
        raise CheckpointError("trailing bytes after the last block")
    return header, body


def load_checkpoint_bytes(data: bytes) -> Checkpoint:
    header, body = read_header(data)
    spec = ArchSpec.from_dict(header["arch"])
    plan = QuantPlan.from_dict(header["plan"])
    net = _rebuild(spec, plan, header["seed"], header["phase"], _decode(header, body, "net."))
    teacher = None
    if header.get("teacher_phase"):
        teacher = _rebuild(spec, plan, header["seed"], header["teacher_phase"], _decode(header, body, "teacher."))
        teacher.eval()
    opt = None
    if header.get("optimizer_len") is not None:
        arrays = _decode(header, body, "opt.")
        opt = [arrays.get(str(i)) for i in range(header["optimizer_len"])]
    return Checkpoint(net, opt, header.get("rng_state"), header.get("cursor", {}), header.get("metrics", []),
                      header.get("config"), teacher)


def load_checkpoint(path) -> Checkpoint:
    return load_checkpoint_bytes(Path(path).read_bytes())
