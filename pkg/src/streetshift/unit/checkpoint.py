"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"UNITCKPT"  magic
    u16          format version
    u32, bytes   metadata JSON (config, step, RNG state, optimizer scalars)
    u32          number of arrays
    per array:   u16 name length, name (utf-8), u8 rank, rank x u32 extents, u64 payload offset
    payloads     float32 little-endian, at the recorded offsets
    u32          CRC-32 of everything before it
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..numeric import AdamState, Parameter
from .model import TrainState, UnitConfig, UnitModel, _layout

MAGIC = b"UNITCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointCorrupt(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _opt_meta(opt: AdamState):
    return {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step}


def to_bytes(model: UnitModel) -> bytes:
    arrays = {f"param/{k}": p.data for k, p in model.params.items()}
    meta = {
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "lambdas": list(model.config.lambdas),
        "step": 0,
    }
    st = model.train_state
    if st is not None:
        meta["step"] = st.step
        meta["rng_state"] = st.rng.bit_generator.state
        for key, opt in (("gen_opt", st.gen_opt), ("dis_opt", st.dis_opt)):
            meta[key] = _opt_meta(opt)
            for name in sorted(opt.m):
                arrays[f"{key}/m/{name}"] = opt.m[name]
                arrays[f"{key}/v/{name}"] = opt.v[name]
    meta_b = json.dumps(meta, sort_keys=True).encode()

    names = list(arrays)
    table_size = sum(2 + len(n.encode()) + 1 + 4 * arrays[n].ndim + 8 for n in names)
    offset = len(MAGIC) + 2 + 4 + len(meta_b) + 4 + table_size
    head = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(meta_b)), meta_b,
            struct.pack("<I", len(names))]
    payloads = []
    for n in names:
        a = np.ascontiguousarray(arrays[n], dtype="<f4")
        nb = n.encode()
        head.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim)
                    + struct.pack(f"<{a.ndim}I", *a.shape) + struct.pack("<Q", offset))
        payloads.append(a.tobytes())
        offset += a.nbytes
    body = b"".join(head + payloads)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: UnitModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(model))
    tmp.replace(path)


def _read(buf, pos, fmt):
    size = struct.calcsize(fmt)
    if pos + size > len(buf):
        raise CheckpointCorrupt("truncated checkpoint header")
    return struct.unpack_from(fmt, buf, pos), pos + size


def from_bytes(buf: bytes) -> UnitModel:
    if len(buf) < len(MAGIC) + 2 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointCorrupt("not a checkpoint (bad magic)")
    (version,), pos = _read(buf, len(MAGIC), "<H")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(buf) < 4 or struct.unpack("<I", buf[-4:])[0] != zlib.crc32(buf[:-4]):
        raise CheckpointCorrupt("checksum mismatch (truncated or damaged file)")
    body_end = len(buf) - 4
    (mlen,), pos = _read(buf, pos, "<I")
    try:
        meta = json.loads(buf[pos : pos + mlen])
    except ValueError as exc:
        raise CheckpointCorrupt(f"bad metadata: {exc}") from None
    pos += mlen
    (count,), pos = _read(buf, pos, "<I")
    arrays = {}
    for _ in range(count):
        (nlen,), pos = _read(buf, pos, "<H")
        name = buf[pos : pos + nlen].decode()
        pos += nlen
        (rank,), pos = _read(buf, pos, "<B")
        shape, pos = _read(buf, pos, f"<{rank}I")
        (off,), pos = _read(buf, pos, "<Q")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > body_end:
            raise CheckpointCorrupt(f"payload of {name!r} runs past end of file")
        arrays[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape).astype(np.float32)

    cfg = meta["config"]
    cfg["lambdas"] = tuple(cfg["lambdas"])
    config = UnitConfig(**cfg)
    if config.hash() != meta.get("config_hash"):
        raise CheckpointCorrupt("config hash mismatch")
    params = {}
    for name, shape in _layout(config):
        a = arrays.get(f"param/{name}")
        if a is None:
            raise CheckpointError(f"missing parameter {name!r}")
        if a.shape != shape:
            raise CheckpointError(f"parameter {name!r}: shape {a.shape} does not match config {shape}")
        params[name] = Parameter(name, a)
    model = UnitModel(config, params)
    if "rng_state" in meta:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        opts = {}
        for key in ("gen_opt", "dis_opt"):
            om = meta[key]
            opt = AdamState(lr=om["lr"], beta1=om["beta1"], beta2=om["beta2"], eps=om["eps"], step=om["step"])
            prefix = f"{key}/m/"
            for k in arrays:
                if k.startswith(prefix):
                    pname = k[len(prefix):]
                    opt.m[pname] = arrays[k]
                    opt.v[pname] = arrays[f"{key}/v/{pname}"]
            opts[key] = opt
        model.train_state = TrainState(meta["step"], rng, opts["gen_opt"], opts["dis_opt"])
    return model


def load_checkpoint(path) -> UnitModel:
    return from_bytes(Path(path).read_bytes())
