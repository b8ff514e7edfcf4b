"""SAMO checkpoint files.

Little-endian layout::

    magic    4s    b"SAMO"
    version  u32   1
    N        u32   specialist count
    K        u32   activity classes
    digest   32s   sha256 of the JSON block below
    jlen     u32
    json     jlen bytes, UTF-8: model config, frozen parameter names, run config
    count    u32   number of tensor records
    -- per record --
    nlen     u32
    name     nlen bytes, dotted path (parameters and normalization buffers)
    rank     u32
    dims     rank * u32
    payload  prod(dims) float32
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import FormatError
from .model import SamoeModel

MAGIC = b"SAMO"
VERSION = 1
_HEAD = struct.Struct("<4s3I32sI")
_U32 = struct.Struct("<I")


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _tensors(model: SamoeModel) -> list[tuple[str, np.ndarray]]:
    out = [(name, p.data) for name, p in model.named_parameters()]
    out += list(model.named_buffers())
    return out


def dumps(model: SamoeModel, run_config: dict | None = None) -> bytes:
    meta = {
        "model": model.config(),
        "frozen": sorted(name for name, p in model.named_parameters() if p.frozen),
        "run": run_config or {},
    }
    blob = _canonical(meta)
    n_classes = model.specialists[0].head.weight.shape[0]
    parts = [_HEAD.pack(MAGIC, VERSION, model.n_specialists, n_classes, hashlib.sha256(blob).digest(), len(blob)), blob]
    tensors = _tensors(model)
    parts.append(_U32.pack(len(tensors)))
    for name, arr in tensors:
        raw = name.encode()
        parts.append(_U32.pack(len(raw)) + raw + struct.pack(f"<{1 + arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def read_meta(buf: bytes) -> dict:
    """Validate the header and return the JSON block (plus ``n``, ``k``)."""
    r = _Reader(buf)
    magic, version, n, k, digest, jlen = _HEAD.unpack(r.take(_HEAD.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (this build reads {VERSION})", 4)
    start = r.pos
    blob = r.take(jlen, "config block")
    if hashlib.sha256(blob).digest() != digest:
        raise FormatError("config digest mismatch", start)
    try:
        meta = json.loads(blob)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"config block is not valid JSON: {exc}", start) from exc
    if meta.get("model", {}).get("n_specialists") != n:
        raise FormatError("header specialist count disagrees with config", 8)
    meta["_offset"] = r.pos
    meta["n"], meta["k"] = n, k
    return meta


def loads(buf: bytes) -> tuple[SamoeModel, dict]:
    """Rebuild the model; returns ``(model, run_config)``."""
    meta = read_meta(buf)
    cfg = meta["model"]
    try:
        model = SamoeModel(
            variant=cfg["variant"],
            seed=cfg["seed"],
            context_mode=cfg["context_mode"],
            memo_adapter=cfg["memo_adapter"],
            attention_hidden=cfg["attention_hidden"],
            n_classes=cfg["n_classes"],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"incomplete model config: {exc}", _HEAD.size) from exc
    if cfg["n_classes"] != meta["k"]:
        raise FormatError("header class count disagrees with config", 12)
    model.backbone_trained = True
    for _ in range(meta["n"] - 1):
        model.add_specialist()
    model.backbone_trained = bool(cfg["backbone_trained"])
    model.domain_ids = list(cfg["domain_ids"])

    params = dict(model.named_parameters())
    buffers = {}
    for prefix, module in _buffer_owners(model):
        for key in module._buffers:
            buffers[prefix + key] = (module, key)
    r = _Reader(buf)
    r.pos = meta["_offset"]
    count = r.u32("record count")
    seen = set()
    for _ in range(count):
        at = r.pos
        name = r.take(r.u32("name length"), "name").decode("utf-8", errors="replace")
        rank = r.u32("rank")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * size, f"payload of {name}"), dtype="<f4").astype(np.float64).reshape(dims)
        if not np.isfinite(arr).all():
            raise FormatError(f"non-finite values in {name}", at)
        if name in params:
            target = params[name]
            if target.shape != arr.shape:
                raise FormatError(f"{name}: stored shape {arr.shape} != model shape {target.shape}", at)
            target.data = arr
        elif name in buffers:
            module, key = buffers[name]
            if module._buffers[key].shape != arr.shape:
                raise FormatError(f"{name}: stored shape {arr.shape} != buffer shape", at)
            module._buffers[key] = arr
        else:
            raise FormatError(f"unknown tensor {name!r}", at)
        seen.add(name)
    missing = (set(params) | set(buffers)) - seen
    if missing:
        raise FormatError(f"checkpoint lacks tensors: {sorted(missing)[:5]}", r.pos)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    frozen = set(meta["frozen"])
    for name, p in params.items():
        p.frozen = name in frozen
    model.eval()
    return model, meta.get("run", {})


def _buffer_owners(module, prefix: str = ""):
    yield prefix, module
    for key, child in module.children():
        yield from _buffer_owners(child, prefix + key + ".")


def save_checkpoint(model: SamoeModel, path, run_config: dict | None = None) -> bytes:
    data = dumps(model, run_config)
    with open(path, "wb") as f:
        f.write(data)
    return data


def load_checkpoint(path) -> tuple[SamoeModel, dict]:
    with open(path, "rb") as f:
        return loads(f.read())


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()

