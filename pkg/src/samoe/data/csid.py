"""CSID dataset files.

Little-endian layout::

    magic   4s   b"CSID"
    version u32  1
    count   u32  number of samples
    C, T, S u32  sample shape
    K       u32  number of activity classes
    domain  u32
    seed    u64
    -- 44-byte header, then per sample --
    label   u32
    domain  u32
    x       C*T*S float32
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError
from .dataset import N_CLASSES, SAMPLE_SHAPE, CsiSample, DomainDataset

MAGIC = b"CSID"
VERSION = 1
_HEADER = struct.Struct("<4s7I4xQ")  # 4 pad bytes align the seed
HEADER_SIZE = _HEADER.size  # 44


def record_size(shape=SAMPLE_SHAPE) -> int:
    return 8 + 4 * int(np.prod(shape))


def file_size(n_samples: int, shape=SAMPLE_SHAPE) -> int:
    return HEADER_SIZE + n_samples * record_size(shape)


def dumps(d: DomainDataset) -> bytes:
    c, t, s = SAMPLE_SHAPE
    header = _HEADER.pack(MAGIC, VERSION, len(d), c, t, s, N_CLASSES, d.domain, d.seed)
    rec = np.dtype([("label", "<u4"), ("domain", "<u4"), ("x", "<f4", (c * t * s,))])
    body = np.empty(len(d), dtype=rec)
    body["label"] = d.labels
    body["domain"] = [smp.domain for smp in d.samples]
    body["x"] = d.x.reshape(len(d), c * t * s)
    return header + body.tobytes()


def loads(buf: bytes) -> DomainDataset:
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"file truncated inside the {HEADER_SIZE}-byte header", offset=len(buf))
    magic, version, count, c, t, s, k, domain, seed = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported CSID version {version} (reader supports {VERSION})", offset=4)
    if (c, t, s) != SAMPLE_SHAPE:
        raise FormatError(f"sample shape {(c, t, s)} differs from {SAMPLE_SHAPE}", offset=12)
    if k != N_CLASSES:
        raise FormatError(f"class count {k} differs from {N_CLASSES}", offset=24)
    rsize = record_size((c, t, s))
    expected = HEADER_SIZE + count * rsize
    if len(buf) < expected:
        bad = HEADER_SIZE + ((len(buf) - HEADER_SIZE) // rsize) * rsize
        raise FormatError(f"file truncated: {count} samples declared, {len(buf)} of {expected} bytes present", offset=bad)
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after last sample", offset=expected)
    rec = np.dtype([("label", "<u4"), ("domain", "<u4"), ("x", "<f4", (c * t * s,))])
    body = np.frombuffer(buf, dtype=rec, count=count, offset=HEADER_SIZE)
    samples = []
    for i, row in enumerate(body):
        off = HEADER_SIZE + i * rsize
        if row["label"] >= k:
            raise FormatError(f"label {row['label']} out of range", offset=off)
        if row["domain"] != domain:
            raise FormatError(f"sample domain {row['domain']} differs from header domain {domain}", offset=off + 4)
        x = row["x"].astype(np.float32).reshape(SAMPLE_SHAPE)
        if not np.isfinite(x).all():
            raise FormatError("non-finite amplitude", offset=off + 8)
        samples.append(CsiSample(x, int(row["label"]), int(row["domain"])))
    return DomainDataset(int(domain), samples, split="full", seed=int(seed))


def save_dataset(d: DomainDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(d))


def load_dataset(path) -> DomainDataset:
    with open(path, "rb") as fh:
        return loads(fh.read())


def dataset_files(directory) -> list[str]:
    """CSID files in ``directory``, sorted by name."""
    return sorted(
        os.path.join(directory, f) for f in os.listdir(directory) if f.endswith(".csid")
    )
