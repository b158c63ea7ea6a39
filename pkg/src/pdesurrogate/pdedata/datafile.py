"""Binary trajectory container and its JSON sidecar.

Layout (all little-endian):

    magic   4 bytes  b"LEPD"
    u32     version (currently 1)
    u32     kind code (1=ns, 2=swe, 3=pte)
    u32 x5  count, T, C, H, W
    u32     d_p (static parameter vector length)
    f64 x3  dt (stored-frame interval), Lx, Ly
    then per trajectory: d_p f64 params, T*C*H*W f64 fields,
    C order indexed [t, c, y, x].

Reads are bit-exact round trips of writes. Malformed files raise distinct
errors (magic, version, truncation, shape) so callers can tell corruption
from wrong-format input.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LEPD"
VERSION = 1

KIND_CODES = {"ns": 1, "swe": 2, "pte": 3}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}

_HEADER = struct.Struct("<4sII5II3d")  # magic, version, kind, count,T,C,H,W, d_p, dt,Lx,Ly


class DatasetFormatError(Exception):
    pass


class BadMagicError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ShapeMismatchError(DatasetFormatError):
    pass


@dataclass
class Dataset:
    """A batch of trajectories from one generator run.

    params: [count, d_p] static parameter encodings, one row per trajectory
    fields: [count, T, C, H, W] stored frames
    dt is the interval between stored frames, not the solver substep.
    """

    kind: str
    params: np.ndarray
    fields: np.ndarray
    dt: float
    lx: float
    ly: float

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.params.ndim != 2 or self.fields.ndim != 5:
            raise ShapeMismatchError(
                f"params must be 2-d and fields 5-d, got {self.params.shape} / {self.fields.shape}")
        if self.params.shape[0] != self.fields.shape[0]:
            raise ShapeMismatchError(
                f"{self.params.shape[0]} param rows vs {self.fields.shape[0]} trajectories")

    @property
    def count(self) -> int:
        return self.fields.shape[0]

    @property
    def shape_tchw(self) -> tuple:
        return self.fields.shape[1:]


def write_dataset(path, ds: Dataset) -> None:
    count, t, c, h, w = ds.fields.shape
    d_p = ds.params.shape[1]
    params = np.ascontiguousarray(ds.params, dtype="<f8")
    fields = np.ascontiguousarray(ds.fields, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, KIND_CODES[ds.kind],
                             count, t, c, h, w, d_p, ds.dt, ds.lx, ds.ly))
        for i in range(count):
            f.write(params[i].tobytes())
            f.write(fields[i].tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is too short for a header")
    magic, version, kind_code, count, t, c, h, w, d_p, dt, lx, ly = \
        _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, reader supports {VERSION}")
    if kind_code not in CODE_KINDS:
        raise ShapeMismatchError(f"{path}: unknown kind code {kind_code}")
    frame = t * c * h * w
    expected = _HEADER.size + count * (d_p + frame) * 8
    if len(raw) != expected:
        raise TruncatedFileError(
            f"{path}: {len(raw)} bytes, expected {expected} for count={count} "
            f"T={t} C={c} H={h} W={w} d_p={d_p}")
    params = np.empty((count, d_p), dtype=np.float64)
    fields = np.empty((count, t, c, h, w), dtype=np.float64)
    off = _HEADER.size
    for i in range(count):
        params[i] = np.frombuffer(raw, dtype="<f8", count=d_p, offset=off)
        off += d_p * 8
        fields[i] = np.frombuffer(raw, dtype="<f8", count=frame, offset=off).reshape(t, c, h, w)
        off += frame * 8
    return Dataset(CODE_KINDS[kind_code], params, fields, dt, lx, ly)


def write_sidecar(path, meta: dict) -> None:
    with open(path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_sidecar(path) -> dict:
    with open(path) as f:
        return json.load(f)
