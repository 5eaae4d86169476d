"""Binary volume (GVOL) and checkpoint (GCKPT1) formats.

GVOL, all little-endian::

    b"GVL1" | u32 rank (2 or 3) | u32 dim * rank | u32 dtype (1 = f32)
    | f32 spacing * 3 | f32 voxels, row-major, x fastest

Dims are stored slowest axis first, i.e. in numpy shape order.

GCKPT1::

    b"GCKPT1" | u32 count | per tensor: u32 name_len | utf-8 name
    | u32 rank | u32 dim * rank | f32 payload
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import CheckpointError, FormatError

GVOL_MAGIC = b"GVL1"
CKPT_MAGIC = b"GCKPT1"
DTYPE_F32 = 1


@dataclass
class Volume:
    voxels: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim not in (2, 3):
            raise ValueError(f"volumes are 2-D or 3-D, got shape {self.voxels.shape}")
        if not np.all(np.isfinite(self.voxels)):
            raise ValueError("volume contains non-finite HU values")
        self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.voxels.shape


def atomic_write(path, payload: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- GVOL -----------------------------------------------------------------

def gvol_bytes(v: Volume) -> bytes:
    dims = v.voxels.shape
    head = GVOL_MAGIC + struct.pack(f"<I{len(dims)}II3f", len(dims), *dims, DTYPE_F32, *v.spacing)
    return head + v.voxels.astype("<f4", copy=False).tobytes(order="C")


def gvol_write(v: Volume, path) -> None:
    atomic_write(path, gvol_bytes(v))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                              self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def gvol_parse(buf: bytes) -> Volume:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != GVOL_MAGIC:
        raise FormatError(f"bad GVOL magic {magic!r}", 0)
    at = r.pos
    rank = r.u32("rank")
    if rank not in (2, 3):
        raise FormatError(f"rank must be 2 or 3, got {rank}", at)
    dims = []
    for i in range(rank):
        at = r.pos
        d = r.u32(f"dim {i}")
        if d == 0:
            raise FormatError(f"dim {i} is zero", at)
        dims.append(d)
    at = r.pos
    dtype = r.u32("dtype code")
    if dtype != DTYPE_F32:
        raise FormatError(f"unknown dtype code {dtype}", at)
    spacing = struct.unpack("<3f", r.take(12, "spacing"))
    n = int(np.prod(dims))
    start = r.pos
    payload = r.take(4 * n, "voxel payload")
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after payload", r.pos)
    vox = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    bad = np.flatnonzero(~np.isfinite(vox))
    if bad.size:
        raise FormatError("non-finite voxel value", start + 4 * int(bad[0]))
    return Volume(vox, spacing)


def gvol_read(path) -> Volume:
    return gvol_parse(Path(path).read_bytes())


# -- checkpoints ----------------------------------------------------------

def checkpoint_bytes(weights: Dict[str, np.ndarray]) -> bytes:
    parts = [CKPT_MAGIC, struct.pack("<I", len(weights))]
    for name, arr in weights.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def checkpoint_save(model, path) -> None:
    atomic_write(path, checkpoint_bytes({k: p.data for k, p in model.named_parameters()}))


def checkpoint_parse(buf: bytes) -> Dict[str, np.ndarray]:
    r = _Reader(buf)
    magic = r.take(len(CKPT_MAGIC), "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    count = r.u32("tensor count")
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        nlen = r.u32("name length")
        try:
            name = r.take(nlen, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid UTF-8", at + 4) from None
        if name in out:
            raise FormatError(f"duplicate tensor {name!r}", at)
        rank = r.u32("rank")
        dims = [r.u32("dim") for _ in range(rank)]
        n = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor", r.pos)
    return out


def checkpoint_load(path) -> Dict[str, np.ndarray]:
    return checkpoint_parse(Path(path).read_bytes())


def load_weights(model, weights: Dict[str, np.ndarray]) -> None:
    """Copy ``weights`` into ``model`` after checking names and shapes match exactly."""
    params = dict(model.named_parameters())
    for name, p in params.items():
        if name not in weights:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}", name)
        if weights[name].shape != p.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {weights[name].shape}, model expects {p.shape}", name)
    for name in weights:
        if name not in params:
            raise CheckpointError(f"checkpoint has unexpected tensor {name!r}", name)
    for name, p in params.items():
        p.data = weights[name].astype(p.dtype)
        p.grad = None


# -- key=value text files -------------------------------------------------

def write_kv(path, values: Dict[str, object]) -> None:
    lines = [f"{k}={v}" for k, v in values.items()]
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_kv(path) -> Dict[str, str]:
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}: expected key=value, got {raw!r}")
        out[key.strip()] = val.strip()
    return out
