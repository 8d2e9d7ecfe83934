"""Binary "SIMT" container used for tensors, label maps, banks and checkpoints.

Layout of a single record (all integers little-endian)::

    b"SIMT" | u8 version | u8 rank | u32 extent * rank | payload

``version`` selects the payload: 1 = f64 tensor, 2 = u8 label map.
Version 3 is an archive of named records::

    b"SIMT" | u8 3 | u32 count | (u16 name_len | name | record) * count
"""

import io
import struct

import numpy as np

MAGIC = b"SIMT"
F64 = 1
U8 = 2
ARCHIVE = 3

_DTYPES = {F64: np.dtype("<f8"), U8: np.dtype("u1")}


class ContainerError(ValueError):
    pass


def _read_exact(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise ContainerError(f"truncated record: wanted {n} bytes, got {len(buf)}")
    return buf


def write_record(f, array):
    arr = np.asarray(array)
    if arr.dtype == np.uint8:
        version = U8
    elif arr.dtype.kind == "f":
        version = F64
        if not np.all(np.isfinite(arr)):
            raise ContainerError("refusing to write non-finite tensor")
    else:
        raise ContainerError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ContainerError("rank too large")
    f.write(MAGIC)
    f.write(struct.pack("<BB", version, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[version]).tobytes())


def read_record(f):
    if _read_exact(f, 4) != MAGIC:
        raise ContainerError("bad magic")
    version, rank = struct.unpack("<BB", _read_exact(f, 2))
    if version not in _DTYPES:
        raise ContainerError(f"unexpected record version {version}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    dtype = _DTYPES[version]
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(f, count * dtype.itemsize), dtype=dtype)
    out = data.reshape(shape).copy()
    if version == F64:
        out = out.astype(np.float64)
        if not np.all(np.isfinite(out)):
            raise ContainerError("non-finite payload")
    return out


def write_archive(f, entries):
    """Write a mapping of name -> array as one archive record."""
    f.write(MAGIC)
    f.write(struct.pack("<BI", ARCHIVE, len(entries)))
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        f.write(struct.pack("<H", len(raw)))
        f.write(raw)
        write_record(f, arr)


def read_archive(f):
    if _read_exact(f, 4) != MAGIC:
        raise ContainerError("bad magic")
    version, count = struct.unpack("<BI", _read_exact(f, 5))
    if version != ARCHIVE:
        raise ContainerError(f"expected archive, got version {version}")
    entries = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, n).decode("utf-8")
        entries[name] = read_record(f)
    return entries


def _finish(f, path):
    if f.read(1):
        raise ContainerError(f"{path}: trailing bytes")


def save_tensor(path, array):
    with open(path, "wb") as f:
        write_record(f, array)


def load_tensor(path):
    with open(path, "rb") as f:
        out = read_record(f)
        _finish(f, path)
    return out


def save_archive(path, entries):
    with open(path, "wb") as f:
        write_archive(f, entries)


def load_archive(path):
    with open(path, "rb") as f:
        out = read_archive(f)
        _finish(f, path)
    return out


def archive_bytes(entries):
    buf = io.BytesIO()
    write_archive(buf, entries)
    return buf.getvalue()
