"""On-disk formats: VCT1 tensor files, multi-tensor archives, and binary PGM.

VCT1 layout: magic ``VCT1``, u8 dtype (0 = float32, 1 = float64), u8 ndim,
ndim little-endian u64 dims, then the row-major little-endian payload.
Round-trips are bit-exact. Corrupt input raises ValidationError naming the
file; it never crashes.

An archive (used for checkpoints) is: magic ``VCTA``, u64 manifest length,
canonical-JSON manifest, then concatenated VCT1 blobs. The manifest holds a
``meta`` dict and a name -> (offset, length) index.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

_MAGIC = b"VCT1"
_ARCHIVE_MAGIC = b"VCTA"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODES:
        raise ValidationError(f"unsupported dtype {arr.dtype}; only float32/float64 are stored")
    if arr.ndim > 255:
        raise ValidationError(f"too many dims ({arr.ndim})")
    head = _MAGIC + struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + arr.astype(_DTYPES[_CODES[arr.dtype]], copy=False).tobytes()


def decode_tensor(buf: bytes, name: str = "<buffer>") -> np.ndarray:
    if len(buf) < 6 or buf[:4] != _MAGIC:
        raise ValidationError(f"{name}: not a VCT1 tensor (bad magic or truncated header)")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise ValidationError(f"{name}: unknown dtype code {code}")
    off = 6
    if len(buf) < off + 8 * ndim:
        raise ValidationError(f"{name}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", buf, off) if ndim else ()
    off += 8 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expect = off + count * dtype.itemsize
    if len(buf) != expect:
        raise ValidationError(f"{name}: payload length {len(buf) - off} does not match dims {dims}")
    return np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims).copy()


def write_tensor(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"tensor file not found: {p}")
    return decode_tensor(p.read_bytes(), str(p))


# -- archives (checkpoints) ----------------------------------------------------


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_archive(path, meta: dict, tensors: dict) -> None:
    """Write named tensors plus a JSON `meta` block. Output bytes are a pure
    function of (meta, tensors): entries are laid out in sorted-name order."""
    blobs, index, off = [], {}, 0
    for name in sorted(tensors):
        blob = encode_tensor(tensors[name])
        index[name] = [off, len(blob)]
        blobs.append(blob)
        off += len(blob)
    manifest = _canonical_json({"meta": meta, "index": index})
    with open(path, "wb") as fh:
        fh.write(_ARCHIVE_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def read_archive(path):
    """Return (meta, {name: array}). Raises ValidationError on corruption."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"archive not found: {p}")
    buf = p.read_bytes()
    if len(buf) < 12 or buf[:4] != _ARCHIVE_MAGIC:
        raise ValidationError(f"{p}: not a tensor archive (bad magic or truncated)")
    (mlen,) = struct.unpack_from("<Q", buf, 4)
    if len(buf) < 12 + mlen:
        raise ValidationError(f"{p}: truncated manifest")
    try:
        manifest = json.loads(buf[12:12 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"{p}: manifest is not valid JSON ({e})") from e
    if not isinstance(manifest, dict) or "meta" not in manifest or "index" not in manifest:
        raise ValidationError(f"{p}: manifest missing meta/index")
    payload = buf[12 + mlen:]
    tensors = {}
    for name, (off, length) in manifest["index"].items():
        if off < 0 or off + length > len(payload):
            raise ValidationError(f"{p}: entry {name!r} out of bounds")
        tensors[name] = decode_tensor(payload[off:off + length], f"{p}:{name}")
    return manifest["meta"], tensors


# -- PGM -------------------------------------------------------------------------


def write_pgm(path, gray: np.ndarray) -> None:
    """8-bit binary PGM (P5)."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ValidationError(f"write_pgm expects a 2-D uint8 array, got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"PGM not found: {p}")
    buf = p.read_bytes()
    if not buf.startswith(b"P5"):
        raise ValidationError(f"{p}: not a binary PGM")
    # Header = three whitespace-separated fields after the magic.
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{p}: truncated PGM header")
        fields.append(buf[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValidationError(f"{p}: only maxval 255 supported")
    if len(buf) - pos != w * h:
        raise ValidationError(f"{p}: payload length {len(buf) - pos} != {w}*{h}")
    return np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(h, w).copy()
