"""Tensor container files, weight directories and map exports.

Tensor file layout::

    b"PUQTNSR1"                      8-byte magic
    uint32 little-endian             header length in bytes
    header                           UTF-8 JSON {"dtype", "shape", "order"}
    payload                          raw little-endian samples, row-major

dtype is one of f32, f64 or c64 (complex64 stored as interleaved f32 pairs).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PUQTNSR1"
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "c64": np.dtype("<c8")}


class TensorFileError(ValueError):
    pass


class MagicError(TensorFileError):
    pass


class HeaderError(TensorFileError):
    pass


class LengthError(TensorFileError):
    pass


class DtypeError(TensorFileError):
    pass


def _code(dtype: np.dtype) -> str:
    for code, dt in _DTYPES.items():
        if np.dtype(dtype).newbyteorder("<") == dt:
            return code
    raise DtypeError(f"unsupported dtype {dtype}; expected float32, float64 or complex64")


def encode_tensor(array) -> bytes:
    a = np.asarray(array)
    code = _code(a.dtype)
    header = json.dumps({"dtype": code, "shape": list(a.shape), "order": "row-major"}).encode()
    payload = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 12:
        raise LengthError(f"file too short ({len(blob)} bytes)")
    if blob[:8] != MAGIC:
        raise MagicError(f"bad magic {blob[:8]!r}")
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise LengthError("truncated header")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
        code, shape, order = header["dtype"], [int(s) for s in header["shape"]], header["order"]
    except (ValueError, KeyError, TypeError) as err:
        raise HeaderError(f"malformed header: {err}") from err
    if order != "row-major":
        raise HeaderError(f"unsupported order {order!r}")
    if code not in _DTYPES:
        raise DtypeError(f"unknown dtype {code!r}")
    dt = _DTYPES[code]
    payload = blob[12 + hlen :]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(payload) != expected:
        raise LengthError(f"payload is {len(payload)} bytes, header shape {shape} needs {expected}")
    return np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save_tensor(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def digest(*arrays) -> str:
    """sha256 over the encoded tensor files of ``arrays``."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(encode_tensor(a))
    return h.hexdigest()


# --- weights ---------------------------------------------------------------


def save_weights(directory, module, meta: dict):
    """Write every (iteration, layer, name) tensor of ``module`` plus a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for it, layer, name, t in module.named_tensors():
        fname = f"it{it}_layer{layer}_{name}.tsr"
        save_tensor(d / fname, t.data)
        entries.append({"iteration": it, "layer": layer, "name": name, "shape": list(t.shape), "file": fname})
    (d / "manifest.json").write_text(json.dumps({"meta": meta, "tensors": entries}, indent=2))


def load_weights(directory):
    """Return (meta, {(iteration, layer, name): array})."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    arrays = {}
    for e in manifest["tensors"]:
        a = load_tensor(d / e["file"])
        if list(a.shape) != e["shape"]:
            raise LengthError(f"{e['file']}: shape {a.shape} disagrees with manifest {e['shape']}")
        arrays[(e["iteration"], e["layer"], e["name"])] = a
    return manifest["meta"], arrays


# --- maps ------------------------------------------------------------------


def export_map(values, path, fmt: str = "pgm16"):
    """Write a 2D map as 16-bit binary PGM (linear [min, max] window) or CSV."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("export_map expects a 2D map")
    if not np.all(np.isfinite(v)):
        raise ValueError("map contains non-finite values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "pgm16":
        lo, hi = float(v.min()), float(v.max())
        scaled = np.zeros(v.shape) if hi == lo else (v - lo) / (hi - lo) * 65535.0
        samples = np.clip(np.rint(scaled), 0, 65535).astype(">u2")
        h, w = v.shape
        header = f"P5\n# window {lo!r} {hi!r}\n{w} {h}\n65535\n".encode("ascii")
        path.write_bytes(header + samples.tobytes())
    elif fmt == "csv":
        lines = [",".join(f"c{j}" for j in range(v.shape[1]))]
        lines += [",".join(repr(float(x)) for x in row) for row in v]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown map format {fmt!r}")


def read_pgm16(path):
    """Parse a file written by export_map(fmt='pgm16'); returns (samples, (lo, hi))."""
    blob = Path(path).read_bytes()
    lines, pos = [], 0
    while len(lines) < 4:
        end = blob.index(b"\n", pos)
        lines.append(blob[pos:end].decode("ascii"))
        pos = end + 1
    if lines[0] != "P5":
        raise ValueError("not a binary PGM")
    _, _, lo, hi = lines[1].split()
    w, h = (int(x) for x in lines[2].split())
    samples = np.frombuffer(blob[pos:], dtype=">u2").reshape(h, w).astype(np.uint16)
    return samples, (float(lo), float(hi))


def read_map_csv(path) -> np.ndarray:
    rows = Path(path).read_text().strip().splitlines()[1:]
    return np.array([[float(x) for x in r.split(",")] for r in rows])
