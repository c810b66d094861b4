"""Binary model files: magic, JSON header, little-endian array payload.

Layout::

    b"MPOSE\\x00MF"   8 bytes
    uint32 LE         header length H
    H bytes           UTF-8 JSON header, sorted keys
    payload           arrays back to back in header order

Pruned weight matrices are stored as (values, rows, cols) triplets. The
feature normalizer is stored in float64 so that reloaded features are
bit-identical to the ones the model was trained on.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import Model, ModelSpec
from .pruning import SparseMatrix, from_sparse
from .speech import FeatureNormalizer

MAGIC = b"MPOSE\x00MF"
VERSION = 1
PRECISIONS = {"float32": "<f4", "float64": "<f8"}
INDEX_DTYPE = "<i4"


@dataclass
class ModelFile:
    model: Model
    normalizer: FeatureNormalizer | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def precision(self) -> str:
        return np.dtype(self.model.dtype).name


def _entries(mf: ModelFile):
    """(name, role, array) in payload order."""
    model = mf.model
    fdt = PRECISIONS[mf.precision]
    out = []
    for name, p in model.params.items():
        mask = model.masks.get(name)
        if mask is not None and p.ndim == 2:
            rows, cols = np.nonzero(mask)
            out.append((name, "sparse.values", p[rows, cols].astype(fdt)))
            out.append((name, "sparse.rows", rows.astype(INDEX_DTYPE)))
            out.append((name, "sparse.cols", cols.astype(INDEX_DTYPE)))
        else:
            out.append((name, "param", p.astype(fdt)))
    if mf.normalizer is not None:
        out.append(("normalizer.mean", "normalizer", np.asarray(mf.normalizer.mean, "<f8")))
        out.append(("normalizer.std", "normalizer", np.asarray(mf.normalizer.std, "<f8")))
    return out


def to_bytes(mf: ModelFile) -> bytes:
    if mf.precision not in PRECISIONS:
        raise FormatError(f"unsupported precision {mf.precision}")
    arrays, table, offset = [], [], 0
    for name, role, a in _entries(mf):
        raw = np.ascontiguousarray(a).tobytes()
        table.append({"name": name, "role": role, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        if role.startswith("sparse"):
            table[-1]["matrix_shape"] = list(mf.model.params[name].shape)
        arrays.append(raw)
        offset += len(raw)
    header = {
        "version": VERSION,
        "precision": mf.precision,
        "spec": mf.model.spec.to_dict(),
        "metadata": mf.metadata,
        "arrays": table,
        "payload_bytes": offset,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(arrays)


def save(mf: ModelFile, path) -> None:
    Path(path).write_bytes(to_bytes(mf))


def read_header(data: bytes) -> tuple[dict, int]:
    """Parsed header and the byte offset where the payload starts."""
    if len(data) < len(MAGIC) + 4:
        raise FormatError(f"file of {len(data)} bytes is too short for a header (offset 0)")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic bytes at offset 0; not a model file")
    (hlen,) = struct.unpack_from("<I", data, len(MAGIC))
    start = len(MAGIC) + 4
    if start + hlen > len(data):
        raise FormatError(f"header declares {hlen} bytes at offset {start} but only "
                          f"{len(data) - start} remain")
    try:
        header = json.loads(data[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable JSON header at offset {start}: {e}") from e
    if header.get("version") != VERSION:
        raise FormatError(f"unsupported model file version {header.get('version')!r} (expected {VERSION})")
    return header, start + hlen


def from_bytes(data: bytes) -> ModelFile:
    header, base = read_header(data)
    payload = len(data) - base
    declared = header["payload_bytes"]
    if payload != declared:
        raise FormatError(f"payload at offset {base} has {payload} bytes, header declares {declared}")
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != count * dt.itemsize or start + e["nbytes"] > len(data):
            raise FormatError(f"array {e['name']} ({e['role']}) at offset {start}: "
                              f"{e['nbytes']} bytes do not fit shape {e['shape']}")
        a = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(e["shape"])
        arrays.setdefault(e["name"], {})[e["role"]] = (a, e)
    ftype = np.dtype(PRECISIONS[header["precision"]]).newbyteorder("=")
    params, masks, normalizer = {}, {}, None
    for name, roles in arrays.items():
        if "normalizer" in roles:
            continue
        if "param" in roles:
            params[name] = roles["param"][0].astype(ftype)
            continue
        values, entry = roles["sparse.values"]
        s = SparseMatrix(values.astype(ftype), roles["sparse.rows"][0].astype(np.int64),
                         roles["sparse.cols"][0].astype(np.int64), tuple(entry["matrix_shape"]))
        params[name] = from_sparse(s, ftype)
        mask = np.zeros(s.shape, dtype=bool)
        mask[s.rows, s.cols] = True
        masks[name] = mask
    if "normalizer.mean" in arrays:
        normalizer = FeatureNormalizer(arrays["normalizer.mean"]["normalizer"][0].astype(np.float64),
                                       arrays["normalizer.std"]["normalizer"][0].astype(np.float64))
    spec = ModelSpec.from_dict(header["spec"])
    # keep ModelSpec parameter order so re-saving is byte-identical
    return ModelFile(Model(spec, params, masks), normalizer, header["metadata"])


def load(path) -> ModelFile:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        return from_bytes(path.read_bytes())
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e
