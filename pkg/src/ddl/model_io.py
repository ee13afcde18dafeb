"""Binary model container.

Layout (all integers little-endian)::

    bytes 0..7    magic b"DDLMODEL"
    bytes 8..11   uint32 format version
    bytes 12..15  uint32 header length H
    bytes 16..    H bytes of UTF-8 JSON, keys sorted, no whitespace
    then          the arrays listed in header["arrays"], back to back

Each array entry gives ``name``, ``dtype`` (``<f8``, ``<i8`` or ``|u1``),
``shape``, ``offset`` (from the start of the array section) and ``nbytes``.
Arrays are C-ordered, so the dictionary is stored row-major.  The file holds
no timestamps or host data: equal models give equal bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .classifiers import ClassifierBank
from .losses import LossKind
from .trainer import DdlModel, TrainConfig

MAGIC = b"DDLMODEL"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


class ModelFormatError(ValueError):
    """The file is not a readable model container."""


def _csc(X):
    X = np.asarray(X, dtype=float)
    indptr = np.zeros(X.shape[1] + 1, dtype=np.int64)
    idx, vals = [], []
    for i in range(X.shape[1]):
        nz = np.flatnonzero(X[:, i])
        idx.append(nz)
        vals.append(X[nz, i])
        indptr[i + 1] = indptr[i] + nz.size
    return (indptr, np.concatenate(idx).astype(np.int64) if idx else np.zeros(0, np.int64),
            np.concatenate(vals) if vals else np.zeros(0))


def _arrays(model: DdlModel):
    indptr, indices, values = _csc(model.codes)
    parts = model.objective_parts
    if parts is None:
        parts = np.zeros((len(model.objective_trace), 4))
    out = [
        ("dictionary", np.asarray(model.dictionary, dtype="<f8")),
        ("weights", np.asarray(model.classifiers.weights, dtype="<f8")),
        ("biases", np.asarray(model.classifiers.biases, dtype="<f8")),
        ("sigma", np.asarray(model.sigma, dtype="<f8")),
        ("gamma", np.asarray(model.gamma, dtype="<f8")),
        ("objective_trace", np.asarray(model.objective_trace, dtype="<f8")),
        ("objective_parts", np.asarray(parts, dtype="<f8")),
        ("codes_indptr", indptr.astype("<i8")),
        ("codes_indices", indices.astype("<i8")),
        ("codes_values", values.astype("<f8")),
    ]
    if model.labeled_mask is not None:
        out.append(("labeled_mask", np.asarray(model.labeled_mask, dtype="|u1")))
    return out


def dumps(model: DdlModel) -> bytes:
    """Serialise ``model`` to bytes."""
    arrays = _arrays(model)
    table = []
    offset = 0
    for name, a in arrays:
        a = np.ascontiguousarray(a)
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
    d, K = model.dictionary.shape
    header = {
        "d": d, "K": K, "C": model.n_classes, "N": int(model.codes.shape[1]),
        "T": model.config.T,
        "loss": model.loss.to_dict(),
        "config": model.config.to_dict(),
        "kind": model.kind,
        "best_iteration": int(model.best_iteration),
        "arrays": table,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a).tobytes() for _, a in arrays)
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + body


def loads(data: bytes) -> DdlModel:
    """Inverse of :func:`dumps`."""
    if len(data) < _PREFIX.size:
        raise ModelFormatError("file too short for a model header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise ModelFormatError("truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from None
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(data):
            raise ModelFormatError(f"truncated array {e['name']}")
        arrays[e["name"]] = np.frombuffer(data[lo:hi], dtype=np.dtype(e["dtype"])).reshape(
            e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
    N, K = header["N"], header["K"]
    codes = np.zeros((K, N))
    indptr = arrays["codes_indptr"]
    for i in range(N):
        sl = slice(indptr[i], indptr[i + 1])
        codes[arrays["codes_indices"][sl], i] = arrays["codes_values"][sl]
    loss = LossKind.from_dict(header["loss"])
    bank = ClassifierBank(arrays["weights"], arrays["biases"], loss)
    mask = arrays.get("labeled_mask")
    return DdlModel(
        dictionary=arrays["dictionary"],
        classifiers=bank,
        codes=codes,
        sigma=arrays["sigma"],
        gamma=arrays["gamma"],
        config=TrainConfig.from_dict(header["config"]),
        objective_trace=arrays["objective_trace"],
        objective_parts=arrays["objective_parts"],
        kind=header["kind"],
        best_iteration=header["best_iteration"],
        labeled_mask=None if mask is None else mask.astype(bool),
    )


def save_model(model: DdlModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_model(path) -> DdlModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
