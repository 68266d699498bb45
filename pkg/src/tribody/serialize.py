"""Versioned JSON container for trained models.

Arrays are stored as ``{"shape": [...], "data": [...]}`` with Python's
shortest round-trip float repr, so a save/load cycle is bit-exact.
"""

import json
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionMismatch

MODEL_VERSION = 1


def encode_array(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def decode_array(obj):
    try:
        return np.asarray(obj["data"], dtype=float).reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed array record ({exc})") from exc


def save(path, kind, header, arrays):
    doc = {"model_version": MODEL_VERSION, "kind": kind, "header": header,
           "arrays": {k: encode_array(v) for k, v in arrays.items()}}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load(path, kind=None):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad model JSON ({exc.msg})", path=path, line=exc.lineno) from exc
    if doc.get("model_version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: model_version {doc.get('model_version')!r}, expected {MODEL_VERSION}")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"expected a {kind!r} model, found {doc.get('kind')!r}", path=path)
    arrays = {k: decode_array(v) for k, v in doc["arrays"].items()}
    return doc["kind"], doc["header"], arrays


def peek_kind(path):
    return json.loads(Path(path).read_text()).get("kind")
