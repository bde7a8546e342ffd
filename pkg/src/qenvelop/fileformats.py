"""Text file formats for models, envelopment maps and probability tables.

Model files are JSON documents::

    {
      "format": "qenvelop-model", "version": 1,
      "dim": 2,
      "alice": ["X0", ...], "bob": ["X", "Z"], "eve": ["pass"],
      "eve_private": [],
      "meta": {"protocol": "bb84"},
      "states": {"X0": [[re, im], [re, im]], ...},
      "unitaries": [{"command": [a, b, e], "matrix": [[[re, im], ...], ...]}],
      "povms": [{"command": [b, e],
                 "elements": [{"outcome": "-:0", "matrix": [[[re, im], ...], ...]}]}],
      "provenance": {...}            # optional, ignored by the loader and the hash
    }

Complex numbers are ``[re, im]`` pairs. Floats are written with ``repr``
precision so a save/load cycle is bit-exact. Map files use the same
conventions (see :func:`map_to_dict`).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .exceptions import ParseError
from .model import CommandSet, Povm, QMModel

MODEL_FORMAT = "qenvelop-model"
MAP_FORMAT = "qenvelop-map"
VERSION = 1


def _cvec(v):
    return [[float(z.real), float(z.imag)] for z in np.asarray(v).ravel()]


def _cmat(m):
    return [_cvec(row) for row in np.asarray(m)]


def _from_pairs(data, what):
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what}: expected nested [re, im] pairs ({exc})") from None
    if arr.ndim < 1 or arr.shape[-1] != 2:
        raise ParseError(f"{what}: complex entries must be [re, im] pairs")
    # assign parts separately; re + 1j*im does not preserve signed zeros
    out = np.empty(arr.shape[:-1], dtype=np.complex128)
    out.real = arr[..., 0]
    out.imag = arr[..., 1]
    return out


def model_to_dict(model: QMModel) -> dict:
    c = model.commands
    return {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "dim": model.dim,
        "alice": list(c.alice),
        "bob": list(c.bob),
        "eve": list(c.eve),
        "eve_private": sorted(model.eve_private),
        "meta": dict(model.meta),
        "states": {a: _cvec(model.states[a]) for a in c.alice},
        "unitaries": [
            {"command": list(cmd), "matrix": _cmat(u)} for cmd, u in sorted(model.unitaries.items())
        ],
        "povms": [
            {
                "command": list(rest),
                "elements": [{"outcome": o, "matrix": _cmat(m)} for o, m in model.povms[rest].items()],
            }
            for rest in c.rests()
        ],
    }


def model_from_dict(doc: dict) -> QMModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"not a {MODEL_FORMAT} document")
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported model format version {doc.get('version')!r}")
    try:
        commands = CommandSet(tuple(doc["alice"]), tuple(doc["bob"]), tuple(doc["eve"]))
        states = {a: _from_pairs(v, f"state {a!r}") for a, v in doc["states"].items()}
        povms = {}
        for entry in doc["povms"]:
            rest = tuple(entry["command"])
            povms[rest] = Povm(
                [(el["outcome"], _from_pairs(el["matrix"], f"POVM {rest}")) for el in entry["elements"]]
            )
        unitaries = {
            tuple(u["command"]): _from_pairs(u["matrix"], f"unitary {u['command']}")
            for u in doc.get("unitaries", [])
        }
        model = QMModel(
            commands,
            states,
            povms,
            unitaries,
            eve_private=doc.get("eve_private", ()),
            meta=doc.get("meta", {}),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model document: {exc}") from None
    if model.dim != doc.get("dim"):
        raise ParseError(f"declared dim {doc.get('dim')} does not match state dimension {model.dim}")
    return model


def _canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def model_hash(model: QMModel) -> str:
    return hashlib.sha256(_canonical(model_to_dict(model))).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(doc, path):
    text = json.dumps(doc, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None


def save_model(model: QMModel, path, provenance: dict | None = None) -> None:
    doc = model_to_dict(model)
    if provenance is not None:
        doc["provenance"] = provenance
    _write_json(doc, path)


def load_model(path) -> QMModel:
    return model_from_dict(_read_json(path))


# -- envelopment maps ---------------------------------------------------------
def map_to_dict(f) -> dict:
    doc = {
        "format": MAP_FORMAT,
        "version": VERSION,
        "pairs": [[list(b), j, list(b2), j2] for (b, j), (b2, j2) in f.items()],
        "factored": None,
    }
    if f.factored is not None:
        g, h = f.factored
        doc["factored"] = {
            "g": [[list(b), list(b2)] for b, b2 in sorted(g.items())],
            "h": [[j, j2] for j, j2 in sorted(h.items())],
        }
    return doc


def map_from_dict(doc: dict):
    from .envelopment import EnvelopmentMap

    if not isinstance(doc, dict) or doc.get("format") != MAP_FORMAT:
        raise ParseError(f"not a {MAP_FORMAT} document")
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported map format version {doc.get('version')!r}")
    try:
        mapping = {(tuple(b), j): (tuple(b2), j2) for b, j, b2, j2 in doc["pairs"]}
        factored = None
        if doc.get("factored"):
            g = {tuple(b): tuple(b2) for b, b2 in doc["factored"]["g"]}
            h = {j: j2 for j, j2 in doc["factored"]["h"]}
            factored = (g, h)
        return EnvelopmentMap(mapping, factored)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed map document: {exc}") from None


def save_map(f, path, provenance: dict | None = None) -> None:
    doc = map_to_dict(f)
    if provenance is not None:
        doc["provenance"] = provenance
    _write_json(doc, path)


def load_map(path):
    return map_from_dict(_read_json(path))


# -- tables -------------------------------------------------------------------
def table_to_csv(table: dict, header_comments=()) -> str:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["b_A", "b_B", "b_E", "outcome", "probability"])
    for (a, b, e), row in table.items():
        for outcome, p in row.items():
            w.writerow([a, b, e, outcome, repr(float(p))])
    return buf.getvalue()
