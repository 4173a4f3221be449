"""JSON model files.

One document per model::

    {"format_version": 1, "kind": "cpd_hmm", "dims": {...}, "vocab": [...],
     "params": {"U": {"shape": [m, r], "data": [...]}, ...}}

``data`` is the row-major flattening of a log-probability array, written with
17 significant digits so doubles survive the round trip bit for bit. Zero
probability is written as ``-Infinity``.
"""
import json
import math

import numpy as np

from .models import CpdHMM, CpdPCFG, DenseJointHMM, DensePCFG, Vocab, validate

FORMAT_VERSION = 1
LOAD_TOLERANCE = 1e-6

_KINDS = {
    "cpd_hmm": (CpdHMM, ("start", "U", "V", "W")),
    "cpd_pcfg": (CpdPCFG, ("start", "U", "V", "W", "E")),
    "dense_hmm": (DenseJointHMM, ("start", "T")),
    "dense_pcfg": (DensePCFG, ("start", "binary", "emission")),
}


class ModelFormatError(ValueError):
    pass


def model_kind(model):
    for kind, (cls, _) in _KINDS.items():
        if isinstance(model, cls):
            return kind
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _dims(model):
    if isinstance(model, CpdHMM):
        return {"m": model.m, "r": model.r, "o": model.o}
    if isinstance(model, DenseJointHMM):
        return {"m": model.m, "o": model.o}
    if isinstance(model, CpdPCFG):
        return {"num_nt": model.num_nt, "num_pt": model.num_pt, "r": model.r, "o": model.o}
    return {"num_nt": model.num_nt, "num_pt": model.num_pt, "o": model.o}


def _fmt(x):
    if math.isinf(x):
        return "-Infinity" if x < 0 else "Infinity"
    if math.isnan(x):
        return "NaN"
    return format(x, ".17g")


def _array_json(a):
    data = ",".join(_fmt(float(x)) for x in np.asarray(a).ravel())
    return '{"shape": %s, "data": [%s]}' % (json.dumps(list(a.shape)), data)


def dumps_model(model, vocab):
    kind = model_kind(model)
    names = _KINDS[kind][1]
    if len(vocab) != model.o:
        raise ValueError(f"vocabulary size {len(vocab)} != model o={model.o}")
    head = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "dims": _dims(model),
        "vocab": list(vocab.tokens),
        "unk": vocab.unk,
        "eos": vocab.eos,
    }
    params = ",\n".join(f'  "{n}": {_array_json(getattr(model, n))}' for n in names)
    body = json.dumps(head, indent=1)[:-2]
    return body + ',\n "params": {\n' + params + "\n }\n}\n"


def save_model(model, vocab, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_model(model, vocab))


def loads_model(text, check=True):
    """Parse a model document; returns ``(model, vocab)``.

    With ``check`` the model is re-validated at :data:`LOAD_TOLERANCE`.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a JSON model file: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    cls, names = _KINDS[kind]
    arrays = {}
    for n in names:
        try:
            p = doc["params"][n]
            arrays[n] = np.array(p["data"], dtype=float).reshape(p["shape"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ModelFormatError(f"bad parameter {n!r}: {exc}") from exc
    try:
        model = cls(**arrays)
        vocab = Vocab(doc["vocab"], unk=doc.get("unk", "<unk>"), eos=doc.get("eos", "<eos>"))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(str(exc)) from exc
    if len(vocab) != model.o:
        raise ModelFormatError(f"vocabulary size {len(vocab)} != model o={model.o}")
    if check:
        problems = validate(model, tol=LOAD_TOLERANCE)
        if problems:
            raise ModelFormatError("invalid model: " + "; ".join(problems))
    return model, vocab


def load_model(path, check=True):
    with open(path, encoding="utf-8") as f:
        return loads_model(f.read(), check=check)
