"""Self-describing model files.

A model file is JSON::

    {"format": "dlfd-model", "version": 1, "kind": <kind>,
     "config": {...}, "n_weights": n, "weights": [w0, w1, ...]}

``kind`` is ``rmlp`` or a baseline cell kind. Weights are written as
shortest round-trip decimal, so load(save(m)) is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import BaselineModel, CellKind
from .errors import ParseError
from .rmlp import RmlpConfig, RmlpNetwork

MODEL_FORMAT = "dlfd-model"
ENSEMBLE_FORMAT = "dlfd-ensemble"
FORMAT_VERSION = 1


def model_to_dict(model) -> dict:
    if isinstance(model, RmlpNetwork):
        kind, cfg = "rmlp", model.config.to_dict()
    elif isinstance(model, BaselineModel):
        kind, cfg = model.kind.value, model.to_dict()
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    w = [float(v) for v in model.weights]
    return {"format": MODEL_FORMAT, "version": FORMAT_VERSION, "kind": kind, "config": cfg,
            "n_weights": len(w), "weights": w}


def model_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise ParseError("not a dlfd model document")
    if d.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported model file version {d.get('version')!r}")
    w = np.array(d["weights"], dtype=float)
    if w.shape[0] != d.get("n_weights", w.shape[0]):
        raise ParseError("weight count does not match header")
    kind = d["kind"]
    try:
        if kind == "rmlp":
            return RmlpNetwork(RmlpConfig.from_dict(d["config"]), w)
        c = d["config"]
        return BaselineModel(CellKind(kind), tuple(c["layer_sizes"]), w, int(c.get("seed", 0)))
    except (KeyError, ValueError) as e:
        raise ParseError(f"invalid model description: {e}") from None


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(dumps(model_to_dict(model)))
    return path


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from None
    return model_from_dict(doc)
