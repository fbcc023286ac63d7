"""Versioned JSON persistence for fitted models.

Floats are written with ``repr`` precision by :mod:`json`, so a reloaded
model reproduces predictions bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .base import ProbabilisticClassifier
from .logistic import LogisticRegressionModel
from .presets import model_class

FORMAT = "surrender-lab-model"
FORMAT_VERSION = 1


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def model_to_dict(model: ProbabilisticClassifier, training_meta: dict | None = None) -> dict:
    if not hasattr(model, "base_rate_"):
        raise ValueError("only fitted models can be saved")
    names = getattr(model, "feature_names_in_", None)
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "feature_schema": {"n_features": int(model.n_features_in_),
                           "names": None if names is None else [str(n) for n in names]},
        # worker count is a runtime choice; keep it out so files do not depend on it
        "hyperparameters": _jsonable({k: v for k, v in model.get_params().items()
                                      if k != "n_jobs"}),
        "training_meta": _jsonable(dict(training_meta or {}, base_rate=model.base_rate_)),
        "parameters": _jsonable(model._export()),
    }


def model_from_dict(spec: dict) -> ProbabilisticClassifier:
    if spec.get("format") != FORMAT:
        raise ValueError("not a surrender-lab model file")
    if spec.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {spec.get('version')}")
    kind = spec["kind"]
    cls = LogisticRegressionModel if kind == "logistic" else model_class(kind)
    model = cls(**spec["hyperparameters"])
    schema = spec["feature_schema"]
    model.n_features_in_ = int(schema["n_features"])
    if schema["names"] is not None:
        model.feature_names_in_ = np.asarray(schema["names"], dtype=object)
    model.classes_ = np.array([0, 1])
    model.base_rate_ = float(spec["training_meta"]["base_rate"])
    model.training_meta_ = dict(spec["training_meta"])
    model._import(spec["parameters"])
    return model


def save_model(model, path, training_meta: dict | None = None) -> Path:
    path = Path(path)
    text = json.dumps(model_to_dict(model, training_meta), indent=1, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def load_model(path) -> ProbabilisticClassifier:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
