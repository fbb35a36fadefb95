"""JSON persistence for :class:`~gsv_interp.pipeline.InterpModel`."""

from __future__ import annotations

import json

import jsonschema

from .graphmodel import FEATURE_VERSION, N_FEATURES, EdgeParams, MetricMatrix
from .linalg import LayerSchedule
from .mapsolver import SolverParams
from .pipeline import InterpModel

FORMAT = "gsv-interp-model"
VERSION = 1


class ModelFileError(ValueError):
    pass


_number = {"type": "number"}
_count = {"type": "integer", "minimum": 1}
_row = {"type": "array", "items": _number, "minItems": 1}
_matrix = {
    "type": "array",
    "items": {"type": "array", "items": _number, "minItems": N_FEATURES, "maxItems": N_FEATURES},
    "minItems": N_FEATURES,
    "maxItems": N_FEATURES,
}
_coeffs = {"oneOf": [_row, {"type": "array", "items": _row, "minItems": 1}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["format", "version", "feature_extractor", "solver", "edges",
                 "metric_m", "metric_r", "gains"],
    "properties": {
        "format": {"const": FORMAT},
        "version": {"const": VERSION},
        "feature_extractor": {"type": "string"},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mu", "gamma", "n_bicg_layers", "n_dr_layers", "n_cg_layers"],
            "properties": {
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "n_bicg_layers": _count,
                "n_dr_layers": _count,
                "n_cg_layers": _count,
                "tol": {"type": "number", "minimum": 0},
                "bicg_schedule": {
                    "oneOf": [
                        {"type": "null"},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["alpha", "beta"],
                            "properties": {"alpha": _coeffs, "beta": _coeffs},
                        },
                    ]
                },
            },
        },
        "edges": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d_star", "window_radius", "max_neighbors"],
            "properties": {
                "d_star": {"type": "number", "exclusiveMinimum": 0},
                "window_radius": _count,
                "max_neighbors": _count,
            },
        },
        "metric_m": _matrix,
        "metric_r": _matrix,
        "gains": {
            "type": "object",
            "additionalProperties": False,
            "required": ["s", "s2"],
            "properties": {
                "s": {"type": "number", "minimum": -1, "maximum": 1},
                "s2": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "training": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["val_mse"],
                    "properties": {
                        "val_mse": {"type": "number", "minimum": 0},
                        "baseline_val_mse": {"type": "number", "minimum": 0},
                        "epochs": {"type": "integer", "minimum": 0},
                    },
                },
            ]
        },
    },
}


def model_to_dict(model):
    s = model.solver
    return {
        "format": FORMAT,
        "version": VERSION,
        "feature_extractor": FEATURE_VERSION,
        "solver": {
            "mu": s.mu,
            "gamma": s.gamma,
            "n_bicg_layers": s.n_bicg_layers,
            "n_dr_layers": s.n_dr_layers,
            "n_cg_layers": s.n_cg_layers,
            "tol": s.tol,
            "bicg_schedule": None if s.bicg_schedule is None else s.bicg_schedule.to_json(),
        },
        "edges": {
            "d_star": model.edges.d_star,
            "window_radius": model.edges.window_radius,
            "max_neighbors": model.edges.max_neighbors,
        },
        "metric_m": model.metric_m.factor.tolist(),
        "metric_r": model.metric_r.factor.tolist(),
        "gains": {"s": model.gain_p, "s2": model.gain_l},
        "training": None if model.training is None else dict(model.training),
    }


def model_from_dict(doc):
    """Validate against :data:`SCHEMA`, then rebuild through the typed constructors."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ModelFileError(f"invalid model file at {where}: {exc.message}") from None
    if doc["feature_extractor"] != FEATURE_VERSION:
        raise ModelFileError(
            f"model was built for feature extractor {doc['feature_extractor']!r}, "
            f"this build provides {FEATURE_VERSION!r}"
        )
    sv = dict(doc["solver"])
    sched = sv.pop("bicg_schedule", None)
    try:
        if sched is not None:
            sched = LayerSchedule(sched["alpha"], sched["beta"])
        solver = SolverParams(bicg_schedule=sched, **sv)
        edges = EdgeParams(**doc["edges"])
        metric_m = MetricMatrix(doc["metric_m"])
        metric_r = MetricMatrix(doc["metric_r"])
        for name, raw, m in (("metric_m", doc["metric_m"], metric_m),
                             ("metric_r", doc["metric_r"], metric_r)):
            if any(raw[i][j] != 0 for i in range(N_FEATURES) for j in range(i + 1, N_FEATURES)):
                raise ValueError(f"{name} must be lower-triangular")
        return InterpModel(
            solver=solver,
            edges=edges,
            metric_m=metric_m,
            metric_r=metric_r,
            gain_p=float(doc["gains"]["s"]),
            gain_l=float(doc["gains"]["s2"]),
            training=doc.get("training"),
        )
    except ValueError as exc:
        raise ModelFileError(f"invalid model file: {exc}") from None


def dumps(model):
    return json.dumps(model_to_dict(model), indent=2) + "\n"


def loads(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(doc)


def save_model(model, path):
    with open(path, "w") as fh:
        fh.write(dumps(model))


def load_model(path):
    with open(path) as fh:
        return loads(fh.read())
