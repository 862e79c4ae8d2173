"""Readers and writers for spine files, cohort manifests and trained models.

Everything is JSON. Floats are written with ``repr`` precision (17
significant digits), so numbers survive a read and re-write bit for bit.
Files are written to a temporary sibling and renamed into place, so a
reader never sees a half-written file.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .cohort import Cohort, CohortConfig, Patient
from .dpllvm import Hyperparams, TrainedManifold
from .graphs import SimilarityGraphs
from .se3 import RigidTransform
from .spine import LEVELS, N_LEVELS, ArticulatedSpine, FeatureVector, VertebraModel

SPINE_SCHEMA = "spinemorph.spine/1"
COHORT_SCHEMA = "spinemorph.cohort/1"
MODEL_SCHEMA = "spinemorph.model/1"


class FileFormatError(ValueError):
    """A file does not follow the expected schema."""


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        raise ValueError("non-finite numbers cannot be serialised")
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_plain(obj), indent=1, sort_keys=False, allow_nan=False) + "\n"


def write_text_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj: Any) -> Path:
    return write_text_atomic(path, dumps(obj))


def read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON ({exc})") from exc


def _require(doc: dict, schema: str, path) -> None:
    if not isinstance(doc, dict) or doc.get("schema_version") != schema:
        raise FileFormatError(f"{path}: expected schema_version {schema!r}")


# ---------------------------------------------------------------------------
# spines
# ---------------------------------------------------------------------------


def spine_to_dict(
    spine: ArticulatedSpine,
    patient_id: str = "",
    visit_time: float = 0.0,
    label: str = "unknown",
    flexibility_ratio: Optional[float] = None,
) -> dict:
    verts = []
    for v, t in zip(spine.vertebrae, spine.relative_transforms):
        verts.append(
            {
                "level": v.level,
                "quaternion": t.quaternion(),
                "translation_mm": t.translation,
                "landmarks_mm": v.landmarks,
            }
        )
    return {
        "schema_version": SPINE_SCHEMA,
        "patient_id": patient_id,
        "visit_time_months": float(visit_time),
        "label": label,
        "flexibility_ratio": None if flexibility_ratio is None else float(flexibility_ratio),
        "vertebrae": verts,
    }


def spine_from_dict(doc: dict, path="<spine>") -> tuple[ArticulatedSpine, dict]:
    """Spine plus its metadata (patient_id, visit_time_months, label, flexibility_ratio)."""
    _require(doc, SPINE_SCHEMA, path)
    verts = doc.get("vertebrae")
    if not isinstance(verts, list) or len(verts) != N_LEVELS:
        raise FileFormatError(f"{path}: expected {N_LEVELS} vertebrae")
    vs, ts = [], []
    try:
        for entry, level in zip(verts, LEVELS):
            if entry["level"] != level:
                raise FileFormatError(f"{path}: vertebra {entry['level']!r} out of order, expected {level}")
            ts.append(RigidTransform.from_quaternion(entry["quaternion"], entry["translation_mm"]))
            vs.append(VertebraModel(level, entry["landmarks_mm"]))
        spine = ArticulatedSpine(tuple(vs), tuple(ts))
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: malformed vertebra entry ({exc})") from exc
    meta = {
        "patient_id": str(doc.get("patient_id", "")),
        "visit_time_months": float(doc.get("visit_time_months", 0.0)),
        "label": doc.get("label", "unknown"),
        "flexibility_ratio": doc.get("flexibility_ratio"),
    }
    return spine, meta


def write_spine(path, spine: ArticulatedSpine, **meta) -> Path:
    return write_json(path, spine_to_dict(spine, **meta))


def read_spine(path) -> tuple[ArticulatedSpine, dict]:
    return spine_from_dict(read_json(path), path)


# ---------------------------------------------------------------------------
# cohorts
# ---------------------------------------------------------------------------


def spine_filename(patient_id: str, visit_index: int) -> str:
    return f"{patient_id}_v{visit_index}.spine.json"


def write_cohort(directory, cohort: Cohort) -> Path:
    """One spine file per visit plus ``manifest.json`` listing patients and visits."""
    directory = Path(directory)
    rows = []
    for p in cohort.patients:
        visits = []
        for j, (t, spine) in enumerate(p.visits):
            name = spine_filename(p.patient_id, j)
            write_spine(directory / name, spine, patient_id=p.patient_id, visit_time=t, label=p.true_label,
                        flexibility_ratio=p.flexibility_ratio)
            visits.append({"visit_time_months": float(t), "file": name})
        rows.append(
            {
                "patient_id": p.patient_id,
                "label": p.true_label,
                "flexibility_ratio": p.flexibility_ratio,
                "deformity_class": p.deformity_class,
                "visits": visits,
                "truth": p.truth,
            }
        )
    manifest = {
        "schema_version": COHORT_SCHEMA,
        "config": None if cohort.config is None else cohort.config.__dict__,
        "patients": rows,
    }
    return write_json(directory / "manifest.json", manifest)


def read_cohort(directory) -> Cohort:
    directory = Path(directory)
    path = directory / "manifest.json" if directory.is_dir() else directory
    doc = read_json(path)
    _require(doc, COHORT_SCHEMA, path)
    base = path.parent
    patients = []
    for row in doc["patients"]:
        visits = []
        for v in row["visits"]:
            spine, _ = read_spine(base / v["file"])
            visits.append((float(v["visit_time_months"]), spine))
        patients.append(
            Patient(row["patient_id"], row["label"], float(row["flexibility_ratio"]), row["deformity_class"], visits,
                    row.get("truth", {}))
        )
    cfg = doc.get("config")
    config = None
    if cfg is not None:
        cfg = dict(cfg)
        for key in ("visits_per_patient", "baseline_cobb_range_deg", "progression_rate_range_deg_per_year",
                    "deformity_class_mix"):
            cfg[key] = tuple(cfg[key])
        config = CohortConfig(**cfg)
    return Cohort(patients, config)


# ---------------------------------------------------------------------------
# trained manifolds
# ---------------------------------------------------------------------------


def _edges(w: np.ndarray) -> list:
    i, j = np.nonzero(np.triu(w, 1))
    return [[int(a), int(b), float(w[a, b])] for a, b in zip(i, j)]


def _from_edges(edges, n: int) -> np.ndarray:
    w = np.zeros((n, n))
    for a, b, v in edges:
        w[a, b] = w[b, a] = v
    return w


def model_to_dict(m: TrainedManifold) -> dict:
    return {
        "schema_version": MODEL_SCHEMA,
        "mode": m.mode,
        "hyperparameters": m.hyper.__dict__,
        "scale": m.scale,
        "knn_radius": m.knn_radius,
        "standardization": {"mean": m.y_mean, "scale": m.y_scale, "active": m.active},
        "graphs": {"k": m.graphs.k, "labels": list(m.graphs.labels), "within": _edges(m.graphs.w_within),
                   "between": _edges(m.graphs.w_between)},
        "latent_mean": {"shape": list(m.latent_mean.shape), "data": m.latent_mean.reshape(-1)},
        "latent_cov": {"shape": list(m.latent_cov.shape), "data": m.latent_cov.reshape(-1)},
        "map_mean": {"shape": list(m.map_mean.shape), "data": m.map_mean.reshape(-1)},
        "map_cov": {"shape": list(m.map_cov.shape), "data": m.map_cov.reshape(-1)},
        "anchors": [
            {"patient_id": a.patient_id, "visit_time_months": a.visit_time, "label": a.label, "values": a.values}
            for a in m.anchors
        ],
        "flexibility": m.flexibility,
        "elbo_trace": list(m.elbo_trace),
        "diagnostics": m.diagnostics,
    }


def _array(block: dict) -> np.ndarray:
    return np.asarray(block["data"], dtype=float).reshape(block["shape"])


def model_from_dict(doc: dict, path="<model>") -> TrainedManifold:
    _require(doc, MODEL_SCHEMA, path)
    try:
        mode = doc["mode"]
        anchors = tuple(
            FeatureVector(np.asarray(a["values"], dtype=float), mode, a["label"], a["patient_id"],
                          float(a["visit_time_months"]))
            for a in doc["anchors"]
        )
        n = len(anchors)
        g = doc["graphs"]
        graphs = SimilarityGraphs(_from_edges(g["within"], n), _from_edges(g["between"], n), int(g["k"]),
                                  tuple(g["labels"]))
        st = doc["standardization"]
        return TrainedManifold(
            latent_mean=_array(doc["latent_mean"]),
            latent_cov=_array(doc["latent_cov"]),
            map_mean=_array(doc["map_mean"]),
            map_cov=_array(doc["map_cov"]),
            graphs=graphs,
            hyper=Hyperparams(**doc["hyperparameters"]),
            anchors=anchors,
            elbo_trace=tuple(float(v) for v in doc["elbo_trace"]),
            scale=float(doc["scale"]),
            y_mean=np.asarray(st["mean"], dtype=float),
            y_scale=np.asarray(st["scale"], dtype=float),
            active=np.asarray(st["active"], dtype=bool),
            knn_radius=float(doc["knn_radius"]),
            diagnostics=dict(doc.get("diagnostics", {})),
            flexibility={str(k): float(v) for k, v in doc.get("flexibility", {}).items()},
        )
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: malformed model file ({exc})") from exc


def write_model(path, m: TrainedManifold) -> Path:
    return write_json(path, model_to_dict(m))


def read_model(path) -> TrainedManifold:
    return model_from_dict(read_json(path), path)
