import json

import numpy as np
import pytest

from spinemorph.dpllvm import Hyperparams, fit
from spinemorph.evaluation import patient_features
from spinemorph.graphs import build_graphs
from spinemorph.io import (
    FileFormatError,
    read_cohort,
    read_json,
    read_model,
    read_spine,
    write_cohort,
    write_json,
    write_model,
    write_spine,
)
from spinemorph.spine import to_feature_vector


def test_spine_round_trip_is_exact(tmp_path, small_cohort):
    p = small_cohort.patients[0]
    path = write_spine(tmp_path / "s.spine.json", p.baseline, patient_id=p.patient_id, visit_time=6.0,
                       label=p.true_label, flexibility_ratio=p.flexibility_ratio)
    spine, meta = read_spine(path)
    np.testing.assert_allclose(to_feature_vector(spine).values, to_feature_vector(p.baseline).values,
                               rtol=0, atol=1e-12)
    assert meta == {"patient_id": p.patient_id, "visit_time_months": 6.0, "label": p.true_label,
                    "flexibility_ratio": p.flexibility_ratio}
    again = write_spine(tmp_path / "t.spine.json", spine, patient_id=p.patient_id, visit_time=6.0,
                        label=p.true_label, flexibility_ratio=p.flexibility_ratio)
    assert path.read_bytes() == again.read_bytes()


def test_cohort_round_trip(tmp_path, small_cohort):
    write_cohort(tmp_path, small_cohort)
    back = read_cohort(tmp_path)
    assert back.config == small_cohort.config
    assert [p.patient_id for p in back.patients] == [p.patient_id for p in small_cohort.patients]
    for a, b in zip(back.patients, small_cohort.patients):
        assert a.true_label == b.true_label and a.flexibility_ratio == b.flexibility_ratio
        assert [t for t, _ in a.visits] == [t for t, _ in b.visits]
        np.testing.assert_allclose(to_feature_vector(a.visits[-1][1]).values,
                                   to_feature_vector(b.visits[-1][1]).values, rtol=0, atol=1e-12)
    assert read_cohort(tmp_path / "manifest.json").config == small_cohort.config
    # a cohort that went through a file once is a fixed point of read and write
    before = {f.name: f.read_bytes() for f in tmp_path.iterdir()}
    write_cohort(tmp_path / "again", back)
    assert {f.name: f.read_bytes() for f in (tmp_path / "again").iterdir()} == before


def test_model_round_trip_preserves_every_array(tmp_path, small_cohort):
    feats = patient_features(small_cohort.patients[:12], "poses", "baseline")
    m = fit(feats, Hyperparams(latent_dim=2, max_iters=10), build_graphs(feats, 3))
    back = read_model(write_model(tmp_path / "m.json", m))
    for name in ("latent_mean", "latent_cov", "map_mean", "map_cov", "y_mean", "y_scale", "active"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    np.testing.assert_array_equal(back.graphs.w_within, m.graphs.w_within)
    np.testing.assert_array_equal(back.graphs.w_between, m.graphs.w_between)
    assert back.hyper == m.hyper and back.scale == m.scale and back.elbo_trace == m.elbo_trace
    assert back.labels == m.labels and back.mode == m.mode


def test_schema_and_syntax_errors(tmp_path, small_cohort):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FileFormatError):
        read_json(bad)
    write_json(bad, {"schema_version": "something/else"})
    with pytest.raises(FileFormatError):
        read_spine(bad)
    with pytest.raises(FileFormatError):
        read_model(bad)
    path = write_spine(tmp_path / "s.json", small_cohort.patients[0].baseline)
    doc = json.loads(path.read_text())
    doc["vertebrae"] = doc["vertebrae"][::-1]
    path.write_text(json.dumps(doc))
    with pytest.raises(FileFormatError, match="order"):
        read_spine(path)
    doc["vertebrae"] = doc["vertebrae"][:3]
    path.write_text(json.dumps(doc))
    with pytest.raises(FileFormatError):
        read_spine(path)


def test_non_finite_values_are_refused(tmp_path):
    with pytest.raises(ValueError):
        write_json(tmp_path / "x.json", {"a": float("nan")})
    assert not (tmp_path / "x.json").exists()
