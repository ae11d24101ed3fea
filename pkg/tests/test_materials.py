import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from birgen.geometry import AnnotatedMesh, box_mesh
from birgen.materials import (DEFAULT_MATERIAL, MaterialDatabase, MaterialEntry, MaterialError,
                              ScatteringPrior, assign_materials, band_average, jaccard,
                              load_material_db, load_material_mesh, match_label,
                              sample_scattering, save_material_mesh)

HEADER = "name,a62,a125,a250,a500,a1000,a2000,a4000,a8000\n"


@pytest.fixture
def db():
    return MaterialDatabase((
        MaterialEntry("wall", [0.1, 0.1, 0.1, 0.2, 0.4, 0.5, 0.5, 0.5]),
        MaterialEntry("wood table", [0.2] * 8),
        MaterialEntry("metal door", [0.05] * 8),
        MaterialEntry("carpet floor", [0.02, 0.05, 0.1, 0.3, 0.5, 0.6, 0.6, 0.6]),
    ))


def test_load_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "wall,.1,.1,.1,.2,.4,.5,.5,.5\nfloor,0,0,0,0,0,0,0,.8\n"
                 "glass,.3,.2,.1,.05,.04,.03,.02,.02\n")
    assert len(load_material_db(p)) == 3


def test_load_json_and_embeddings(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps([{"name": "wall", "absorption": [0.1] * 8}]))
    e = tmp_path / "e.json"
    e.write_text(json.dumps({"wall": [1, 0, 0]}))
    db = load_material_db(p, e)
    assert db.embeddings["wall"].shape == (3,)


def test_out_of_range_coefficient(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "wall,.1,.1,.1,1.3,.4,.5,.5,.5\n")
    with pytest.raises(MaterialError, match="absorption out of range"):
        load_material_db(p)


def test_duplicate_name():
    with pytest.raises(MaterialError, match="duplicate"):
        MaterialDatabase((MaterialEntry("a", [0.1] * 8), MaterialEntry("a", [0.2] * 8)))


def test_ragged_embeddings():
    with pytest.raises(MaterialError, match="ragged"):
        MaterialDatabase((MaterialEntry("a", [0.1] * 8),),
                         {"a": np.zeros(768), "b": np.zeros(512)})


def test_wrong_band_count():
    with pytest.raises(MaterialError):
        MaterialEntry("a", [0.1] * 7)


def test_exact_match(db):
    assert match_label("wall", db).name == "wall"
    assert match_label("  Wall ", db).name == "wall"


def test_token_overlap(db):
    # {wooden, table} vs {wood, table}: 1 / 3; vs {metal, door}: 0
    assert jaccard("wooden table", "wood table") == pytest.approx(1 / 3)
    assert match_label("wooden table", db, "token-overlap").name == "wood table"


def test_exact_falls_through_to_overlap(db):
    assert match_label("door", db, "exact").name == "metal door"


def test_overlap_tie_is_lexicographic():
    db = MaterialDatabase((MaterialEntry("b table", [0.1] * 8),
                           MaterialEntry("a table", [0.2] * 8)))
    assert match_label("table", db, "token-overlap").name == "a table"


def test_embedding_identity(db):
    rng = np.random.default_rng(1)
    emb = {e.name: rng.normal(size=16) for e in db.entries}
    db2 = MaterialDatabase(db.entries, emb)
    for name, v in emb.items():
        assert match_label("anything", db2, "embedding-cosine", query_embedding=v).name == name


def test_embedding_missing_query(db):
    db2 = MaterialDatabase(db.entries, {e.name: np.ones(4) for e in db.entries})
    with pytest.raises(MaterialError, match="query label"):
        match_label("unseen", db2, "embedding-cosine")


@pytest.mark.parametrize("coeffs, mode, expected", [
    ([.1, .1, .1, .2, .4, .5, .5, .5], "mid", 0.3),
    ([0.7] * 8, "mid", 0.7),
    ([0.7] * 8, "full", 0.7),
    ([0, 0, 0, 0, 0, 0, 0, 0.8], "full", 0.1),
])
def test_band_average(coeffs, mode, expected):
    assert band_average(coeffs, mode) == pytest.approx(expected)


@given(st.floats(0, 1))
def test_band_average_constant(c):
    assert band_average([c] * 8, "mid") == pytest.approx(c)


def test_scattering_degenerate():
    assert sample_scattering(ScatteringPrior(0.2, 0.0), 5) == 0.2


@given(st.floats(0, 3), st.integers(0, 2**32 - 1))
def test_scattering_clamped(std, seed):
    s = sample_scattering(ScatteringPrior(-1.0, std), seed)
    assert 0.01 <= s <= 0.99


def test_scattering_deterministic():
    p = ScatteringPrior()
    assert sample_scattering(p, 7) == sample_scattering(p, 7)


def test_scattering_monte_carlo():
    p = ScatteringPrior(0.3, 0.15)
    draws = np.array([sample_scattering(p, s) for s in range(100_000)])
    assert abs(draws.mean() - p.truncated_mean()) <= 0.01
    # tighter: exact mean of the clamped law, 5 standard errors
    assert abs(draws.mean() - p.clamped_mean()) <= 5 * 0.15 / np.sqrt(draws.size)


def test_assign_uniform(db):
    mesh = box_mesh(labels={"floor": "wall", "ceiling": "wall"})
    out = assign_materials(mesh, db, ScatteringPrior(0.2, 0.0))
    np.testing.assert_allclose(out.ab, 0.3)
    np.testing.assert_allclose(out.sc, 0.2)
    np.testing.assert_allclose(out.band_absorption, np.tile(db.get("wall").absorption, (12, 1)))


def test_assign_unknown_label(db, caplog):
    mesh = AnnotatedMesh(np.eye(3), [[0, 1, 2]], ["zzz"] * 3)
    with caplog.at_level(logging.WARNING):
        out = assign_materials(mesh, db)
    assert out.unmatched_labels == ("zzz",)
    assert len([r for r in caplog.records if r.levelno == logging.WARNING]) == 1
    np.testing.assert_allclose(out.band_absorption, [DEFAULT_MATERIAL.absorption])


def test_assign_two_labels(db):
    mesh = box_mesh(labels={"floor": "carpet floor", "ceiling": "wall"})
    out = assign_materials(mesh, db, seed=3)
    expected = {lab: band_average(match_label(lab, db).absorption, "mid")
                for lab in ("wall", "carpet floor")}
    assert len(np.unique(out.ab)) == 2
    assert len(np.unique(out.sc)) == 1
    for lab, ab in zip(out.vertex_labels, out.ab):
        assert ab == pytest.approx(expected[lab])


@given(st.integers(0, 10_000))
def test_assign_ranges(seed):
    db = MaterialDatabase((MaterialEntry("wall", [0.9] * 8),))
    out = assign_materials(box_mesh(), db, seed=seed, mode="full")
    assert np.all((0 <= out.ab) & (out.ab <= 1))
    assert np.all((0 <= out.sc) & (out.sc <= 1))
    assert np.ptp(out.sc) == 0


def test_material_mesh_roundtrip(db, tmp_path):
    out = assign_materials(box_mesh(subdivisions=2), db, seed=1)
    path = save_material_mesh(out, tmp_path / "scene.ply")
    back = load_material_mesh(path)
    np.testing.assert_allclose(back.ab, out.ab)
    np.testing.assert_allclose(back.sc, out.sc)
    np.testing.assert_allclose(back.band_absorption, out.band_absorption)
    np.testing.assert_array_equal(back.face_labels, out.face_labels)
