import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from birgen import _kernels
from birgen.geometry import (AnnotatedMesh, MeshError, MeshParseError, boundary_loops,
                             box_mesh, close_mesh, face_to_vertex_labels, fill_small_holes,
                             is_watertight, load_annotated_mesh, load_labeled_ply, open_box_mesh,
                             save_annotated_mesh, simplify, unique_edges, uv_sphere,
                             vertex_to_face_labels)
from birgen.geometry.simplify import collapse_loop_py, initial_quadrics

from conftest import CUBE_FACES, CUBE_VERTS, write_obj


def test_load_cube(cube_obj, tmp_path):
    labels = tmp_path / "cube.json"
    labels.write_text(json.dumps(["wall"] * 8))
    mesh = load_annotated_mesh(cube_obj, labels)
    assert (mesh.n_vertices, mesh.n_faces) == (8, 12)
    assert mesh.label_set == {"wall"}


def test_load_csv_labels_with_header(cube_obj, tmp_path):
    labels = tmp_path / "cube.csv"
    labels.write_text("vertex_index,label\n" + "".join(f"{i},floor\n" for i in range(8)))
    assert load_annotated_mesh(cube_obj, labels).label_set == {"floor"}


def test_zero_area_face_dropped(tmp_path, caplog):
    verts = np.vstack([CUBE_VERTS, [[0.5, 0.0, 0.0]]])  # collinear with vertices 0 and 1
    faces = np.vstack([CUBE_FACES, [[0, 1, 8]]])
    obj = write_obj(tmp_path / "m.obj", verts, faces)
    lab = tmp_path / "m.json"
    lab.write_text(json.dumps(["wall"] * 9))
    with caplog.at_level(logging.WARNING):
        mesh = load_annotated_mesh(obj, lab)
    assert mesh.n_faces == 12
    assert any("degenerate" in r.message for r in caplog.records)


def test_label_count_mismatch(cube_obj, tmp_path):
    lab = tmp_path / "bad.json"
    lab.write_text(json.dumps(["wall"] * 7))
    with pytest.raises(MeshError, match="label count mismatch"):
        load_annotated_mesh(cube_obj, lab)


def test_parse_failure(tmp_path):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 0 0 zero\nf 1 2 3\n")
    lab = tmp_path / "l.json"
    lab.write_text("[]")
    with pytest.raises(MeshParseError):
        load_annotated_mesh(bad, lab)


def test_duplicate_vertices_merged(tmp_path):
    verts = np.vstack([CUBE_VERTS, CUBE_VERTS[:1] + 5e-7])
    faces = CUBE_FACES.copy()
    faces[0, 0] = 8
    obj = write_obj(tmp_path / "d.obj", verts, faces)
    lab = tmp_path / "d.json"
    lab.write_text(json.dumps(["wall"] * 9))
    mesh = load_annotated_mesh(obj, lab)
    assert mesh.n_vertices == 8
    assert is_watertight(mesh.faces)


def test_ply_roundtrip(tmp_path):
    mesh = box_mesh(subdivisions=2)
    path, _ = save_annotated_mesh(mesh, tmp_path / "room.ply")
    back = load_labeled_ply(path)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    np.testing.assert_allclose(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.vertex_labels, mesh.vertex_labels)


def test_ascii_ply(tmp_path):
    header = ["ply", "format ascii 1.0", "element vertex 8", "property float x",
              "property float y", "property float z", "element face 12",
              "property list uchar int vertex_indices", "end_header"]
    body = [" ".join(map(str, v)) for v in CUBE_VERTS]
    body += ["3 " + " ".join(map(str, f)) for f in CUBE_FACES]
    ply = tmp_path / "c.ply"
    ply.write_text("\n".join(header + body) + "\n")
    lab = tmp_path / "c.json"
    lab.write_text(json.dumps(["wall"] * 8))
    assert load_annotated_mesh(ply, lab).n_faces == 12


@pytest.mark.parametrize("labels, expected", [
    (("wall", "wall", "floor"), "wall"),
    (("floor", "wall", "wall"), "wall"),
    (("wall", "floor", "sofa"), "wall"),
])
def test_face_label_vote(labels, expected):
    mesh = AnnotatedMesh(np.eye(3), [[0, 1, 2]], list(labels))
    assert vertex_to_face_labels(mesh).face_labels.tolist() == [expected]


def test_face_label_tiebreak_uses_lowest_index():
    mesh = AnnotatedMesh(np.eye(3), [[2, 0, 1]], ["wall", "floor", "sofa"])
    assert vertex_to_face_labels(mesh).face_labels.tolist() == ["wall"]


def test_uniform_label_roundtrip():
    mesh = box_mesh(labels={"floor": "wall", "ceiling": "wall"})
    fl = vertex_to_face_labels(mesh)
    assert set(fl.face_labels) == {"wall"}
    np.testing.assert_array_equal(face_to_vertex_labels(fl), mesh.vertex_labels)


def test_close_cube_unchanged():
    mesh = AnnotatedMesh(CUBE_VERTS, CUBE_FACES, ["wall"] * 8)
    closed, hull = close_mesh(mesh, return_hull=True)
    assert closed.n_faces == 12
    assert is_watertight(hull)
    assert is_watertight(closed.faces)


def test_close_open_box_is_watertight():
    mesh = open_box_mesh(missing=("ceiling",))
    assert not is_watertight(mesh.faces)
    closed, hull = close_mesh(mesh, return_hull=True)
    assert is_watertight(hull)
    assert is_watertight(closed.faces)
    # the new top faces only touch former wall vertices
    top = closed.faces[np.all(np.isclose(closed.vertices[closed.faces][..., 2], 3.0), axis=1)]
    assert len(top) > 0
    assert set(closed.vertex_labels[top.ravel()]) == {"wall"}


def test_close_subdivided_box_adds_nothing():
    mesh = box_mesh((5, 4, 3), subdivisions=3)
    closed, hull = close_mesh(mesh, return_hull=True)
    assert closed.n_faces == mesh.n_faces and closed.n_vertices == mesh.n_vertices
    assert is_watertight(hull)


@pytest.mark.parametrize("missing", [("ceiling",), ("ceiling", "x0"), ("y1",)])
def test_close_subdivided_open_box(missing):
    # neighbouring walls put extra vertices on the open facet's outline
    mesh = open_box_mesh(subdivisions=3, missing=missing)
    closed, hull = close_mesh(mesh, return_hull=True)
    assert is_watertight(hull) and is_watertight(closed.faces)
    assert closed.n_vertices == mesh.n_vertices + len(missing)
    vol = np.einsum("ij,ij->i", closed.vertices[closed.faces[:, 0]],
                    np.cross(closed.vertices[closed.faces[:, 1]],
                             closed.vertices[closed.faces[:, 2]])).sum() / 6
    assert abs(vol) == pytest.approx(60.0, rel=1e-9)


def test_close_tetrahedron():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    cloud = AnnotatedMesh(verts, np.empty((0, 3), dtype=int), ["a", "b", "c", "d"])
    closed, hull = close_mesh(cloud, return_hull=True)
    assert len(hull) == 4 and closed.n_faces == 4
    assert is_watertight(hull)


def test_close_coplanar_raises():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    mesh = AnnotatedMesh(verts, [[0, 1, 2], [1, 3, 2]], ["floor"] * 4)
    with pytest.raises(MeshError, match="degenerate hull"):
        close_mesh(mesh)


def test_fill_small_holes_on_annulus():
    # square annulus: outer 2x2 m ring (perimeter 8 m) around a 0.1 m hole
    outer = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], dtype=float)
    inner = np.array([[0.95, 0.95], [1.05, 0.95], [1.05, 1.05], [0.95, 1.05]])
    verts = np.column_stack([np.vstack([outer, inner]), np.zeros(8)])
    faces = []
    for k in range(4):
        o0, o1, i0, i1 = k, (k + 1) % 4, 4 + k, 4 + (k + 1) % 4
        faces += [[o0, o1, i1], [o0, i1, i0]]
    faces = np.array(faces)
    assert len(boundary_loops(faces)) == 2
    filled, n_new = fill_small_holes(verts, faces, 0.5)
    assert n_new == 2
    assert len(boundary_loops(filled)) == 1


def test_simplify_identity_ratio():
    mesh = box_mesh(subdivisions=3)
    assert simplify(mesh, 1.0) is mesh


@pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
def test_simplify_bad_ratio(ratio):
    with pytest.raises(ValueError):
        simplify(box_mesh(subdivisions=2), ratio)


def test_simplify_too_small():
    with pytest.raises(MeshError):
        simplify(AnnotatedMesh(CUBE_VERTS, CUBE_FACES[:6], ["w"] * 8), 0.5)


def test_simplify_clamps_to_four(caplog):
    mesh = box_mesh(subdivisions=2)  # 48 faces
    with caplog.at_level(logging.WARNING):
        out = simplify(mesh, 0.01)
    assert "clamped to 4" in caplog.text
    assert out.n_faces >= 4


@pytest.mark.slow
def test_simplify_40k_faces():
    mesh = uv_sphere(101, 200)
    assert mesh.n_faces == 40000
    out = simplify(mesh, 0.025)
    assert out.n_faces <= 1000
    assert out.label_set == {"wall", "floor"}
    assert is_watertight(out.faces)


def test_two_label_sphere_nearest_neighbor_oracle():
    mesh = uv_sphere(30, 60)
    out = simplify(mesh, 0.1)
    assert out.n_faces <= int(np.ceil(0.1 * mesh.n_faces))
    assert out.label_set == {"wall", "floor"}
    _, idx = cKDTree(mesh.vertices).query(out.vertices)
    agree = np.mean(out.vertex_labels == mesh.vertex_labels[idx])
    assert agree >= 0.9


@pytest.mark.skipif(not _kernels.available("qem"), reason="compiled kernel not built")
def test_compiled_and_python_collapse_agree():
    mesh = box_mesh(subdivisions=6, labels={"x0": "window"})
    names, ids = np.unique(mesh.vertex_labels, return_inverse=True)
    Q = initial_quadrics(mesh.vertices, mesh.faces, mesh.vertex_labels)
    target = mesh.n_faces // 5
    py = collapse_loop_py(mesh.vertices, mesh.faces, Q, ids, target)
    cc = _kernels.pick("qem", "compiled").collapse_loop(mesh.vertices, mesh.faces, Q, ids, target)
    for a, b in zip(py, cc):
        np.testing.assert_array_equal(a, b)


def test_pure_python_backend_env(monkeypatch):
    monkeypatch.setenv("BIRGEN_PURE_PYTHON", "1")
    assert _kernels.pick("qem", None) is None
    mesh = box_mesh(subdivisions=4)
    out = simplify(mesh, 0.25)
    assert out.n_faces <= int(np.ceil(0.25 * mesh.n_faces))


@settings(max_examples=15, deadline=None)
@given(ratio=st.floats(0.05, 1.0), n=st.integers(2, 5))
def test_simplify_properties(ratio, n):
    mesh = box_mesh(size=(3.0, 2.0, 2.5), subdivisions=n, labels={"y0": "glass"})
    out = simplify(mesh, ratio)
    assert 4 <= out.n_faces <= max(4, int(np.ceil(ratio * mesh.n_faces)))
    assert out.label_set <= mesh.label_set
    assert np.all(np.isfinite(out.vertices))
    assert out.faces.max() < out.n_vertices
    assert is_watertight(out.faces)


def test_cube_edges():
    assert len(unique_edges(CUBE_FACES)) == 18
