import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birgen import autodiff as ad
from birgen.geometry import box_mesh
from birgen.materials import uniform_material_mesh
from birgen.scene_graph import (GraphEncoderParams, GraphError, SceneGraph, build_graph,
                                encode_scene, encode_scene_t, gcn_layer, load_latent, save_latent,
                                squared_edges, topn_pool)

from conftest import CUBE_FACES, CUBE_VERTS


def cube_graph(ab=0.3, sc=0.1):
    from birgen.geometry import AnnotatedMesh
    m = AnnotatedMesh(CUBE_VERTS + [2.0, 3.0, 4.0], CUBE_FACES, ["wall"] * 8)
    return build_graph(uniform_material_mesh(m, ab, sc))


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    e = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return rng.normal(size=(n, 5)), np.array(e, dtype=np.int64).reshape(-1, 2)


def dense_adj(edges, n):
    a = np.zeros((n, n))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a


def dense_gcn(x, edges, W):
    a_hat = dense_adj(edges, len(x)) + np.eye(len(x))
    d = a_hat.sum(axis=1)
    return np.maximum(np.diag(d ** -0.5) @ a_hat @ np.diag(d ** -0.5) @ x @ W, 0.0)


# ---------------------------------------------------------------- build_graph

def test_single_triangle():
    from birgen.geometry import AnnotatedMesh
    m = AnnotatedMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], ["a"] * 3)
    g = build_graph(uniform_material_mesh(m, 0.2))
    assert g.n_nodes == 3 and len(g.edges) == 3


def test_cube_edge_count():
    g = cube_graph()
    assert g.n_nodes == 8 and len(g.edges) == 18
    brute = {tuple(sorted((f[a], f[b]))) for f in CUBE_FACES for a, b in ((0, 1), (1, 2), (0, 2))}
    assert {tuple(e) for e in g.edges} == brute


def test_normalize_shifts_to_aabb_min():
    g = cube_graph()
    np.testing.assert_allclose(g.node_features[0, :3], CUBE_VERTS[0])
    np.testing.assert_allclose(g.origin, [2, 3, 4])
    np.testing.assert_allclose(g.to_scene_frame([3, 3, 5]), [1, 0, 1])


def test_features_carry_materials():
    g = cube_graph(ab=0.4, sc=0.25)
    np.testing.assert_allclose(g.node_features[:, 3], 0.4)
    np.testing.assert_allclose(g.node_features[:, 4], 0.25)


def test_graph_rejects_bad_edges():
    with pytest.raises(GraphError, match="range"):
        SceneGraph(np.zeros((2, 5)), [[0, 2]])
    with pytest.raises(GraphError, match="self-loop"):
        SceneGraph(np.zeros((2, 5)), [[1, 1]])


# ---------------------------------------------------------------- gcn_layer

def test_gcn_isolated_node():
    x, W = np.array([[1.0, -2.0]]), np.array([[0.5, 1.0], [-1.0, 0.25]])
    np.testing.assert_allclose(gcn_layer(x, np.zeros((0, 2)), W), np.maximum(x @ W, 0))


def test_gcn_disconnected_twins():
    x = np.array([[0.3, 1.2], [0.3, 1.2]])
    out = gcn_layer(x, np.zeros((0, 2)), np.random.default_rng(0).normal(size=(2, 4)))
    np.testing.assert_array_equal(out[0], out[1])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 200), st.floats(0.01, 0.5), st.integers(0, 2 ** 31))
def test_gcn_matches_dense(n, p, seed):
    x, e = random_graph(n, p, seed)
    W = np.random.default_rng(seed + 1).normal(size=(5, 7))
    np.testing.assert_allclose(gcn_layer(x, e, W), dense_gcn(x, e, W), rtol=1e-6, atol=1e-12)


def test_gcn_shape_mismatch():
    with pytest.raises(GraphError, match="width"):
        gcn_layer(np.zeros((3, 4)), np.zeros((0, 2)), np.zeros((5, 2)))


# ---------------------------------------------------------------- pooling

def test_pool_keep_all_squares_adjacency():
    x, e = random_graph(12, 0.3, 4)
    p = np.ones(5)
    out, e2 = topn_pool(x, e, p, 1.0)
    a = dense_adj(e, 12)
    a2 = (a @ a > 0) & ~np.eye(12, dtype=bool)
    assert len(out) == 12
    assert {tuple(v) for v in e2} == {(i, j) for i in range(12) for j in range(i + 1, 12) if a2[i, j]}


def test_pool_ten_nodes_keeps_six():
    x, e = random_graph(10, 0.4, 5)
    out, _ = topn_pool(x, e, np.arange(1.0, 6.0), 0.6)
    assert len(out) == 6


def test_pool_path_bridge():
    x = np.zeros((3, 5))
    x[:, 0] = [2.0, -5.0, 1.0]  # middle node scores lowest
    out, e2 = topn_pool(x, [[0, 1], [1, 2]], np.eye(5)[0], 2 / 3)
    assert len(out) == 2
    assert e2.tolist() == [[0, 1]]


def test_pool_gating_and_ties():
    x = np.array([[1.0, 0, 0, 0, 0], [1.0, 0, 0, 0, 0], [0.5, 0, 0, 0, 0]])
    p = np.array([2.0, 0, 0, 0, 0])
    out, _ = topn_pool(x, np.zeros((0, 2)), p, 0.5)  # ceil(1.5) = 2, ties keep lower indices
    np.testing.assert_allclose(out[:, 0], [math.tanh(1.0)] * 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 120), st.sampled_from([0.3, 0.6, 0.75, 1.0]))
def test_pool_size_exact(n, keep):
    x, e = random_graph(n, 0.1, n)
    out, e2 = topn_pool(x, e, np.ones(5), keep)
    assert len(out) == math.ceil(round(keep * n, 9))
    assert e2.size == 0 or e2.max() < len(out)


def test_squared_edges_drop_diagonal():
    assert squared_edges([[0, 1]], 2).size == 0
    assert squared_edges([[0, 1], [1, 2]], 3).tolist() == [[0, 2]]


# ---------------------------------------------------------------- encoder

def scripted_encoder(graph, P):
    """Layer-by-layer dense re-execution of the encoder."""
    x, e = graph.node_features, graph.edges
    means, maxes = [], []
    for W, p in zip(P.W, P.p):
        x = dense_gcn(x, e, W.data)
        s = x @ p.data / np.linalg.norm(p.data)
        k = math.ceil(round(0.6 * len(x), 9))
        keep = np.sort(np.argsort(-s, kind="stable")[:k])
        a = dense_adj(e, len(s))
        a2 = (a @ a > 0)[np.ix_(keep, keep)]
        x = x[keep] * np.tanh(s[keep])[:, None]
        e = [(i, j) for i in range(k) for j in range(i + 1, k) if a2[i, j]]
        means.append(x.mean(axis=0))
        maxes.append(x.max(axis=0))
    h = np.maximum(np.concatenate(means + maxes) @ P.R1.data + P.b1.data, 0)
    return h @ P.R2.data + P.b2.data


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_encoder_matches_scripted(seed):
    g = cube_graph()
    P = GraphEncoderParams.init(seed)
    np.testing.assert_allclose(encode_scene(g, P), scripted_encoder(g, P), rtol=1e-10, atol=1e-12)


def test_encoder_zero_weights():
    P = GraphEncoderParams.init(0)
    for t in P.parameters():
        t.data[...] = 0.0
    P.b2.data[:] = np.arange(8)
    np.testing.assert_array_equal(encode_scene(cube_graph(), P), np.arange(8))


def test_encoder_shapes():
    P = GraphEncoderParams.init(0)
    assert [w.data.shape for w in P.W] == [(5, 32), (32, 32), (32, 32)]
    assert P.R1.data.shape == (192, 64) and P.R2.data.shape == (64, 8)


def test_encoder_permutation_invariant():
    g = build_graph(uniform_material_mesh(box_mesh((3, 2, 2), subdivisions=2), 0.3, 0.2))
    rng = np.random.default_rng(0)
    feats = g.node_features.copy()
    feats[:, 3:] = rng.uniform(0, 1, size=(g.n_nodes, 2))  # distinct scores
    g = SceneGraph(feats, g.edges)
    P = GraphEncoderParams.init(3)
    perm = rng.permutation(g.n_nodes)
    np.testing.assert_allclose(encode_scene(g.permuted(perm), P), encode_scene(g, P),
                               rtol=1e-10, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2 ** 31))
def test_latent_finite(n, seed):
    x, e = random_graph(n, 0.2, seed)
    z = encode_scene(SceneGraph(1e3 * x, e), GraphEncoderParams.init(seed % 7))
    assert z.shape == (8,) and np.all(np.isfinite(z))


def test_encoder_too_small():
    with pytest.raises(GraphError, match="too small"):
        encode_scene(SceneGraph(np.zeros((2, 5)), [[0, 1]]), GraphEncoderParams.init(0))


def test_encoder_gradient_flows():
    P = GraphEncoderParams.init(0)
    ad.tsum(encode_scene_t(cube_graph(), P)).backward()
    assert np.any(P.W[0].grad != 0) and np.any(P.R2.grad != 0)


def test_params_and_latent_round_trip(tmp_path):
    P = GraphEncoderParams.init(5)
    P.save(tmp_path / "enc")
    Q = GraphEncoderParams.load(tmp_path / "enc")
    g = cube_graph()
    np.testing.assert_array_equal(encode_scene(g, P), encode_scene(g, Q))
    z = encode_scene(g, P)
    save_latent(tmp_path / "z.json", z)
    np.testing.assert_array_equal(load_latent(tmp_path / "z.json"), z)


def test_latent_file_validation(tmp_path):
    (tmp_path / "z.json").write_text("[1, 2]")
    with pytest.raises(GraphError):
        load_latent(tmp_path / "z.json")
