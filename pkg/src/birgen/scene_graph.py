"""Graph form of a material-annotated mesh and the GCN + top-K pooling scene encoder."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .geometry import unique_edges
from .materials import MaterialAnnotatedMesh
from .tensor_io import load_tensors, save_tensors

HIDDEN = (32, 32, 32)
READOUT_HIDDEN = 64
LATENT_DIM = 8
POOL_KEEP = 0.6


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SceneGraph:
    """Node features ``[x, y, z, ab, sc]`` and undirected edges ``(i, j)`` with ``i < j``."""

    node_features: np.ndarray
    edges: np.ndarray
    origin: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if x.ndim != 2 or not np.all(np.isfinite(x)):
            raise GraphError("node features must be a finite 2-D array")
        if e.size:
            if e.min() < 0 or e.max() >= len(x):
                raise GraphError("edge index out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise GraphError("self-loops are not allowed in the edge list")
            e = np.unique(np.sort(e, axis=1), axis=0)
        origin = np.zeros(3) if self.origin is None else np.asarray(self.origin, dtype=np.float64)
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "origin", origin)

    @property
    def n_nodes(self) -> int:
        return len(self.node_features)

    def to_scene_frame(self, point) -> np.ndarray:
        """Map a world-frame position into the graph's (normalized) frame."""
        return np.asarray(point, dtype=np.float64) - self.origin

    def permuted(self, perm) -> "SceneGraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return SceneGraph(self.node_features[perm], inv[self.edges], self.origin)


def build_graph(mesh: MaterialAnnotatedMesh, normalize: bool = True) -> SceneGraph:
    """One node per vertex, one edge per unique mesh edge.

    With ``normalize`` the coordinates are shifted so the bounding-box minimum
    is the origin; the shift is kept on the graph for source/listener positions.
    """
    origin = mesh.vertices.min(axis=0) if normalize else np.zeros(3)
    feats = np.column_stack([mesh.vertices - origin, mesh.ab, mesh.sc])
    return SceneGraph(feats, unique_edges(mesh.faces), origin)


# ---------------------------------------------------------------- layers

def normalized_adjacency(edges, n) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` as a sparse matrix."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n)])
    a_hat = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    a_hat.data[:] = 1.0  # duplicates collapse to a binary matrix
    d = np.asarray(a_hat.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    return (s @ a_hat @ s).tocsr()


def gcn_layer_t(x, edges, W):
    x, W = ad.as_tensor(x), ad.as_tensor(W)
    if x.shape[1] != W.shape[0]:
        raise GraphError(f"feature width {x.shape[1]} does not match W rows {W.shape[0]}")
    return ad.relu(ad.spmm(normalized_adjacency(edges, x.shape[0]), x @ W))


def gcn_layer(features, edges, W) -> np.ndarray:
    """``ReLU(D^-1/2 (A + I) D^-1/2 X W)`` evaluated sparsely over the edge list."""
    with ad.no_grad():
        return gcn_layer_t(features, edges, W).data


def squared_edges(edges, n) -> np.ndarray:
    """Edges of the binary square of the adjacency matrix, diagonal removed."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(e) == 0:
        return e
    a = sp.csr_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                      shape=(n, n))
    a2 = sp.triu(a @ a, k=1).tocoo()
    out = np.column_stack([a2.row, a2.col]).astype(np.int64)
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def pool_selection(scores, keep):
    """Indices of the ``ceil(keep * N)`` best scores (ties to lower index), ascending."""
    if not 0 < keep <= 1:
        raise GraphError("keep must be in (0, 1]")
    # exact rational product so e.g. 0.6 * 10 cannot round up to 7
    k = math.ceil(Fraction(keep).limit_denominator(10**9) * len(scores))
    order = np.argsort(-np.asarray(scores), kind="stable")
    return np.sort(order[:k])


def topn_pool_t(x, edges, p, keep=POOL_KEEP):
    x, p = ad.as_tensor(x), ad.as_tensor(p)
    n = x.shape[0]
    norm = np.linalg.norm(p.data)
    s = (x @ p) * (1.0 / norm if norm > 0 else 1.0)  # a zero p scores every node 0
    idx = pool_selection(s.data, keep)
    gated = x[idx] * ad.reshape(ad.tanh(s[idx]), (-1, 1))
    remap = np.full(n, -1, dtype=np.int64)
    remap[idx] = np.arange(len(idx))
    e2 = remap[squared_edges(edges, n)]
    e2 = e2[(e2 >= 0).all(axis=1)] if len(e2) else e2.reshape(0, 2)
    return gated, e2, idx


def topn_pool(features, edges, p, keep: float = POOL_KEEP):
    """Top-K pooling: keep ``ceil(keep * N)`` nodes by projection score.

    Kept rows are gated by ``tanh(score)`` and the new edge set is the binary
    square of the adjacency restricted to kept nodes, reindexed in ascending
    original-index order.
    """
    with ad.no_grad():
        gated, e2, _ = topn_pool_t(features, edges, p, keep)
    return gated.data, e2


# ---------------------------------------------------------------- encoder

@dataclass
class GraphEncoderParams:
    W: list
    p: list
    R1: ad.Tensor
    b1: ad.Tensor
    R2: ad.Tensor
    b2: ad.Tensor

    @classmethod
    def init(cls, seed, in_dim=5, hidden=HIDDEN, readout_hidden=READOUT_HIDDEN,
             latent=LATENT_DIM):
        rng = np.random.default_rng(seed)

        def glorot(a, b):
            lim = np.sqrt(6.0 / (a + b))
            return ad.parameter(rng.uniform(-lim, lim, size=(a, b)))
        dims = (in_dim,) + tuple(hidden)
        W = [glorot(dims[i], dims[i + 1]) for i in range(len(hidden))]
        p = [ad.parameter(rng.normal(size=h) / np.sqrt(h)) for h in hidden]
        width = 2 * sum(hidden)
        return cls(W, p, glorot(width, readout_hidden), ad.parameter(np.zeros(readout_hidden)),
                   glorot(readout_hidden, latent), ad.parameter(np.zeros(latent)))

    def tensors(self) -> dict:
        out = {f"W{i + 1}": w for i, w in enumerate(self.W)}
        out.update({f"p{i + 1}": q for i, q in enumerate(self.p)})
        out.update(R1=self.R1, b1=self.b1, R2=self.R2, b2=self.b2)
        return out

    def parameters(self) -> list:
        return list(self.tensors().values())

    def save(self, path):
        save_tensors(path, {k: t.data for k, t in self.tensors().items()})

    @classmethod
    def load(cls, path):
        return cls.from_arrays(load_tensors(path))

    @classmethod
    def from_arrays(cls, t: dict):
        n = sum(1 for k in t if k.startswith("W"))
        P = {k: ad.parameter(v) for k, v in t.items()}
        return cls([P[f"W{i + 1}"] for i in range(n)], [P[f"p{i + 1}"] for i in range(n)],
                   P["R1"], P["b1"], P["R2"], P["b2"])


def encode_scene_t(graph: SceneGraph, params: GraphEncoderParams) -> ad.Tensor:
    if graph.n_nodes < 3:
        raise GraphError("graph too small: need at least 3 nodes")
    x, edges = ad.Tensor(graph.node_features), graph.edges
    means, maxes = [], []
    for W, p in zip(params.W, params.p):
        x = gcn_layer_t(x, edges, W)
        x, edges, _ = topn_pool_t(x, edges, p, POOL_KEEP)
        means.append(x.mean(axis=0))
        maxes.append(x.max(axis=0))
    h = ad.concat(means + maxes, axis=0)
    h = ad.relu(h @ params.R1 + params.b1)
    return h @ params.R2 + params.b2


def encode_scene(graph: SceneGraph, params: GraphEncoderParams) -> np.ndarray:
    """Scene latent: 3 x (GCN, top-K pool), mean/max readout per layer, then MLP."""
    with ad.no_grad():
        return encode_scene_t(graph, params).data.copy()


def save_latent(path, latent):
    Path(path).write_text(json.dumps([float(v) for v in latent]) + "\n")


def load_latent(path) -> np.ndarray:
    z = np.asarray(json.loads(Path(path).read_text()), dtype=np.float64)
    if z.shape != (LATENT_DIM,) or not np.all(np.isfinite(z)):
        raise GraphError(f"{path}: expected {LATENT_DIM} finite numbers")
    return z
