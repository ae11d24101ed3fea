"""Annotated triangle mesh containers and label bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh violates its structural contract."""


@dataclass(frozen=True)
class AnnotatedMesh:
    """Triangle mesh with one semantic label per vertex.

    Parameters
    ----------
    vertices : ndarray, shape (V, 3)
        Vertex coordinates in meters.
    faces : ndarray, shape (F, 3)
        Vertex index triples.
    vertex_labels : ndarray, shape (V,)
        Semantic label string of each vertex.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_labels: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        lab = np.asarray(self.vertex_labels).astype(str)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_labels", lab)
        self.validate()

    def validate(self):
        v, f = self.vertices, self.faces
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (V, 3)")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinates")
        if len(self.vertex_labels) != len(v):
            raise MeshError(
                f"label count mismatch: {len(self.vertex_labels)} labels "
                f"for {len(v)} vertices")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2])
                      | (f[:, 0] == f[:, 2])):
                raise MeshError("face references the same vertex twice")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def label_set(self) -> set:
        return set(self.vertex_labels.tolist())

    def face_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class FaceLabeledMesh(AnnotatedMesh):
    """AnnotatedMesh with an additional label per face."""

    face_labels: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        lab = np.asarray(self.face_labels).astype(str)
        object.__setattr__(self, "face_labels", lab)
        if len(lab) != len(self.faces):
            raise MeshError("face_labels length must equal face count")


def triangle_areas(vertices, faces):
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def unique_edges(faces) -> np.ndarray:
    """Sorted (i < j) unique undirected edges of a triangle list."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0) if len(e) else e.reshape(0, 2)


def edge_face_counts(faces) -> dict:
    """Map each undirected edge (i, j), i < j, to its incident face count."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    keys, counts = np.unique(e, axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(keys, counts)}


def is_watertight(faces) -> bool:
    """True when every edge borders exactly two faces."""
    counts = edge_face_counts(faces)
    return bool(counts) and all(c == 2 for c in counts.values())


def vertex_to_face_labels(mesh: AnnotatedMesh) -> FaceLabeledMesh:
    """Label each face by majority vote of its three vertex labels.

    A three-way disagreement falls back to the label of the face's
    lowest-index vertex.
    """
    f = mesh.faces
    lab = mesh.vertex_labels
    if len(f) == 0:
        face_labels = np.empty(0, dtype=lab.dtype)
    else:
        l0, l1, l2 = lab[f[:, 0]], lab[f[:, 1]], lab[f[:, 2]]
        lowest = lab[f.min(axis=1)]
        face_labels = np.where(
            (l0 == l1) | (l0 == l2), l0, np.where(l1 == l2, l1, lowest))
    return FaceLabeledMesh(mesh.vertices, mesh.faces, mesh.vertex_labels,
                           face_labels=face_labels)


def face_to_vertex_labels(mesh: FaceLabeledMesh) -> np.ndarray:
    """Per-vertex majority of incident face labels (isolated vertices keep theirs)."""
    out = mesh.vertex_labels.copy()
    votes: list[dict] = [dict() for _ in range(mesh.n_vertices)]
    for face, label in zip(mesh.faces, mesh.face_labels):
        for v in face:
            votes[v][label] = votes[v].get(label, 0) + 1
    for i, vote in enumerate(votes):
        if vote:
            out[i] = max(sorted(vote), key=vote.get)
    return out
