"""Mesh loading, hole closing, label transfer and simplification."""

from .mesh import (AnnotatedMesh, FaceLabeledMesh, MeshError, edge_face_counts,
                   face_to_vertex_labels, is_watertight, triangle_areas,
                   unique_edges, vertex_to_face_labels)
from .io import (MeshParseError, load_annotated_mesh, load_labeled_ply,
                 read_labels, save_annotated_mesh, write_ply)
from .hull import boundary_loops, close_mesh, convex_hull_faces, fill_small_holes
from .simplify import simplify
from .shapes import box_mesh, open_box_mesh, uv_sphere

__all__ = [
    "AnnotatedMesh", "FaceLabeledMesh", "MeshError", "MeshParseError",
    "box_mesh", "boundary_loops", "close_mesh", "convex_hull_faces",
    "edge_face_counts", "face_to_vertex_labels", "fill_small_holes",
    "is_watertight", "load_annotated_mesh", "load_labeled_ply", "open_box_mesh",
    "read_labels", "save_annotated_mesh", "simplify", "triangle_areas",
    "unique_edges", "uv_sphere", "vertex_to_face_labels", "write_ply",
]
