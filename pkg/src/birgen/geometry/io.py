"""OBJ / PLY readers, the PLY writer and label sidecar handling."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import AnnotatedMesh, MeshError, triangle_areas

log = logging.getLogger(__name__)

MERGE_TOL = 1e-6
AREA_EPS = 1e-12

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class MeshParseError(MeshError):
    pass


def read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    # fan-triangulate polygons
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except (ValueError, IndexError) as exc:
                raise MeshParseError(f"{path}:{lineno}: {exc}") from None
    if any(len(v) != 3 for v in verts):
        raise MeshParseError(f"{path}: vertex with fewer than 3 coordinates")
    return (np.asarray(verts, dtype=np.float64).reshape(-1, 3),
            np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise MeshParseError("missing 'ply' magic")
    fmt = None
    elements = []  # (name, count, [(prop, dtype) | (prop, count_dtype, item_dtype)])
    while True:
        line = fh.readline()
        if not line:
            raise MeshParseError("unterminated PLY header")
        tok = line.decode("ascii", "replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1][2].append((tok[4], _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise MeshParseError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Read a PLY file into ``{element: {property: array}}``.

    List properties come back as a list of per-row arrays.
    """
    out = {}
    with open(path, "rb") as fh:
        try:
            fmt, elements = _parse_ply_header(fh)
        except (KeyError, IndexError, ValueError) as exc:
            raise MeshParseError(f"{path}: bad PLY header ({exc})") from None
        if fmt == "ascii":
            tokens = fh.read().split()
            pos = 0
            for name, count, props in elements:
                cols = {p[0]: [] for p in props}
                for _ in range(count):
                    for p in props:
                        if len(p) == 3:
                            n = int(tokens[pos]); pos += 1
                            cols[p[0]].append(np.array(tokens[pos:pos + n], dtype=p[2]))
                            pos += n
                        else:
                            cols[p[0]].append(tokens[pos]); pos += 1
                out[name] = {
                    p[0]: (cols[p[0]] if len(p) == 3
                           else np.asarray(cols[p[0]], dtype=p[1]))
                    for p in props}
            return out
        order = "<" if fmt == "binary_little_endian" else ">"
        data = fh.read()
    pos = 0
    for name, count, props in elements:
        if all(len(p) == 2 for p in props):
            dt = np.dtype([(p[0], order + p[1]) for p in props])
            arr = np.frombuffer(data, dtype=dt, count=count, offset=pos)
            pos += dt.itemsize * count
            out[name] = {p[0]: arr[p[0]].astype(p[1]) for p in props}
            continue
        cols = {p[0]: [] for p in props}
        for _ in range(count):
            for p in props:
                if len(p) == 3:
                    cdt = np.dtype(order + p[1])
                    n = int(np.frombuffer(data, cdt, 1, pos)[0]); pos += cdt.itemsize
                    idt = np.dtype(order + p[2])
                    cols[p[0]].append(np.frombuffer(data, idt, n, pos).astype(p[2]))
                    pos += idt.itemsize * n
                else:
                    dt = np.dtype(order + p[1])
                    cols[p[0]].append(np.frombuffer(data, dt, 1, pos)[0]); pos += dt.itemsize
        out[name] = {p[0]: (cols[p[0]] if len(p) == 3
                            else np.asarray(cols[p[0]], dtype=p[1])) for p in props}
    return out


def _ply_mesh(path):
    try:
        el = read_ply(path)
        vx = el["vertex"]
        verts = np.column_stack([vx["x"], vx["y"], vx["z"]]).astype(np.float64)
        faces = []
        fe = el.get("face", {})
        key = "vertex_indices" if "vertex_indices" in fe else "vertex_index"
        for poly in fe.get(key, []):
            for k in range(1, len(poly) - 1):
                faces.append([poly[0], poly[k], poly[k + 1]])
    except (KeyError, ValueError, IndexError) as exc:
        raise MeshParseError(f"{path}: {exc}") from None
    return verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3), el


def read_labels(path):
    """Read a vertex label sidecar: JSON array or CSV ``vertex_index,label``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json" or text.lstrip().startswith("["):
        try:
            labels = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MeshParseError(f"{path}: {exc}") from None
        if not isinstance(labels, list):
            raise MeshParseError(f"{path}: expected a JSON array of labels")
        return np.asarray([str(x) for x in labels])
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if rows and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]  # header
    try:
        pairs = sorted((int(r[0]), r[1].strip()) for r in rows)
    except (ValueError, IndexError) as exc:
        raise MeshParseError(f"{path}: {exc}") from None
    idx = [p[0] for p in pairs]
    if idx != list(range(len(idx))):
        raise MeshParseError(f"{path}: vertex indices must be 0..N-1 without gaps")
    return np.asarray([p[1] for p in pairs])


def clean_mesh(vertices, faces, labels, merge_tol=MERGE_TOL):
    """Merge near-duplicate vertices and drop degenerate faces.

    Returns ``(vertices, faces, labels, n_dropped)``. A merged vertex keeps the
    label of the lowest original index in its cluster.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    labels = np.asarray(labels)
    n = len(vertices)
    rep = np.arange(n)
    if n and merge_tol > 0:
        pairs = cKDTree(vertices).query_pairs(merge_tol, output_type="ndarray")
        if len(pairs):
            # union-find with the minimum index as representative
            def find(i):
                while rep[i] != i:
                    rep[i] = rep[rep[i]]
                    i = rep[i]
                return i
            for a, b in pairs:
                ra, rb = find(a), find(b)
                if ra != rb:
                    rep[max(ra, rb)] = min(ra, rb)
            rep = np.array([find(i) for i in range(n)])
    keep = np.unique(rep)
    remap = np.full(n, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    new_faces = remap[rep[faces]] if len(faces) else faces
    vertices, labels = vertices[keep], labels[keep]
    if len(new_faces):
        distinct = ((new_faces[:, 0] != new_faces[:, 1])
                    & (new_faces[:, 1] != new_faces[:, 2])
                    & (new_faces[:, 0] != new_faces[:, 2]))
        good = distinct.copy()
        good[distinct] = triangle_areas(vertices, new_faces[distinct]) > AREA_EPS
        n_drop = int((~good).sum())
        new_faces = new_faces[good]
    else:
        n_drop = 0
    return vertices, new_faces, labels, n_drop


def load_annotated_mesh(mesh_path, labels_path) -> AnnotatedMesh:
    """Load an OBJ/PLY mesh plus its vertex label sidecar.

    Degenerate faces are dropped with a warning and vertices closer than
    1e-6 m are merged.
    """
    mesh_path = Path(mesh_path)
    ext = mesh_path.suffix.lower()
    if ext == ".obj":
        verts, faces = read_obj(mesh_path)
    elif ext == ".ply":
        verts, faces, _ = _ply_mesh(mesh_path)
    else:
        raise MeshParseError(f"unsupported mesh format {ext!r}")
    if len(verts) == 0 or len(faces) == 0:
        raise MeshError("empty mesh")
    if faces.min() < 0 or faces.max() >= len(verts):
        raise MeshParseError("face index out of range")
    labels = read_labels(labels_path)
    if len(labels) != len(verts):
        raise MeshError(
            f"label count mismatch: {len(labels)} labels for {len(verts)} vertices")
    verts, faces, labels, n_drop = clean_mesh(verts, faces, labels)
    if n_drop:
        log.warning("dropped %d degenerate face(s) from %s", n_drop, mesh_path)
    if len(faces) == 0:
        raise MeshError("empty mesh")
    return AnnotatedMesh(verts, faces, labels)


def label_dictionary(labels):
    names = sorted(set(np.asarray(labels).tolist()))
    return names, {name: i for i, name in enumerate(names)}


def write_ply(path, vertices, faces, vertex_props=None, face_props=None):
    """Write a binary little-endian PLY.

    ``vertex_props`` / ``face_props`` map property names to 1-D arrays; the
    numpy dtype picks the PLY type (int32 -> int, float64 -> double).
    """
    vertex_props = vertex_props or {}
    face_props = face_props or {}
    tname = {np.dtype("int32"): "int", np.dtype("float64"): "double",
             np.dtype("float32"): "float", np.dtype("uint8"): "uchar"}
    vfields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    vfields += [(k, np.asarray(v).dtype.newbyteorder("<").str) for k, v in vertex_props.items()]
    vdt = np.dtype(vfields)
    varr = np.empty(len(vertices), dtype=vdt)
    varr["x"], varr["y"], varr["z"] = np.asarray(vertices, dtype=np.float64).T
    for k, v in vertex_props.items():
        varr[k] = v
    ffields = [("n", "u1"), ("idx", "<i4", (3,))]
    ffields += [(k, np.asarray(v).dtype.newbyteorder("<").str) for k, v in face_props.items()]
    fdt = np.dtype(ffields)
    farr = np.empty(len(faces), dtype=fdt)
    farr["n"] = 3
    farr["idx"] = faces
    for k, v in face_props.items():
        farr[k] = v
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(vertices)}",
              "property double x", "property double y", "property double z"]
    header += [f"property {tname[np.asarray(v).dtype]} {k}" for k, v in vertex_props.items()]
    header += [f"element face {len(faces)}",
               "property list uchar int vertex_indices"]
    header += [f"property {tname[np.asarray(v).dtype]} {k}" for k, v in face_props.items()]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(varr.tobytes())
        fh.write(farr.tobytes())


def save_annotated_mesh(mesh: AnnotatedMesh, ply_path, labels_json_path=None):
    """Write a mesh as PLY with an integer ``label`` property + JSON dictionary."""
    ply_path = Path(ply_path)
    if labels_json_path is None:
        labels_json_path = ply_path.with_suffix(".labels.json")
    names, index = label_dictionary(mesh.vertex_labels)
    ids = np.array([index[x] for x in mesh.vertex_labels], dtype=np.int32)
    write_ply(ply_path, mesh.vertices, mesh.faces, vertex_props={"label": ids})
    Path(labels_json_path).write_text(json.dumps(names, indent=1) + "\n")
    return ply_path, Path(labels_json_path)


def load_labeled_ply(ply_path, labels_json_path=None) -> AnnotatedMesh:
    """Inverse of :func:`save_annotated_mesh`."""
    ply_path = Path(ply_path)
    if labels_json_path is None:
        labels_json_path = ply_path.with_suffix(".labels.json")
    verts, faces, el = _ply_mesh(ply_path)
    names = json.loads(Path(labels_json_path).read_text())
    try:
        ids = el["vertex"]["label"]
    except KeyError:
        raise MeshParseError(f"{ply_path}: no per-vertex 'label' property") from None
    labels = np.asarray(names)[ids.astype(np.int64)]
    return AnnotatedMesh(verts, faces, labels)

