"""Semantic label -> acoustic material lookup and per-vertex material features."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .geometry import AnnotatedMesh, FaceLabeledMesh, vertex_to_face_labels
from .geometry.io import label_dictionary, read_ply, write_ply

log = logging.getLogger(__name__)

BAND_CENTERS = (62.5, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
BAND_COLUMNS = ("a62", "a125", "a250", "a500", "a1000", "a2000", "a4000", "a8000")
STRATEGIES = ("exact", "token-overlap", "embedding-cosine")


class MaterialError(ValueError):
    pass


class NoMatch(LookupError):
    pass


@dataclass(frozen=True)
class MaterialEntry:
    name: str
    absorption: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in self.absorption)
        if len(a) != 8:
            raise MaterialError(f"{self.name!r}: expected 8 band coefficients, got {len(a)}")
        if not all(0.0 <= x <= 1.0 for x in a):
            raise MaterialError(f"{self.name!r}: absorption out of range [0, 1]")
        object.__setattr__(self, "absorption", a)


DEFAULT_MATERIAL = MaterialEntry("default", (0.1,) * 8)


@dataclass(frozen=True)
class MaterialDatabase:
    entries: tuple
    embeddings: dict = field(default_factory=dict)

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise MaterialError(f"duplicate material name(s): {dup}")
        emb = {k: np.asarray(v, dtype=np.float64) for k, v in self.embeddings.items()}
        dims = {v.shape for v in emb.values()}
        if len(dims) > 1 or any(len(d) != 1 for d in dims):
            raise MaterialError(f"ragged embedding dimensions: {sorted(dims)}")
        object.__setattr__(self, "embeddings", emb)

    def __len__(self):
        return len(self.entries)

    def get(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


@dataclass(frozen=True)
class ScatteringPrior:
    mean: float = 0.3
    std: float = 0.15
    clamp: tuple = (0.01, 0.99)

    def __post_init__(self):
        lo, hi = self.clamp
        if self.std < 0:
            raise MaterialError("scattering std must be >= 0")
        if not 0.0 <= lo < hi <= 1.0:
            raise MaterialError("scattering clamp must satisfy 0 <= lo < hi <= 1")

    def clamped_mean(self) -> float:
        """Exact mean of ``clip(Normal(mean, std), lo, hi)``."""
        lo, hi = self.clamp
        if self.std == 0:
            return float(np.clip(self.mean, lo, hi))
        a, b = (lo - self.mean) / self.std, (hi - self.mean) / self.std
        inside = self.mean * (norm.cdf(b) - norm.cdf(a)) + self.std * (norm.pdf(a) - norm.pdf(b))
        return float(lo * norm.cdf(a) + inside + hi * norm.sf(b))

    def truncated_mean(self) -> float:
        lo, hi = self.clamp
        a, b = (lo - self.mean) / self.std, (hi - self.mean) / self.std
        z = norm.cdf(b) - norm.cdf(a)
        return float(self.mean + self.std * (norm.pdf(a) - norm.pdf(b)) / z)


# ---------------------------------------------------------------- loading

def _entries_from_json(obj):
    if isinstance(obj, dict):
        obj = [{"name": k, "absorption": v} for k, v in obj.items()]
    out = []
    for row in obj:
        if "absorption" in row:
            coeffs = row["absorption"]
        else:
            coeffs = [row[c] for c in BAND_COLUMNS]
        out.append(MaterialEntry(str(row["name"]), coeffs))
    return out


def load_material_db(path, embeddings_path=None) -> MaterialDatabase:
    """Load materials from CSV (``name,a62,...,a8000``) or JSON, plus optional embeddings."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            entries = _entries_from_json(json.loads(text))
        else:
            reader = csv.DictReader(text.splitlines())
            missing = [c for c in ("name",) + BAND_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise MaterialError(f"{path}: missing column(s) {missing}")
            entries = [MaterialEntry(row["name"].strip(), [float(row[c]) for c in BAND_COLUMNS])
                       for row in reader]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MaterialError):
            raise
        raise MaterialError(f"{path}: {exc}") from None
    embeddings = {}
    if embeddings_path is not None:
        embeddings = json.loads(Path(embeddings_path).read_text(encoding="utf-8"))
    return MaterialDatabase(tuple(entries), embeddings)


# ---------------------------------------------------------------- matching

def normalize_name(name: str) -> str:
    return " ".join(re.split(r"[\s_\-]+", name.strip().lower())).strip()


def _tokens(name):
    return set(normalize_name(name).split())


def jaccard(a: str, b: str) -> float:
    ta, tb = _tokens(a), _tokens(b)
    if not ta and not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def _argmax_by_name(scores):
    """Highest score; equal scores resolved by the lexicographically smallest name."""
    best = max(s for _, s in scores)
    return min(name for name, s in scores if s == best), best


def match_label(label: str, db: MaterialDatabase, strategy: str = "exact",
                query_embedding=None) -> MaterialEntry:
    """Find the material entry closest to a semantic label.

    ``exact`` compares normalized names and falls through to token overlap;
    ``token-overlap`` maximizes the Jaccard index of lowercase token sets;
    ``embedding-cosine`` maximizes cosine similarity between embedding
    vectors (query vector from ``query_embedding`` or ``db.embeddings[label]``).

    Raises
    ------
    NoMatch
        Token overlap found no shared token with any entry.
    MaterialError
        Embedding strategy without the needed vectors.
    """
    if len(db) == 0:
        raise MaterialError("empty material database")
    if strategy not in STRATEGIES:
        raise MaterialError(f"unknown matcher strategy {strategy!r}")
    if strategy == "exact":
        key = normalize_name(label)
        hits = sorted(e.name for e in db.entries if normalize_name(e.name) == key)
        if hits:
            return db.get(hits[0])
        strategy = "token-overlap"
    if strategy == "token-overlap":
        name, score = _argmax_by_name([(e.name, jaccard(label, e.name)) for e in db.entries])
        if score <= 0.0:
            raise NoMatch(label)
        return db.get(name)
    q = query_embedding if query_embedding is not None else db.embeddings.get(label)
    if q is None:
        raise MaterialError(f"no embedding for query label {label!r}")
    missing = [e.name for e in db.entries if e.name not in db.embeddings]
    if missing:
        raise MaterialError(f"no embedding for material(s) {missing[:5]}")
    q = np.asarray(q, dtype=np.float64)
    qn = np.linalg.norm(q)
    scores = []
    for e in db.entries:
        v = db.embeddings[e.name]
        if v.shape != q.shape:
            raise MaterialError("query embedding dimension differs from database")
        scores.append((e.name, float(q @ v / max(qn * np.linalg.norm(v), 1e-300))))
    return db.get(_argmax_by_name(scores)[0])


def band_average(absorption, mode: str = "mid") -> float:
    """Scalar absorption: mean of 500/1000 Hz bands (``mid``) or of all 8 (``full``)."""
    a = np.asarray(absorption, dtype=np.float64)
    if a.shape != (8,):
        raise MaterialError("band_average needs 8 coefficients")
    if mode == "mid":
        return float((a[3] + a[4]) / 2.0)
    if mode == "full":
        return float(a.mean())
    raise MaterialError(f"unknown averaging mode {mode!r}")


def sample_scattering(prior: ScatteringPrior, seed) -> float:
    """One scene-level scattering coefficient, Normal(mean, std) clamped."""
    lo, hi = prior.clamp
    if prior.std == 0:
        return float(np.clip(prior.mean, lo, hi))
    draw = np.random.default_rng(seed).normal(prior.mean, prior.std)
    return float(np.clip(draw, lo, hi))


# ---------------------------------------------------------------- assignment

@dataclass(frozen=True)
class MaterialAnnotatedMesh(FaceLabeledMesh):
    """Mesh with per-vertex (ab, sc) features and per-face band absorption."""

    ab: np.ndarray = field(default=None)
    sc: np.ndarray = field(default=None)
    band_absorption: np.ndarray = field(default=None)
    unmatched_labels: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        ab = np.asarray(self.ab, dtype=np.float64)
        sc = np.asarray(self.sc, dtype=np.float64)
        ba = np.asarray(self.band_absorption, dtype=np.float64).reshape(-1, 8)
        object.__setattr__(self, "ab", ab)
        object.__setattr__(self, "sc", sc)
        object.__setattr__(self, "band_absorption", ba)
        if ab.shape != (self.n_vertices,) or sc.shape != (self.n_vertices,):
            raise MaterialError("ab / sc must have one value per vertex")
        if ba.shape[0] != self.n_faces:
            raise MaterialError("band_absorption must have one row per face")
        for name, arr in (("ab", ab), ("sc", sc), ("band_absorption", ba)):
            if np.any((arr < 0) | (arr > 1)) or not np.all(np.isfinite(arr)):
                raise MaterialError(f"{name} outside [0, 1]")

    @property
    def face_scattering(self) -> np.ndarray:
        return self.sc[self.faces].mean(axis=1)

    def with_absorption(self, band_absorption) -> "MaterialAnnotatedMesh":
        return MaterialAnnotatedMesh(
            self.vertices, self.faces, self.vertex_labels, face_labels=self.face_labels,
            ab=self.ab, sc=self.sc, band_absorption=band_absorption,
            unmatched_labels=self.unmatched_labels)

    def with_scattering(self, sc) -> "MaterialAnnotatedMesh":
        sc = np.broadcast_to(np.asarray(sc, dtype=np.float64), (self.n_vertices,)).copy()
        return MaterialAnnotatedMesh(
            self.vertices, self.faces, self.vertex_labels, face_labels=self.face_labels,
            ab=self.ab, sc=sc, band_absorption=self.band_absorption,
            unmatched_labels=self.unmatched_labels)


def resolve_labels(labels, db, strategy="exact", default=DEFAULT_MATERIAL):
    """Map each distinct label to an entry; unmatched ones go to ``default``."""
    table, unmatched = {}, []
    for label in sorted(set(labels)):
        try:
            table[label] = match_label(label, db, strategy)
        except (NoMatch, MaterialError) as exc:
            log.warning("label %r: %s; using default material %r", label,
                        type(exc).__name__, default.name)
            table[label] = default
            unmatched.append(label)
    return table, tuple(unmatched)


def assign_materials(mesh: AnnotatedMesh, db: MaterialDatabase, prior: ScatteringPrior = None,
                     mode: str = "mid", seed=0, strategy: str = "exact",
                     default: MaterialEntry = DEFAULT_MATERIAL) -> MaterialAnnotatedMesh:
    """Attach material features to every vertex and band absorption to every face."""
    prior = prior or ScatteringPrior()
    if not isinstance(mesh, FaceLabeledMesh):
        mesh = vertex_to_face_labels(mesh)
    table, unmatched = resolve_labels(
        set(mesh.vertex_labels.tolist()) | set(mesh.face_labels.tolist()), db, strategy, default)
    ab = np.array([band_average(table[x].absorption, mode) for x in mesh.vertex_labels])
    sc = np.full(mesh.n_vertices, sample_scattering(prior, seed))
    bands = np.array([table[x].absorption for x in mesh.face_labels], dtype=np.float64).reshape(-1, 8)
    return MaterialAnnotatedMesh(mesh.vertices, mesh.faces, mesh.vertex_labels,
                                 face_labels=mesh.face_labels, ab=ab, sc=sc,
                                 band_absorption=bands, unmatched_labels=unmatched)


def uniform_material_mesh(mesh: AnnotatedMesh, absorption, scattering=0.0) -> MaterialAnnotatedMesh:
    """Every face gets the same band absorption; handy for test rooms."""
    a = np.broadcast_to(np.asarray(absorption, dtype=np.float64), (8,))
    fl = vertex_to_face_labels(mesh)
    return MaterialAnnotatedMesh(
        fl.vertices, fl.faces, fl.vertex_labels, face_labels=fl.face_labels,
        ab=np.full(fl.n_vertices, band_average(a, "mid")),
        sc=np.full(fl.n_vertices, float(scattering)),
        band_absorption=np.tile(a, (fl.n_faces, 1)))


def save_material_mesh(mesh: MaterialAnnotatedMesh, ply_path, labels_json_path=None):
    """PLY with vertex ``label, ab, sc`` and face ``label, a62..a8000``."""
    ply_path = Path(ply_path)
    if labels_json_path is None:
        labels_json_path = ply_path.with_suffix(".labels.json")
    names, index = label_dictionary(np.concatenate([mesh.vertex_labels, mesh.face_labels]))
    vprops = {"label": np.array([index[x] for x in mesh.vertex_labels], dtype=np.int32),
              "ab": mesh.ab, "sc": mesh.sc}
    fprops = {"label": np.array([index[x] for x in mesh.face_labels], dtype=np.int32)}
    for k, col in enumerate(BAND_COLUMNS):
        fprops[col] = np.ascontiguousarray(mesh.band_absorption[:, k])
    write_ply(ply_path, mesh.vertices, mesh.faces, vprops, fprops)
    Path(labels_json_path).write_text(json.dumps(names, indent=1) + "\n")
    return ply_path


def load_material_mesh(ply_path, labels_json_path=None) -> MaterialAnnotatedMesh:
    ply_path = Path(ply_path)
    if labels_json_path is None:
        labels_json_path = ply_path.with_suffix(".labels.json")
    names = np.asarray(json.loads(Path(labels_json_path).read_text()))
    el = read_ply(ply_path)
    vx, fe = el["vertex"], el["face"]
    verts = np.column_stack([vx["x"], vx["y"], vx["z"]])
    faces = np.asarray([np.asarray(f) for f in fe["vertex_indices"]], dtype=np.int64).reshape(-1, 3)
    bands = np.column_stack([fe[c] for c in BAND_COLUMNS])
    return MaterialAnnotatedMesh(
        verts, faces, names[vx["label"].astype(int)], face_labels=names[fe["label"].astype(int)],
        ab=vx["ab"], sc=vx["sc"], band_absorption=bands)
