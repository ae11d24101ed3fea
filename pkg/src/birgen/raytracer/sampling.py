"""Grid sampling of source/listener positions and dataset generation."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from ..codec import write_wav
from .config import HeadModel, SimConfig, config_hash
from .geom import point_triangle_distance, points_inside, triangle_table
from .synthesis import simulate_pair
from .tracer import PreparedScene

log = logging.getLogger(__name__)

# absorbs rounding so a point exactly at the clearance distance survives
CLEARANCE_TOL = 1e-9


class SamplingError(ValueError):
    pass


def grid_positions(mesh, spacing: float = 1.0, clearance: float = 0.2) -> np.ndarray:
    """Grid points inside a closed mesh at least ``clearance`` from every surface.

    The grid is anchored at the bounding-box minimum and steps by ``spacing``
    along each axis; points on the box itself are never inside.
    """
    if not spacing > 0:
        raise SamplingError("spacing must be positive")
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    axes = [lo[k] + spacing * np.arange(1, int(np.floor((hi[k] - lo[k]) / spacing + 1e-9)) + 1)
            for k in range(3)]
    axes = [a[a < hi[k]] for k, a in enumerate(axes)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if len(pts):
        tri = triangle_table(mesh.vertices, mesh.faces)
        pts = pts[points_inside(tri, pts)]
        if len(pts):
            pts = pts[point_triangle_distance(pts, tri) >= clearance - CLEARANCE_TOL]
    if not len(pts):
        raise SamplingError("zero valid positions")
    return pts


def split_sources_listeners(positions, n_sources: int = 10, seed=0):
    """Draw ``min(n_sources, N // 2)`` sources without replacement; the rest listen."""
    pos = np.asarray(positions, dtype=np.float64)
    if not len(pos):
        raise SamplingError("no positions to split")
    k = min(int(n_sources), len(pos) // 2)
    pick = np.random.default_rng(seed).permutation(len(pos))
    src = np.sort(pick[:k])
    lst = np.sort(pick[k:])
    return pos[src], pos[lst]


def pair_seed(seed, i, j) -> int:
    """Per-pair seed from the dataset seed, independent of iteration order."""
    return int(np.random.SeedSequence([int(seed), i, j]).generate_state(1, np.uint64)[0] >> 1)


def gen_dataset(scene, out_dir, cfg: SimConfig = SimConfig(), head: HeadModel = HeadModel(),
                seed=0, spacing=1.0, clearance=0.2, n_sources=10, scene_id="scene",
                backend=None) -> dict:
    """Simulate every source/listener pair; write one WAV per pair plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    positions = grid_positions(scene, spacing, clearance)
    sources, listeners = split_sources_listeners(positions, n_sources, seed)
    prep = PreparedScene.from_mesh(scene)
    pairs = []
    for i, s in enumerate(sources):
        for j, li in enumerate(listeners):
            ps = pair_seed(seed, i, j)
            name = f"s{i:03d}_l{j:03d}.wav"
            write_wav(out / name, simulate_pair(prep, s, li, cfg, head, ps, backend))
            pairs.append({"src": [float(v) for v in s], "lst": [float(v) for v in li],
                          "wav": name, "seed": ps})
    extra = {"spacing": spacing, "clearance": clearance, "n_sources": n_sources, "seed": seed}
    manifest = {"scene": scene_id, "pairs": pairs,
                "config_hash": config_hash(cfg, head, extra)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    log.info("wrote %d pairs to %s", len(pairs), out)
    return manifest
