"""Energy histograms from stochastic ray tracing, binauralized with a spherical head."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..materials import MaterialAnnotatedMesh
from . import kernel_py
from .config import HeadModel, SimConfig
from .geom import build_bvh, points_inside, triangle_table

log = logging.getLogger(__name__)


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Arrival:
    """One detector crossing: time (s), unit propagation direction at the listener, band energies."""

    time: float
    direction: np.ndarray
    energy: np.ndarray


@dataclass(frozen=True)
class DirectPath:
    """Exact line-of-sight arrival per ear (times in seconds, energies per band)."""

    time: np.ndarray      # (2,) left, right
    energy: np.ndarray    # (2, 8)


@dataclass(frozen=True)
class EnergyHistogram:
    """Per-ear band energies in ``bin_width`` bins.

    ``reflected`` holds the ray-traced part, shape (2, bins, 8); the direct
    path is kept exactly in ``direct`` and folded into its bin by ``left`` /
    ``right``.
    """

    bin_width: float
    reflected: np.ndarray
    direct: DirectPath | None = None

    def __post_init__(self):
        r = np.asarray(self.reflected, dtype=np.float64)
        if r.ndim != 3 or r.shape[0] != 2 or r.shape[2] != 8:
            raise TraceError("reflected histogram must have shape (2, bins, 8)")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise TraceError("histogram energies must be finite and non-negative")
        object.__setattr__(self, "reflected", r)

    @property
    def n_bins(self) -> int:
        return self.reflected.shape[1]

    def combined(self) -> np.ndarray:
        h = self.reflected.copy()
        if self.direct is not None:
            for ear in range(2):
                k = min(int(self.direct.time[ear] / self.bin_width), self.n_bins - 1)
                h[ear, k] += self.direct.energy[ear]
        return h

    @property
    def left(self) -> np.ndarray:
        return self.combined()[0]

    @property
    def right(self) -> np.ndarray:
        return self.combined()[1]

    def total(self) -> np.ndarray:
        """Band totals per ear, shape (2, 8)."""
        return self.combined().sum(axis=1)


@dataclass(frozen=True)
class PreparedScene:
    """Triangle table, BVH and per-face material arrays, reusable across pairs."""

    tri: np.ndarray
    bvh: dict
    alpha: np.ndarray
    scatter: np.ndarray

    @classmethod
    def from_mesh(cls, scene: MaterialAnnotatedMesh) -> "PreparedScene":
        tri = triangle_table(scene.vertices, scene.faces)
        return cls(tri, build_bvh(tri), np.ascontiguousarray(scene.band_absorption),
                   np.ascontiguousarray(scene.face_scattering))


def lateral_angle(direction_to_source, head: HeadModel) -> np.ndarray:
    """Angle off the median plane, positive toward the right ear."""
    v = np.atleast_2d(direction_to_source)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return np.arcsin(np.clip(v @ head.right_axis, -1.0, 1.0))


def woodworth_itd(theta, head: HeadModel, c: float) -> np.ndarray:
    """Right-ear lead in seconds; ``(a / c)(theta + sin theta)`` with ``a`` the head radius."""
    a = head.ear_separation / 2.0
    return (a / c) * (theta + np.sin(theta))


def binauralize(times, to_source, energy, head: HeadModel, c: float):
    """Per-ear arrival times (2, n) and shadowed energies (2, n, 8)."""
    theta = lateral_angle(to_source, head)
    itd = woodworth_itd(theta, head, c)
    t = np.stack([times + itd / 2.0, times - itd / 2.0])
    db = head.ild_max * np.abs(np.sin(theta))[:, None] * np.asarray(head.band_scale)[None, :]
    shadow = 10.0 ** (-db / 10.0)
    e = np.stack([energy, energy])
    e[0] = np.where((theta > 0)[:, None], energy * shadow, energy)  # left ear shadowed
    e[1] = np.where((theta < 0)[:, None], energy * shadow, energy)
    return np.maximum(t, 0.0), e


def _trace_kernel(backend):
    mod = _kernels.pick("trace", backend)
    return kernel_py.trace_rays if mod is None else mod.trace_rays


def trace_arrivals(scene, source, listener, cfg: SimConfig, seed, backend=None):
    """Reflected detector crossings as arrays ``(time, direction, energy)``.

    ``energy`` is intensity per band (ray energy over the detector cross-section).
    """
    prep = scene if isinstance(scene, PreparedScene) else PreparedScene.from_mesh(scene)
    src = np.asarray(source, dtype=np.float64)
    lst = np.asarray(listener, dtype=np.float64)
    length, direc, energy, _ = _trace_kernel(backend)(
        prep.tri, prep.alpha, prep.scatter, prep.bvh, src, lst, float(cfg.detector_radius),
        int(cfg.n_rays), int(cfg.max_depth), float(cfg.energy_threshold), int(seed))
    energy = energy / (np.pi * cfg.detector_radius ** 2)
    if cfg.air_absorption is not None:
        energy = energy * np.exp(-np.outer(length, cfg.air_absorption))
    return length / cfg.speed_of_sound, direc, energy


def arrivals(scene, source, listener, cfg: SimConfig, seed, backend=None) -> list[Arrival]:
    t, d, e = trace_arrivals(scene, source, listener, cfg, seed, backend)
    return [Arrival(float(ti), di, ei) for ti, di, ei in zip(t, d, e)]


def direct_path(prep: PreparedScene, source, listener, cfg: SimConfig, head: HeadModel):
    """Analytic line-of-sight arrival, or ``None`` when a surface blocks it."""
    src = np.asarray(source, dtype=np.float64)
    lst = np.asarray(listener, dtype=np.float64)
    d = float(np.linalg.norm(src - lst))
    if kernel_py.occluded(prep.tri, lst, src):
        return None
    e = np.full((1, 8), 1.0 / (4.0 * np.pi * d * d))
    if cfg.air_absorption is not None:
        e = e * np.exp(-d * np.asarray(cfg.air_absorption))[None]
    t, be = binauralize(np.array([d / cfg.speed_of_sound]), (src - lst)[None], e, head,
                        cfg.speed_of_sound)
    return DirectPath(t[:, 0], be[:, 0])


def _check_positions(prep, source, listener):
    src = np.asarray(source, dtype=np.float64)
    lst = np.asarray(listener, dtype=np.float64)
    if src.shape != (3,) or lst.shape != (3,):
        raise TraceError("source and listener must be 3-vectors")
    if np.allclose(src, lst):
        raise TraceError("source and listener coincide")
    inside = points_inside(prep.tri, np.stack([src, lst]))
    if not inside.all():
        which = "source" if not inside[0] else "listener"
        raise TraceError(f"{which} outside mesh")


def trace(scene, source, listener, cfg: SimConfig = SimConfig(), head: HeadModel = HeadModel(),
          seed=0, backend=None) -> EnergyHistogram:
    """Binaural energy histogram for one source/listener pair.

    Parameters
    ----------
    scene : MaterialAnnotatedMesh or PreparedScene
        Closed mesh with per-face band absorption and per-vertex scattering.
    source, listener : array_like
        Positions inside the mesh.
    seed : int
        Fixes every ray direction and diffuse branch.
    backend : {None, "compiled", "python"}
        Ray-loop implementation; ``None`` picks the compiled one when built.
    """
    prep = scene if isinstance(scene, PreparedScene) else PreparedScene.from_mesh(scene)
    _check_positions(prep, source, listener)
    times, direc, energy = trace_arrivals(prep, source, listener, cfg, seed, backend)
    direct = direct_path(prep, source, listener, cfg, head)

    t_ear, e_ear = binauralize(times, -direc, energy, head, cfg.speed_of_sound)
    latest = t_ear.max(initial=0.0)
    if direct is not None:
        latest = max(latest, float(direct.time.max()))
    n_bins = int(latest / cfg.histogram_bin) + 1
    hist = np.zeros((2, n_bins, 8))
    for ear in range(2):
        k = np.minimum((t_ear[ear] / cfg.histogram_bin).astype(np.int64), n_bins - 1)
        np.add.at(hist[ear], k, e_ear[ear])
    return EnergyHistogram(cfg.histogram_bin, hist, direct)
