"""Compiled kernels vs their pure-Python twins.

    python benchmarks/bench_kernels.py [--rays 2000] [--faces 8000] [--repeat 3] [--json out.json]

Each case runs both backends on identical inputs, checks that the outputs
agree (histograms to 1e-12 relative, meshes exactly) and reports the
best-of-``repeat`` wall time.
"""

import argparse
import json
import time

import numpy as np

from birgen import _kernels
from birgen.geometry import box_mesh, simplify, uv_sphere
from birgen.materials import uniform_material_mesh
from birgen.raytracer import PreparedScene, SimConfig, trace


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_trace(n_rays, repeat):
    scene = PreparedScene.from_mesh(uniform_material_mesh(box_mesh((5, 4, 3), subdivisions=2),
                                                          0.2, scattering=0.3))
    cfg = SimConfig(n_rays=n_rays)
    src, lst = [1.0, 1.0, 1.5], [3.5, 2.5, 1.4]

    def run(backend):
        return lambda: trace(scene, src, lst, cfg, seed=3, backend=backend).total()

    tc, hc = best_of(run("compiled"), repeat)
    tp, hp = best_of(run("python"), repeat)
    return {"case": f"trace {n_rays} rays", "compiled_s": tc, "python_s": tp,
            "speedup": tp / tc, "agree": bool(np.allclose(hc, hp, rtol=1e-12, atol=0))}


def bench_qem(n_faces, repeat):
    n_lat = max(4, int(np.sqrt(n_faces / 4)))
    mesh = uv_sphere(n_lat, 2 * n_lat)

    def run(backend):
        return lambda: simplify(mesh, 0.05, backend=backend)

    tc, mc = best_of(run("compiled"), repeat)
    tp, mp = best_of(run("python"), repeat)
    same = np.array_equal(mc.faces, mp.faces) and np.allclose(mc.vertices, mp.vertices)
    return {"case": f"simplify {mesh.n_faces} faces", "compiled_s": tc, "python_s": tp,
            "speedup": tp / tc, "agree": bool(same)}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rays", type=int, default=2000)
    p.add_argument("--faces", type=int, default=8000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--json", help="write results here")
    args = p.parse_args(argv)
    missing = [k for k in ("trace", "qem") if not _kernels.available(k)]
    if missing:
        raise SystemExit(f"compiled kernels not built: {missing}; run "
                         "`python setup.py build_ext --inplace`")
    rows = [bench_trace(args.rays, args.repeat), bench_qem(args.faces, args.repeat)]
    print(f"{'case':<28}{'compiled s':>12}{'python s':>12}{'speedup':>10}  agree")
    for r in rows:
        print(f"{r['case']:<28}{r['compiled_s']:>12.4f}{r['python_s']:>12.4f}"
              f"{r['speedup']:>9.1f}x  {r['agree']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return rows


if __name__ == "__main__":
    main()
