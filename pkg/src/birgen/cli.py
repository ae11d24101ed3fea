"""Command-line entry point: ``birgen <subcommand> [flags]``.

Every subcommand also accepts ``--config file.json``; its keys name flags
(dashes or underscores) and explicit flags override them.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

log = logging.getLogger("birgen")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4, 5

EPILOG = """exit codes:
  0  success
  2  usage error (unknown flag, missing required flag, bad config key)
  3  input could not be parsed (mesh, labels, material DB, WAV, JSON, spec)
  4  numerical failure (non-finite loss, metric estimation, tracing)
  5  file system error (missing file, unwritable output)
"""


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required {flags}")


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _load_scene(path):
    from .materials import load_material_mesh
    return load_material_mesh(path)


def _scene_latent(args, graph, encoder=None):
    """Latent from ``--latent``, else the given encoder, else a seeded fresh one."""
    from .scene_graph import GraphEncoderParams, encode_scene, load_latent
    if getattr(args, "latent", None):
        return load_latent(args.latent)
    if encoder is None:
        if getattr(args, "encoder", None):
            encoder = GraphEncoderParams.load(args.encoder)
        else:
            _need(args, "seed")
            encoder = GraphEncoderParams.init(args.seed)
    return encode_scene(graph, encoder)


def _read_pairs(path):
    """``[{"src": xyz, "lst": xyz}, ...]`` or a dataset manifest with a ``pairs`` key."""
    d = json.loads(Path(path).read_text())
    pairs = d["pairs"] if isinstance(d, dict) else d
    out = []
    for k, p in enumerate(pairs):
        src, lst = np.asarray(p["src"], float), np.asarray(p["lst"], float)
        if src.shape != (3,) or lst.shape != (3,):
            raise ValueError(f"{path}: pair {k} needs 3-vectors")
        out.append((src, lst, p.get("wav", f"pair_{k:04d}.wav")))
    return out


def _sim_config(args):
    from .raytracer import SimConfig
    return SimConfig(n_rays=args.rays, max_depth=args.max_depth)


# ---------------------------------------------------------------- subcommands

def cmd_preprocess_mesh(args):
    from .geometry import close_mesh, load_annotated_mesh, save_annotated_mesh, simplify
    _need(args, "mesh", "labels", "out")
    mesh = load_annotated_mesh(args.mesh, args.labels)
    n0 = mesh.n_faces
    if not args.no_close:
        mesh = close_mesh(mesh)
    if args.ratio < 1.0:
        mesh = simplify(mesh, args.ratio)
    save_annotated_mesh(mesh, args.out)
    log.info("%d -> %d faces", n0, mesh.n_faces)
    print(json.dumps({"faces_in": n0, "faces_out": mesh.n_faces, "out": str(args.out)}))


def cmd_assign_materials(args):
    from .geometry import load_labeled_ply
    from .materials import ScatteringPrior, assign_materials, load_material_db, save_material_mesh
    _need(args, "mesh", "db", "out", "seed")
    db = load_material_db(args.db, args.embeddings)
    prior = ScatteringPrior(args.scattering_mean, args.scattering_std)
    m = assign_materials(load_labeled_ply(args.mesh), db, prior, args.band_mode, args.seed,
                         args.strategy)
    save_material_mesh(m, args.out)
    for label in m.unmatched_labels:
        log.warning("label %r fell back to the default material", label)
    print(json.dumps({"out": str(args.out), "unmatched": list(m.unmatched_labels)}))


def cmd_encode_scene(args):
    from .scene_graph import build_graph, save_latent
    _need(args, "scene", "out")
    z = _scene_latent(args, build_graph(_load_scene(args.scene)))
    save_latent(args.out, z)
    print(json.dumps([float(v) for v in z]))


def cmd_gen_dataset(args):
    from .raytracer import gen_dataset
    _need(args, "scene", "out", "seed")
    manifest = gen_dataset(_load_scene(args.scene), args.out, _sim_config(args), seed=args.seed,
                           spacing=args.spacing, clearance=args.clearance,
                           n_sources=args.n_sources, scene_id=Path(args.scene).stem)
    print(json.dumps({"pairs": len(manifest["pairs"]), "config_hash": manifest["config_hash"]}))


def cmd_train(args):
    from .cgan import TrainConfig, TrainRecord, save_run, train
    from .codec import preprocess_bir, read_bir
    from .scene_graph import build_graph
    _need(args, "data", "scene", "out", "seed")
    preset = TrainConfig.desk if args.preset == "desk" else TrainConfig
    overrides = {"seed": args.seed}
    for k in ("epochs", "max_steps", "batch", "lr"):
        if getattr(args, k) is not None:
            overrides[k] = getattr(args, k)
    if args.latent:
        overrides["joint_encoder"] = False
    cfg = preset(**overrides)
    graph = build_graph(_load_scene(args.scene))
    latent = _scene_latent(args, graph) if args.latent else None
    records = []
    for src, lst, wav in _read_pairs(Path(args.data) / "manifest.json"):
        ref = preprocess_bir(read_bir(Path(args.data) / wav), cfg.ir_len, cfg.sd_len)
        records.append(TrainRecord(ref, graph.to_scene_frame(src), graph.to_scene_frame(lst),
                                   latent=latent, graph=None if args.latent else graph))
    result = train(records, cfg)
    save_run(args.out, result, cfg)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"steps": len(result.history), "out": str(args.out),
                      **{k: last[k] for k in ("L_MSE", "L_ED", "L_BIR") if k in last}}))


def _generator_provider(args, graph):
    """``(src, lst) -> BIR`` from a checkpoint; positions are world coordinates."""
    from .cgan import NetworkError, generate, load_checkpoint, make_condition
    from .codec import CodecError, postprocess_bir
    G, _, _, E = load_checkpoint(args.checkpoint)
    z = _scene_latent(args, graph, encoder=None if args.latent else E)

    def provide(src, lst):
        cond = make_condition(z, graph.to_scene_frame(src), graph.to_scene_frame(lst))
        try:
            return postprocess_bir(generate(cond, G))
        except CodecError as exc:
            raise NetworkError(f"generator output for source {np.asarray(src).tolist()}, "
                                   f"listener {np.asarray(lst).tolist()}: {exc}") from exc
    return provide


def cmd_infer(args):
    from .codec import write_wav
    from .scene_graph import build_graph
    _need(args, "checkpoint", "scene", "pairs", "out")
    provide = _generator_provider(args, build_graph(_load_scene(args.scene)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _read_pairs(args.pairs)
    for src, lst, wav in pairs:
        write_wav(out / wav, provide(src, lst))
    print(json.dumps({"written": len(pairs), "out": str(out)}))


def _align(g, r):
    """Common sample rate (the lower one) and common length."""
    from .codec import BIR, resample
    fs = min(g.sample_rate, r.sample_rate)
    g2, r2 = (BIR(fs, resample(b.left, b.sample_rate, fs), resample(b.right, b.sample_rate, fs))
              for b in (g, r))
    n = min(len(g2), len(r2))
    return (BIR(fs, g2.left[:n], g2.right[:n]), BIR(fs, r2.left[:n], r2.right[:n]))


def cmd_metrics(args):
    from .codec import metric_report, read_bir
    _need(args, "gen", "ref")
    gdir, rdir = Path(args.gen), Path(args.ref)
    for d in (gdir, rdir):
        if not d.is_dir():
            raise FileNotFoundError(f"{d}: not a directory")
    names = sorted(p.name for p in gdir.glob("*.wav"))
    ref_names = sorted(p.name for p in rdir.glob("*.wav"))
    if names != ref_names or not names:
        raise ValueError(f"WAV sets differ or are empty: {len(names)} vs {len(ref_names)} files")
    pairs = [_align(read_bir(gdir / n), read_bir(rdir / n)) for n in names]
    rep = metric_report([g for g, _ in pairs], [r for _, r in pairs], args.ed_mode)
    if args.out:
        Path(args.out).write_text(rep.to_json(indent=1) + "\n")
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    if args.curves:
        rep.write_curves_csv(args.curves)
    print(rep.to_text())


def cmd_render(args):
    from .codec import write_wav
    from .renderer import load_walkthrough, render_walkthrough
    from .scene_graph import build_graph
    _need(args, "walkthrough", "out")
    spec = load_walkthrough(args.walkthrough)
    scene = _load_scene(spec.scene)
    if args.method == "cgan":
        _need(args, "checkpoint")
        provide = _generator_provider(args, build_graph(scene))
    else:
        from .raytracer import HeadModel, PreparedScene, simulate_pair
        _need(args, "seed")
        prep, cfg = PreparedScene.from_mesh(scene), _sim_config(args)

        def provide(src, lst):
            return simulate_pair(prep, src, lst, cfg, HeadModel(), args.seed)
    result = render_walkthrough(spec, provide, bounds=scene.bounds())
    write_wav(args.out, result.audio, result.sample_rate)
    print(json.dumps({"out": str(args.out), "seconds": result.audio.shape[1] / result.sample_rate,
                      "normalized": result.normalized, "flags": result.flags}))


def bench(scene, n, batch=50, seed=0, checkpoint=None):
    """Encode ``scene`` once, then time ``n`` BIR generations.

    Returns ``{encode_s, n, mean_ms_per_bir, birs_per_sec}``. Generation
    covers the forward pass and the SD decode into BIR arrays.
    """
    from .cgan import GeneratorParams, generate_batch, load_checkpoint
    from .scene_graph import GraphEncoderParams, build_graph, encode_scene
    if n < 1 or batch < 1:
        raise UsageError("bench needs --n and --batch >= 1")
    if checkpoint:
        G, _, _, E = load_checkpoint(checkpoint)
    else:
        G, E = GeneratorParams.init(seed), None
    E = E or GraphEncoderParams.init(seed)

    t0 = time.perf_counter()
    graph = build_graph(scene)
    z = encode_scene(graph, E)
    encode_s = time.perf_counter() - t0

    lo, hi = scene.bounds()
    rng = np.random.default_rng(seed)
    pos = rng.uniform(lo, hi, size=(n, 2, 3)) - graph.origin
    conds = np.concatenate([np.broadcast_to(z, (n, len(z))), pos.reshape(n, 6)], axis=1)
    ir = G.config.ir_len
    t0 = time.perf_counter()
    for k in range(0, n, batch):
        out = generate_batch(conds[k:k + batch], G)
        sd = out[:, :, ir:].mean(axis=(1, 2))
        birs = out[:, :, :ir] * sd[:, None, None]
    gen_s = time.perf_counter() - t0
    assert np.all(np.isfinite(birs))
    return {"encode_s": encode_s, "n": n, "mean_ms_per_bir": 1e3 * gen_s / n,
            "birs_per_sec": n / gen_s}


def cmd_bench(args):
    _need(args, "scene")
    rep = bench(_load_scene(args.scene), args.n, args.batch, args.seed or 0, args.checkpoint)
    if args.out:
        _write_json(args.out, rep)
    print(json.dumps(rep))


# ---------------------------------------------------------------- parser

def _add_sim(p):
    p.add_argument("--rays", type=int, default=20000, help="rays per pair")
    p.add_argument("--max-depth", type=int, default=2000, help="reflection order cap")


def _add_latent(p):
    p.add_argument("--latent", help="scene latent JSON (skips encoding)")
    p.add_argument("--encoder", help="encoder tensor archive")


COMMANDS = {}


def build_parser():
    parser = argparse.ArgumentParser(prog="birgen", epilog=EPILOG,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version="%(prog)s 0.1.0")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of flag values; explicit flags win")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="BLAS/OpenMP threads (1 = bit-exact reference)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--seed", type=int, help="required by stochastic subcommands")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, fn, help):
        p = sub.add_parser(name, parents=[common], help=help, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        COMMANDS[name] = fn
        return p

    p = add("preprocess-mesh", cmd_preprocess_mesh, "load, close and simplify a labeled mesh")
    p.add_argument("--mesh", help="OBJ or PLY")
    p.add_argument("--labels", help="JSON array or vertex_index,label CSV")
    p.add_argument("--out", help="output PLY (label dictionary written next to it)")
    p.add_argument("--ratio", type=float, default=0.025, help="target face fraction")
    p.add_argument("--no-close", action="store_true", help="skip hole closing")

    p = add("assign-materials", cmd_assign_materials, "attach acoustic materials to a mesh")
    p.add_argument("--mesh", help="labeled PLY from preprocess-mesh")
    p.add_argument("--db", help="material CSV or JSON")
    p.add_argument("--embeddings", help="JSON map name -> vector")
    p.add_argument("--strategy", default="exact",
                   choices=("exact", "token-overlap", "embedding-cosine"))
    p.add_argument("--band-mode", default="mid", choices=("mid", "full"))
    p.add_argument("--scattering-mean", type=float, default=0.3)
    p.add_argument("--scattering-std", type=float, default=0.15)
    p.add_argument("--out", help="material PLY")

    p = add("encode-scene", cmd_encode_scene, "write the 8-d scene latent")
    p.add_argument("--scene", help="material PLY")
    _add_latent(p)
    p.add_argument("--out", help="latent JSON")

    p = add("gen-dataset", cmd_gen_dataset, "ray-trace every grid source/listener pair")
    p.add_argument("--scene", help="material PLY")
    p.add_argument("--out", help="output directory")
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--clearance", type=float, default=0.2)
    p.add_argument("--n-sources", type=int, default=10)
    _add_sim(p)

    p = add("train", cmd_train, "train the generator on a dataset directory")
    p.add_argument("--data", help="gen-dataset output directory")
    p.add_argument("--scene", help="material PLY of the dataset scene")
    _add_latent(p)
    p.add_argument("--out", help="run directory")
    p.add_argument("--preset", default="desk", choices=("desk", "reference"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)

    p = add("infer", cmd_infer, "generate BIR WAVs for a list of pairs")
    p.add_argument("--checkpoint", help="checkpoint stem from train")
    p.add_argument("--scene", help="material PLY")
    _add_latent(p)
    p.add_argument("--pairs", help="JSON pair list or dataset manifest")
    p.add_argument("--out", help="output directory")

    p = add("metrics", cmd_metrics, "compare two directories of BIR WAVs")
    p.add_argument("--gen", help="generated BIR directory")
    p.add_argument("--ref", help="reference BIR directory")
    p.add_argument("--ed-mode", default="log", choices=("log", "linear"))
    p.add_argument("--out", help="JSON report")
    p.add_argument("--csv", help="per-pair CSV")
    p.add_argument("--curves", help="ED difference curves CSV")

    p = add("render", cmd_render, "auralize a walkthrough")
    p.add_argument("--walkthrough", help="walkthrough JSON")
    p.add_argument("--method", default="raytrace", choices=("raytrace", "cgan"))
    p.add_argument("--checkpoint", help="checkpoint for --method cgan")
    _add_latent(p)
    _add_sim(p)
    p.add_argument("--out", help="output WAV")

    p = add("bench", cmd_bench, "time encode-once then N generations")
    p.add_argument("--scene", help="material PLY")
    p.add_argument("--checkpoint", help="generator checkpoint (default: freshly initialized full-size network)")
    p.add_argument("--n", type=int, default=2500)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--out", help="JSON report")
    return parser, sub


def _apply_config(parser, sub, argv):
    """Re-parse with config-file values installed as subcommand defaults."""
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("no command given")
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValueError(f"{args.config}: expected a JSON object")
    sp = sub.choices[args.command]
    known = {a.dest for a in sp._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known - {"config"})
    if unknown:
        raise UsageError(f"unknown config key(s) for {args.command}: {unknown}")
    sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def _exit_code(exc) -> int:
    from .cgan import LossError, NetworkError, TrainingError
    from .codec import MetricError
    from .raytracer import TraceError
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (MetricError, TrainingError, LossError, NetworkError, TraceError,
                        FloatingPointError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (ValueError, KeyError, TypeError, IndexError)):
        return EXIT_PARSE
    raise exc


def main(argv=None) -> int:
    parser, sub = build_parser()
    try:
        args = _apply_config(parser, sub, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"birgen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"birgen: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            COMMANDS[args.command](args)
    except Exception as exc:
        code = _exit_code(exc)
        print(f"birgen: error: {exc}", file=sys.stderr)
        if code == EXIT_USAGE:
            parser.print_usage(sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
