"""Command-line front end: ``gravgrasp <stage> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from functools import partial
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, load_config
from .dataset import DatasetError, read_dataset, read_volume, write_dataset
from .evaluation import DETECTORS, make_detector, parse_weights, read_metrics_csv, weight_sweep
from .geometry.mesh import MeshError, load_mesh
from .geometry.volume import CameraModel
from .io import atomic_write_json, atomic_write_text, dump_json, sha256_file, sha256_text
from .parallel import default_jobs, parallel_map
from .pipeline import PROGRESS_EVERY, label_scene, make_scene, refine_and_score
from .plotting import parse_plane, plot_cross_section, plot_metrics
from .sampling import GraspCandidate, generate_candidates
from .scene import LibraryError, load_library

log = logging.getLogger("gravgrasp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
CACHE_ENV = "GGRASP_CACHE_DIR"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _Manifest:
    """Run manifest: config hash, version, stage timings, input and output digests."""

    def __init__(self, command: str, config: PipelineConfig):
        self.data = {"command": command, "version": __version__, "config_hash": config.hash(),
                     "stages": {}, "inputs": {}, "outputs": {}}

    def stage(self, name: str, seconds: float) -> None:
        self.data["stages"][name] = round(seconds, 3)

    def add(self, kind: str, path) -> None:
        self.data[kind][str(path)] = sha256_file(path)

    def write(self, path) -> None:
        atomic_write_json(path, self.data)


def _config(args) -> PipelineConfig:
    return load_config(args.config)


def _progress(done: int, total: int) -> None:
    if done % PROGRESS_EVERY == 0:
        print(f"refined {done}/{total} grasps", file=sys.stderr, flush=True)


# ------------------------------------------------------------------- stages


def cmd_sample(args) -> int:
    cfg = _config(args)
    sampler = cfg.sampler
    overrides = {}
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.count is not None:
        overrides["n_surface_samples"] = args.count
    if overrides:
        sampler = dataclasses.replace(sampler, **overrides)
    if sampler.max_aperture > cfg.gripper.max_aperture:
        raise ConfigError("sampler aperture exceeds the gripper aperture")
    mesh = load_mesh(args.mesh, args.scale)
    t0 = time.perf_counter()
    cands = generate_candidates(mesh, sampler, args.jobs)
    out = {
        "mesh_digest": mesh.digest,
        "sampler": dataclasses.asdict(sampler),
        "config_hash": cfg.hash(),
        "candidates": [c.to_dict() for c in cands],
    }
    atomic_write_json(args.out, out)
    manifest = _Manifest("sample", cfg)
    manifest.stage("sample", time.perf_counter() - t0)
    manifest.add("inputs", args.mesh)
    manifest.add("outputs", args.out)
    manifest.write(f"{args.out}.manifest.json")
    log.info("wrote %d candidates to %s", len(cands), args.out)
    return EXIT_OK


def cmd_refine_score(args) -> int:
    cfg = _config(args)
    mesh = load_mesh(args.mesh, args.scale)
    try:
        data = json.loads(Path(args.candidates).read_text())
        cands = [GraspCandidate.from_dict(d) for d in data["candidates"]]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.candidates}: malformed candidate file ({exc})") from exc
    key = sha256_text(json.dumps([mesh.digest, cfg.hash(), sha256_file(args.candidates)]))
    cache_dir = os.environ.get(CACHE_ENV)
    cached = Path(cache_dir) / "refine" / f"{key}.json" if cache_dir else None
    t0 = time.perf_counter()
    if cached is not None and cached.is_file():
        log.info("using cached result %s", cached)
        text = cached.read_text()
    else:
        report = refine_and_score(mesh, cands, cfg.gripper, cfg.closure, cfg.limits, args.jobs, _progress,
                                  f_max=cfg.oracle.f_max, resolution=cfg.oracle.resolution)
        out = {
            "mesh_digest": mesh.digest,
            "config_hash": cfg.hash(),
            "attempted": report.attempted,
            "failures": dict(sorted(report.failures.items())),
            "grasps": [g.to_dict() for g in report.grasps],
        }
        if args.mass is not None:
            out["mass"] = args.mass
        text = dump_json(out)
        if cached is not None:
            atomic_write_text(cached, text)
    atomic_write_text(args.out, text)
    manifest = _Manifest("refine-score", cfg)
    manifest.stage("refine-score", time.perf_counter() - t0)
    manifest.add("inputs", args.mesh)
    manifest.add("inputs", args.candidates)
    manifest.add("outputs", args.out)
    manifest.write(f"{args.out}.manifest.json")
    log.info("wrote %d scored grasps to %s", len(json.loads(text)["grasps"]), args.out)
    return EXIT_OK


def _compose_one(index: int, library, cfg: PipelineConfig, n_objects, seed: int):
    s = cfg.scenes
    scene = make_scene(library, seed, index, n_objects, s.min_objects, s.max_objects,
                       workspace=s.workspace, max_retries=s.max_retries)
    return label_scene(scene, library, cfg.gripper, cfg.projection, cfg.grid, CameraModel.default())


def cmd_compose_annotate(args) -> int:
    cfg = _config(args)
    library = load_library(args.library)
    count = cfg.scenes.count if args.count is None else args.count
    seed = cfg.scenes.seed if args.seed is None else args.seed
    if args.objects is not None and not 1 <= args.objects <= 5:
        raise UsageError("--objects must be between 1 and 5")
    t0 = time.perf_counter()
    work = partial(_compose_one, library=library, cfg=cfg, n_objects=args.objects, seed=seed)
    results = parallel_map(work, range(count), args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest("compose-annotate", cfg)
    manifest.stage("compose-annotate", time.perf_counter() - t0)
    lib_digests = {name: m.mesh.digest for name, m in sorted(library.items())}
    for i, labels in enumerate(results):
        d = out / f"scene_{i:04d}"
        extra = {"config_hash": cfg.hash(), "base_seed": seed, "scene_index": i, "library": lib_digests,
                 "n_scene_grasps": len(labels.grasps)}
        write_dataset(d, labels.scene, labels.tsdf, labels.annotation, extra)
        for name in ("tsdf.bin", "labels.bin", "meta.json"):
            manifest.add("outputs", d / name)
    manifest.write(out / "run_manifest.json")
    log.info("wrote %d scenes to %s", count, out)
    return EXIT_OK


def _scene_dirs(root: Path) -> list[Path]:
    if not root.is_dir():
        raise DataError(f"scene directory not found: {root}")
    dirs = sorted(p for p in root.iterdir() if (p / "meta.json").is_file())
    if not dirs:
        raise DataError(f"no scenes under {root}")
    return dirs


def cmd_eval(args) -> int:
    cfg = _config(args)
    try:
        weights = parse_weights(args.weights)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    detector = make_detector(args.detector)
    scenes = []
    for d in _scene_dirs(Path(args.scenes)):
        scene, *_ = read_dataset(d)
        scenes.append((d.name, scene))
    needed = sorted({o.name for _, s in scenes for o in s.objects})
    library = load_library(args.library, names=set(needed),
                           require_grasps=args.detector == "oracle") if needed else {}
    missing = [n for n in needed if n not in library]
    if missing:
        raise DataError(f"library lacks object(s): {', '.join(missing)}")
    t0 = time.perf_counter()
    report = weight_sweep(scenes, library, detector.name, weights, params=cfg.gripper, closure_cfg=cfg.closure,
                          limits=cfg.limits, cfg=cfg.evaluation, grid=cfg.grid, projection=cfg.projection,
                          jobs=args.jobs)
    atomic_write_text(args.out, report.to_csv())
    manifest = _Manifest("eval", cfg)
    manifest.stage("eval", time.perf_counter() - t0)
    manifest.add("outputs", args.out)
    manifest.write(f"{args.out}.manifest.json")
    for r in report.rows:
        log.info("weight %.2f kg: SR %s CR %s", r.weight_kg, r.sr, r.cr)
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.input)
    if src.suffix.lower() == ".csv":
        rows = read_metrics_csv(src.read_text())
        if not rows:
            raise DataError(f"{src} has no rows")
        plot_metrics(rows, args.out)
        return EXIT_OK
    if args.plane is None:
        raise UsageError("--plane is required for label volumes")
    try:
        parse_plane(args.plane)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    tsdf = None
    if src.is_dir():
        _, tsdf, ann, _ = read_dataset(src)
        labels = ann.volume
    else:
        labels = read_volume(src)
    if "validness" not in labels.channels:
        raise DataError(f"{src} is not a label volume")
    try:
        plot_cross_section(labels, args.plane, args.out, tsdf)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gravgrasp", description="Power-grasp dataset generation and benchmark toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON pipeline config")
        sp.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes")

    sp = sub.add_parser("sample", help="antipodal seeds plus perturbations for one mesh")
    sp.add_argument("mesh")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int, help="number of surface samples")
    sp.add_argument("--scale", type=float, default=1.0, help="mesh unit scale to metres")
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("refine-score", help="close the hand on candidates and score settled grasps")
    sp.add_argument("candidates")
    sp.add_argument("--mesh", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--mass", type=float, help="object mass stored with the grasps [kg]")
    common(sp)
    sp.set_defaults(func=cmd_refine_score)

    sp = sub.add_parser("compose-annotate", help="compose scenes and write TSDF and label volumes")
    sp.add_argument("library", help="directory with <name>.obj and <name>.grasps.json")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--objects", type=int, help="objects per scene (default: random in config range)")
    common(sp)
    sp.set_defaults(func=cmd_compose_annotate)

    sp = sub.add_parser("eval", help="grasp-and-lift benchmark over object weights")
    sp.add_argument("scenes")
    sp.add_argument("--library", required=True)
    sp.add_argument("--detector", required=True, choices=sorted(DETECTORS))
    sp.add_argument("--weights", default="0.1:1.5:0.2", help="start:stop:step or comma list [kg]")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plot", help="SR/CR curves from a CSV or a label cross section")
    sp.add_argument("input", help="results CSV, scene directory or labels.bin")
    sp.add_argument("--plane", help="cross-section plane, e.g. z=0.08")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "jobs") and args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ConfigError, DatasetError, LibraryError, MeshError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
