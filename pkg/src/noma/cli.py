"""Command-line pipeline: gen-tasks, gen-scene, train-prior, map, eval, inspect.

Configuration is a plain key=value file (``--config``) overridden by
``--set key=value`` pairs. Exit codes: 0 success, 1 usage or configuration
error, 2 data or integrity error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import archsearch as asr
from . import meshmetrics as mm
from . import priorgrid as pg
from .bundle import BundleError, PriorBundle, inspect_prior, load_prior, parse_kv, save_prior
from .objmap import MapperConfig, run_mapper
from .shapes import CATEGORIES
from .taskgen import (build_splits, make_scene, read_scene, read_task, task_dirname,
                      write_scene, write_task)
from .training import TrainConfig

log = logging.getLogger("noma")

DEFAULT_TAUS = (0.004, 0.01)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


class Config:
    """key=value settings with typed accessors that name the offending key."""

    def __init__(self, values: dict | None = None, source: str = "config"):
        self.values = dict(values or {})
        self.source = source
        self.used: set[str] = set()

    @classmethod
    def load(cls, path, overrides=()) -> "Config":
        values = {}
        src = "command line"
        if path is not None:
            try:
                values = parse_kv(Path(path).read_text())
            except FileNotFoundError:
                raise UsageError(f"config file {path} not found") from None
            except ValueError as exc:
                raise UsageError(f"config file {path}: {exc}") from None
            src = str(path)
        for item in overrides:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            values[k.strip()] = v.strip()
        return cls(values, src)

    def _raw(self, key, default, required):
        self.used.add(key)
        if key in self.values:
            return self.values[key]
        if required:
            raise UsageError(f"missing required config key '{key}'")
        return default

    def get(self, key, cast, default=None, required=False):
        raw = self._raw(key, default, required)
        if raw is None or not isinstance(raw, str):
            return raw
        try:
            if cast is bool:
                if raw.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(raw)
                return raw.lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise UsageError(f"config key '{key}' has invalid value {raw!r}") from None

    def get_list(self, key, cast=str, default=None, required=False):
        raw = self._raw(key, default, required)
        if raw is None or not isinstance(raw, str):
            return raw
        try:
            return [cast(x.strip()) for x in raw.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"config key '{key}' has invalid value {raw!r}") from None

    def prefixed(self, prefix: str) -> dict:
        out = {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}
        self.used.update(prefix + k for k in out)
        return out

    def check_unused(self):
        extra = sorted(set(self.values) - self.used)
        if extra:
            raise UsageError(f"unknown config key '{extra[0]}'")


def _categories(cfg: Config, key: str = "categories") -> list[str]:
    cats = cfg.get_list(key, required=True)
    if not cats:
        raise UsageError(f"config key '{key}' lists no categories")
    for c in cats:
        if c not in CATEGORIES:
            raise UsageError(f"config key '{key}': unknown category {c!r}")
    return cats


# --------------------------------------------------------------------------
# commands


def cmd_gen_tasks(args) -> int:
    cfg = Config.load(args.config, args.set)
    cats = _categories(cfg)
    n_train = cfg.get("n_train", int, 4)
    n_test = cfg.get("n_test", int, 2)
    seed = args.seed if args.seed is not None else cfg.get("seed", int, 0)
    fmin = cfg.get("frames_min", int, 8)
    fmax = cfg.get("frames_max", int, 16)
    res = cfg.get("resolution", int, 96)
    gt_res = cfg.get("gt_res", int, 96)
    cfg.check_unused()
    if n_train < 1 or n_test < 1:
        raise UsageError("config keys 'n_train' and 'n_test' must be >= 1")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None
    count = 0
    for cat in cats:
        train, test = build_splits(cat, n_train, n_test, seed, frame_count_range=(fmin, fmax),
                                   resolution=res, gt_res=gt_res)
        for split, tasks in (("train", train), ("test", test)):
            for t in tasks:
                write_task(t, out / cat / split / task_dirname(t))
                count += 1
    print(f"wrote {count} tasks to {out}")
    return 0


def cmd_gen_scene(args) -> int:
    cfg = Config.load(args.config, args.set)
    cats = _categories(cfg)
    seed = args.seed if args.seed is not None else cfg.get("seed", int, 0)
    n_frames = cfg.get("frames", int, 24)
    res = cfg.get("resolution", int, 96)
    spacing = cfg.get("spacing", float, 0.45)
    cfg.check_unused()
    scene = make_scene(cats, seed, n_frames, res, spacing)
    write_scene(scene, args.out)
    print(f"wrote scene with {len(cats)} objects and {n_frames} frames to {args.out}")
    return 0


def _load_split(root: Path, category: str, split: str, limit: int | None):
    d = root / category / split
    dirs = sorted(p for p in d.iterdir() if (p / "manifest.txt").exists()) if d.is_dir() else []
    if not dirs:
        raise DataError(f"dataset {root} has no {split} tasks for category '{category}'")
    if limit is not None:
        dirs = dirs[:limit]
    return [read_task(p) for p in dirs]


def _domains_from_config(cfg: Config) -> tuple:
    over = cfg.prefixed("domain.")
    doms = []
    names = {g.name for g in asr.DEFAULT_DOMAINS}
    for k in over:
        if k not in names:
            raise UsageError(f"config key 'domain.{k}' names no gene")
    for g in asr.DEFAULT_DOMAINS:
        if g.name not in over:
            doms.append(g)
            continue
        raw = over[g.name]
        try:
            if g.kind == "cat":
                doms.append(asr.Gene(g.name, "cat", choices=tuple(x.strip() for x in raw.split(","))))
            else:
                lo, hi = (float(x) for x in raw.split(":"))
                doms.append(asr.Gene(g.name, g.kind, lo, hi))
        except ValueError:
            raise UsageError(f"config key 'domain.{g.name}' has invalid value {raw!r}") from None
    return tuple(doms)


def _default_genome(cfg: Config) -> asr.Genome:
    over = cfg.prefixed("default.")
    names = set(asr.GENE_NAMES)
    for k in over:
        if k not in names:
            raise UsageError(f"config key 'default.{k}' names no gene")
    try:
        return asr.Genome.from_dict({**asr.Genome().to_dict(), **over})
    except ValueError:
        raise UsageError("config block 'default.*' has an invalid value") from None


def _train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(n_rays=cfg.get("rays", int, 128), n_samples=cfg.get("samples", int, 32),
                       n_coarse=cfg.get("coarse_samples", int, 32))


def cmd_train_prior(args) -> int:
    cfg = Config.load(args.config, args.set)
    category = args.category
    if category not in CATEGORIES:
        raise UsageError(f"unknown category {category!r}")
    P = cfg.get("P", int, 8)
    M = cfg.get("M", int, 5)
    seed = args.seed if args.seed is not None else cfg.get("seed", int, 0)
    n_train = cfg.get("n_train", int, None)
    n_test = cfg.get("n_test", int, None)
    grid_res = cfg.get("grid_res", int, pg.DEFAULT_RESOLUTION)
    iso = cfg.get("iso", float, None)
    try:
        scfg = asr.SearchConfig(adapt_iters=cfg.get("adapt_iters", int, 100),
                                time_mode=cfg.get("time_mode", str, "cost"),
                                grid_res=grid_res, cd_points=cfg.get("cd_points", int, 4000),
                                domains=_domains_from_config(cfg), default=_default_genome(cfg),
                                train=_train_config(cfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.check_unused()
    root = Path(args.dataset)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} not found")
    train = _load_split(root, category, "train", n_train)
    test = _load_split(root, category, "test", n_test)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".search.log")
    if log_path.exists():
        log_path.unlink()
    t0 = time.perf_counter()
    res = asr.run_search(train, test, P, M, seed, scfg, log_path=log_path)
    g = res.chosen
    if res.theta is None:
        raise DataError("training of the chosen genome diverged")
    grid, mesh = pg.bake_prior(res.theta, g.arch(), grid_res, iso)
    prov = {"search_seed": seed, "generations": M, "population": P,
            **{f"genes.{k}": v for k, v in g.to_dict().items()}}
    bundle = PriorBundle(category, g.arch(), res.theta, grid, mesh, prov)
    save_prior(bundle, out)
    print(f"category={category} params={g.arch().param_count} front={len(res.front)} "
          f"grid_max={float(grid.values.max()):.4g} mesh_triangles={len(mesh.triangles)} "
          f"seconds={time.perf_counter() - t0:.1f}")
    print(f"wrote {out} and search log {log_path}")
    return 0


def _load_priors(d) -> dict:
    priors = {}
    if d is None:
        return priors
    d = Path(d)
    if not d.is_dir():
        raise DataError(f"priors directory {d} not found")
    for f in sorted(d.glob("*.prior")):
        b = load_prior(f)
        priors[b.category] = b
    return priors


def _match_gt(objects, gt: dict) -> dict:
    """Greedy same-category nearest-centre matching of tracks to ground-truth objects."""
    pairs = []
    for i, ob in enumerate(objects):
        if ob.track.position is None:
            continue
        for name, (cat, pose, _, _) in gt.items():
            if cat == ob.track.category:
                pairs.append((float(np.linalg.norm(ob.track.position[:2] - pose[:2, 3])), i, name))
    out, used = {}, set()
    for _, i, name in sorted(pairs):
        if i not in out and name not in used:
            out[i] = name
            used.add(name)
    return out


def cmd_map(args) -> int:
    cfg = Config.load(args.config, args.set)
    seed = args.seed if args.seed is not None else cfg.get("seed", int, 0)
    mcfg = MapperConfig(iters_per_object=cfg.get("iters_per_object", int, 200),
                        yaw_samples=cfg.get("yaw_samples", int, 72),
                        iou_threshold=cfg.get("iou_threshold", float, 0.5),
                        piou_threshold=cfg.get("piou_threshold", float, 0.3),
                        alpha_w=cfg.get("alpha_w", float, 0.05),
                        alpha_t=cfg.get("alpha_t", float, 0.05),
                        voxel=cfg.get("voxel", float, 0.02), radius=cfg.get("radius", float, 0.05),
                        min_count=cfg.get("min_count", int, 20),
                        min_frames=cfg.get("min_frames", int, 6),
                        min_span_deg=cfg.get("min_span_deg", float, 60.0),
                        grid_res=cfg.get("grid_res", int, pg.DEFAULT_RESOLUTION),
                        train=_train_config(cfg), threads=cfg.get("threads", int, None),
                        use_priors=not args.no_priors, prior_sampling=args.ablate_ps == "on",
                        seed=seed)
    cfg.check_unused()
    try:
        scene = read_scene(args.scene)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    priors = {} if args.no_priors else _load_priors(args.priors)
    objects = run_mapper(scene.frames, scene.instance, scene.labels, priors, mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    match = _match_gt(objects, scene.gt)
    rows = ["id,category,prior,gamma_deg,size_x,size_y,size_z,cd,cr_0.004,cr_0.01,iterations,seconds,mesh,note"]
    for i, ob in enumerate(objects):
        tr = ob.track
        name = match.get(i, f"track{tr.id}_{tr.category}")
        mesh_file = ""
        cd = cr1 = cr2 = ""
        if ob.mesh is not None and not ob.mesh.is_empty:
            mesh_file = f"{name}.obj"
            mm.write_obj(ob.mesh, out / mesh_file)
            if i in match:
                gt_mesh = mm.read_obj(scene.gt[name][3])
                s = mm.mesh_scores(ob.mesh, gt_mesh, DEFAULT_TAUS, n_points=10000, seed=seed, n_emd=0)
                cd, cr1, cr2 = (f"{s.cd:.6f}", f"{s.cr[DEFAULT_TAUS[0]]:.4f}",
                                   f"{s.cr[DEFAULT_TAUS[1]]:.4f}")
        gamma = "" if tr.gamma is None else f"{np.degrees(tr.gamma):.1f}"
        size = tr.size if tr.size is not None else np.zeros(3)
        rows.append(",".join([str(tr.id), tr.category, "yes" if ob.prior_used else "no", gamma,
                              *(f"{x:.4f}" for x in size), cd, cr1, cr2, str(ob.iterations),
                              f"{ob.wall_time:.2f}", mesh_file, ob.note]))
    (out / "report.csv").write_text("\n".join(rows) + "\n")
    print("\n".join(rows))
    return 0


def _mesh_files(p: Path) -> dict:
    if p.is_file():
        return {p.stem: p}
    if not p.is_dir():
        raise DataError(f"{p} not found")
    return {f.stem: f for f in sorted(p.glob("*.obj"))}


def cmd_eval(args) -> int:
    taus = DEFAULT_TAUS
    if args.taus:
        try:
            taus = tuple(float(x) for x in args.taus.split(","))
        except ValueError:
            raise UsageError(f"--taus expects comma-separated distances, got {args.taus!r}") from None
        if not taus or min(taus) <= 0:
            raise UsageError("--taus values must be positive")
    pred = _mesh_files(Path(args.pred))
    gt = _mesh_files(Path(args.gt))
    if not pred:
        raise DataError(f"no meshes in {args.pred}")
    missing = sorted(set(pred) - set(gt))
    if missing:
        raise DataError(f"no ground-truth mesh named '{missing[0]}'")
    header = ["name", "cd"] + [f"cr_{t:g}" for t in taus] + ["emd"]
    rows, vals = [",".join(header)], []
    for name in sorted(pred):
        rec, ref = mm.read_obj(pred[name]), mm.read_obj(gt[name])
        if rec.is_empty or ref.is_empty:
            raise DataError(f"mesh pair '{name}' has an empty mesh")
        s = mm.mesh_scores(rec, ref, taus, n_points=args.points, seed=args.seed, n_emd=args.emd_points)
        v = [s.cd, *(s.cr[t] for t in taus), s.emd if s.emd is not None else float("nan")]
        vals.append(v)
        rows.append(",".join([name] + [f"{x:.6f}" for x in v]))
    rows.append(",".join(["mean"] + [f"{x:.6f}" for x in np.mean(vals, axis=0)]))
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_inspect(args) -> int:
    info = inspect_prior(args.prior)
    for k, v in info.items():
        print(f"{k}={v}")
    return 0


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="noma", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="key=value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("gen-tasks", help="generate train/test reconstruction tasks")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_tasks)

    sp = sub.add_parser("gen-scene", help="render a multi-object scene sequence")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_scene)

    sp = sub.add_parser("train-prior", help="search, meta-learn and bake a category prior")
    common(sp)
    sp.add_argument("--category", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="search log path (default: <out>.search.log)")
    sp.set_defaults(func=cmd_train_prior)

    sp = sub.add_parser("map", help="map a scene sequence into per-object meshes")
    common(sp)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--priors")
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-priors", action="store_true", help="default architecture, random init")
    sp.add_argument("--ablate-ps", choices=("on", "off"), default="on",
                    help="'off' forces uniform ray sampling")
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("eval", help="score meshes against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--taus", help="completion thresholds in meters (default 0.004,0.01)")
    sp.add_argument("--points", type=int, default=10000)
    sp.add_argument("--emd-points", type=int, default=512)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("inspect", help="print a prior file's header and grid statistics")
    sp.add_argument("prior")
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, BundleError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
