"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import evaluation as ev
from .env import DEFAULT_SNAP_RADIUS_M, run_oracle, write_trace
from .geo import BBox, GeoError
from .panograph import (SPLITS, GraphConfig, GraphError, NavGraph, PanoNode, build_graph,
                        load_metadata, split_graph, train_test_graphs)
from .project import ProjectionError, ViewSpec, load_equirect, project_lookaround, project_view, save_view
from .roadnet import DEFAULT_SNAP_TOL_M, RoadNetError, load_network
from .seqgen import (DEFAULT_LOOKAROUND_PERMS, DEFAULT_MAX_PATHS, DEFAULT_MAX_SAMPLES, GenConfig,
                     SeqGenError, iter_sentences)
from .tokens import (DEFAULT_VOCAB, ConstantImageTokenizer, StubImageTokenizer, VocabError,
                     decode_sentence, emit_jsonl, encode_sentence, iter_jsonl)

log = logging.getLogger("panonav")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (GeoError, RoadNetError, GraphError, SeqGenError, VocabError, ev.EvalError,
               ProjectionError, OSError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which we reserve for data errors
        self.print_usage(sys.stderr)
        raise UsageError(message)


# flag defaults; --config JSON values override these, explicit flags override both
DEFAULTS: Dict[str, Any] = {
    "bbox": None,
    "max_move_m": 50.0,
    "temporal_link_radius_m": 5.0,
    "snap_tol_m": DEFAULT_SNAP_TOL_M,
    "holdout_years": "2023,2024",
    "spatial_holdout_frac": 0.10,
    "max_paths_per_node": DEFAULT_MAX_PATHS,
    "max_samples_per_seq": DEFAULT_MAX_SAMPLES,
    "lookaround_perms": str(DEFAULT_LOOKAROUND_PERMS),
    "seed": 0,
    "shard": "0/1",
    "view_size": 512,
    "image_mode": "project",
    "image_root": None,
    "steps": 1000,
    "snap_radius_m": DEFAULT_SNAP_RADIUS_M,
    "thresholds": "0:50:1",
    "widths": "1,2,3,4,5,6,7,8,10",
    "width_convention": "half",
    "bucket": "year",
    "fov": 90.0,
    "pitch": 0.0,
    "base_heading": 0.0,
}


@dataclass
class PipelineConfig:
    bbox: Optional[BBox] = None
    max_move_m: float = 50.0
    temporal_link_radius_m: float = 5.0
    snap_tol_m: float = DEFAULT_SNAP_TOL_M
    holdout_years: Tuple[int, ...] = (2023, 2024)
    spatial_holdout_frac: float = 0.10
    max_paths: int = DEFAULT_MAX_PATHS
    max_samples: int = DEFAULT_MAX_SAMPLES
    lookaround_perms: Optional[int] = DEFAULT_LOOKAROUND_PERMS
    seed: int = 0
    shard: Tuple[int, int] = (0, 1)
    paths: Dict[str, str] = field(default_factory=dict)

    def validate(self) -> "PipelineConfig":
        i, n = self.shard
        if not (n >= 1 and 0 <= i < n):
            raise UsageError(f"shard must satisfy 0 <= i < N, got {i}/{n}")
        if not 0 < self.max_move_m <= 50.0:
            raise UsageError("--max-move-m must be in (0, 50]")
        if not 0.0 < self.spatial_holdout_frac < 1.0:
            raise UsageError("--spatial-holdout-frac must be in (0, 1)")
        if self.max_paths < 1 or self.max_samples < 2:
            raise UsageError("need --max-paths-per-node >= 1 and --max-samples-per-seq >= 2")
        return self


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    cfg: Dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    for key, default in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, cfg.get(key, default))
    return args


def _floats(text: str) -> List[float]:
    text = str(text)
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + k * step, 10) for k in range(n)]
    return [float(x) for x in text.split(",") if x.strip()]


def _shard(text: str) -> Tuple[int, int]:
    try:
        i, n = (int(x) for x in str(text).split("/"))
    except ValueError:
        raise UsageError(f"--shard expects i/N, got {text!r}") from None
    return i, n


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    try:
        bbox = BBox.from_str(args.bbox) if isinstance(args.bbox, str) else (
            BBox.from_str(",".join(map(str, args.bbox))) if args.bbox else None)
    except (GeoError, ValueError) as exc:
        raise UsageError(f"bad --bbox: {exc}") from exc
    perms = getattr(args, "lookaround_perms", DEFAULTS["lookaround_perms"])
    try:
        cfg = PipelineConfig(
            bbox=bbox,
            max_move_m=float(args.max_move_m),
            temporal_link_radius_m=float(args.temporal_link_radius_m),
            snap_tol_m=float(args.snap_tol_m),
            holdout_years=tuple(int(y) for y in str(args.holdout_years).split(",") if y.strip()),
            spatial_holdout_frac=float(args.spatial_holdout_frac),
            max_paths=int(getattr(args, "max_paths_per_node", DEFAULT_MAX_PATHS)),
            max_samples=int(getattr(args, "max_samples_per_seq", DEFAULT_MAX_SAMPLES)),
            lookaround_perms=None if str(perms) == "all" else int(perms),
            seed=int(getattr(args, "seed", 0)),
            shard=_shard(getattr(args, "shard", "0/1")),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg.validate()


# -- build-graph --------------------------------------------------------------

def cmd_build_graph(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    nodes = load_metadata(args.metadata)
    net = load_network(args.osm, cfg.bbox)
    g = build_graph(nodes, net, GraphConfig(cfg.bbox, cfg.max_move_m, cfg.temporal_link_radius_m,
                                            cfg.snap_tol_m))
    g = split_graph(g, cfg.holdout_years, cfg.spatial_holdout_frac)
    g.save(args.out)
    counts = g.split_counts()
    print(f"nodes={len(g)} spatial_edges={len(g.spatial_edges)} "
          f"temporal_edges={len(g.temporal_edges)} dropped={len(g.dropped)}")
    for s in SPLITS:
        c = counts[s]
        print(f"  {s}: nodes={c['nodes']} spatial_edges={c['spatial_edges']} "
              f"temporal_edges={c['temporal_edges']}")
    for reason, n in sorted(Counter(r.split(" (")[0] for _, r in g.dropped).items()):
        print(f"  dropped {n}: {reason}")
    return EXIT_OK


# -- gen ----------------------------------------------------------------------

class ViewRenderer:
    """(node, heading) -> image tokens, rendering and tokenizing each view once."""

    def __init__(self, image_root: Path, size: int, mode: str = "project"):
        self.root = image_root
        self.size = size
        self.mode = mode
        self.tokenizer = StubImageTokenizer() if mode == "project" else ConstantImageTokenizer()
        self.cache: Dict[Tuple[str, float], Tuple[int, ...]] = {}
        self._load = lru_cache(maxsize=64)(self._load_uncached)

    def _load_uncached(self, path: str, base_heading: float):
        return load_equirect(path, base_heading)

    def __call__(self, node: PanoNode, heading: float) -> Tuple[int, ...]:
        key = (node.id, heading)
        toks = self.cache.get(key)
        if toks is None:
            if self.mode == "blank":
                toks = self.tokenizer.tokenize(np.zeros((1, 1)))
            else:
                if not node.image_ref:
                    raise ProjectionError(f"node {node.id} has no image_path")
                img = self._load(str(self.root / node.image_ref), node.base_heading)
                view = project_view(img, ViewSpec(heading, out_size=(self.size, self.size)))
                toks = self.tokenizer.tokenize(view)
            self.cache[key] = toks
        return toks


def _gen_split(sub: NavGraph, cfg: PipelineConfig, views: ViewRenderer,
               out: Path) -> Dict[str, int]:
    gcfg = GenConfig(cfg.max_paths, cfg.max_samples, cfg.lookaround_perms, cfg.seed, cfg.shard)
    stats = Counter()
    unique = set()
    origins = set()

    def sentences():
        for vs in iter_sentences(sub, gcfg, views):
            toks = encode_sentence(vs.samples)
            stats["sequences"] += 1
            stats["tokens"] += len(toks)
            stats["samples"] += len(vs.samples)
            origins.add(vs.origin)
            for nid, h in zip(vs.path if vs.kind == "dfs" else vs.path * len(vs.view_headings),
                              vs.view_headings):
                unique.add((nid, h))
            yield toks

    emit_jsonl(sentences(), out)
    return {"tokens": stats["tokens"], "sequences": stats["sequences"],
            "panoramas": len(origins), "projected_images": stats["samples"],
            "unique_projections": len(unique)}


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _pipeline_config(args)
    g = NavGraph.load(args.graph)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    root = Path(args.image_root) if args.image_root else Path(args.graph).resolve().parent
    if args.image_mode not in ("project", "blank"):
        raise UsageError("--image-mode must be project or blank")
    if int(args.view_size) < StubImageTokenizer.grid:
        raise UsageError(f"--view-size must be at least {StubImageTokenizer.grid}")
    views = ViewRenderer(root, int(args.view_size), args.image_mode)
    i, n = cfg.shard
    tag = f"{i:05d}-of-{n:05d}"
    parts = train_test_graphs(g)
    manifest = {
        "shard": [i, n],
        "config": {"max_paths_per_node": cfg.max_paths, "max_samples_per_seq": cfg.max_samples,
                   "lookaround_perms": cfg.lookaround_perms or "all", "seed": cfg.seed,
                   "view_size": int(args.view_size), "image_mode": args.image_mode},
        "train": _gen_split(parts["train"], cfg, views, out / f"train-{tag}.jsonl"),
        "test": _gen_split(parts["test"], cfg, views, out / f"test-{tag}.jsonl"),
    }
    manifest["total"] = {k: manifest["train"][k] + manifest["test"][k] for k in manifest["train"]}
    (out / f"manifest-{tag}.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    for split in ("train", "test", "total"):
        m = manifest[split]
        ratio = m["projected_images"] / m["panoramas"] if m["panoramas"] else 0.0
        print(f"{split}: tokens={m['tokens']} sequences={m['sequences']} panoramas={m['panoramas']}"
              f" projected_images={m['projected_images']} unique={m['unique_projections']}"
              f" (x{ratio:.1f})")
    return EXIT_OK


# -- project --------------------------------------------------------------------

def cmd_project(args: argparse.Namespace) -> int:
    img = load_equirect(args.image, float(args.base_heading))
    try:
        w, h = (int(x) for x in str(args.size).lower().split("x"))
    except ValueError:
        raise UsageError(f"--size expects WxH, got {args.size!r}") from None
    out = Path(args.out)
    if args.lookaround:
        out.mkdir(parents=True, exist_ok=True)
        for k, view in enumerate(project_lookaround(img, (w, h))):
            save_view(view, out / f"view_{k * 90:03d}.png")
        print(f"wrote 4 views to {out}")
        return EXIT_OK
    if args.heading is None:
        raise UsageError("--heading is required unless --lookaround is given")
    save_view(project_view(img, ViewSpec(float(args.heading), float(args.pitch), float(args.fov),
                                          (w, h))), out)
    print(f"wrote {out}")
    return EXIT_OK


# -- tokenize-check ---------------------------------------------------------------

def cmd_tokenize_check(args: argparse.Namespace) -> int:
    v = DEFAULT_VOCAB
    if args.manifest_out:
        Path(args.manifest_out).write_text(json.dumps(v.manifest(), indent=1) + "\n")
    print(f"vocab size={v.size}")
    for m in v.modalities:
        print(f"  {m.name:<10} offset={m.offset:<6} size={m.size}")
    print(f"  specials   offset={v.special_offset:<6} size={len(v.specials)}")
    for path in args.jsonl or []:
        n = samples = tokens = 0
        for toks in iter_jsonl(path, v):
            samples += len(decode_sentence(toks, v))
            tokens += len(toks)
            n += 1
        print(f"{path}: sequences={n} samples={samples} tokens={tokens} ok")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------------

METRICS = ("georef", "adherence", "perplexity", "action-cdf")


def cmd_eval(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.metric.replace("-", "_")
    csv_path, png_path = out / f"{stem}.csv", out / f"{stem}.png"
    plots = not args.no_plots
    if plots:
        from . import plotting
    if args.metric == "georef":
        recs = ev.load_georef(args.input)
        th = _floats(args.thresholds)
        series = {"all": (ev.error_cdf(recs, th), len(recs))}
        for split in sorted({r.split for r in recs if r.split}):
            sub = [r for r in recs if r.split == split]
            series[split] = (ev.error_cdf(sub, th), len(sub))
        ev.write_cdf_csv(csv_path, th, series)
        if plots:
            plotting.plot_cdf(png_path, th, series, "error (m)", "Georeferencing error CDF")
        for t in (5.0, 10.0, 20.0, 50.0):
            if t in th:
                print(f"within {t:g} m: {series['all'][0][th.index(t)]:.3f}")
    elif args.metric == "adherence":
        if not args.osm:
            raise UsageError("--osm is required for the adherence metric")
        recs = ev.load_adherence(args.input)
        bbox = BBox.from_str(args.bbox) if args.bbox else None
        net = load_network(args.osm, bbox)
        rows = ev.road_adherence(recs, net, _floats(args.widths), args.width_convention)
        ev.write_adherence_csv(csv_path, rows)
        if plots:
            plotting.plot_adherence(png_path, rows)
        for r in rows:
            print(f"width {r.width_m:>4g} m: all {r.all_pct:6.2f}%  nonzero {r.nonzero_pct:6.2f}%")
    elif args.metric == "perplexity":
        recs = ev.load_nll(args.input)
        key = tuple(k.strip() for k in args.bucket.split(","))
        try:
            names = ev.bucket_names(key)
        except ev.EvalError as exc:
            raise UsageError(str(exc)) from exc
        table = ev.perplexity_by_bucket(recs, key)
        ev.write_perplexity_csv(csv_path, names, table)
        if plots:
            plotting.plot_perplexity(png_path, names, table)
        print(f"{len(table)} buckets over {len(recs)} records")
    else:
        dists = ev.load_actions(args.input)
        th = _floats(args.thresholds)
        series = {"all": (ev.action_magnitude_cdf(dists, th), len(dists))}
        ev.write_cdf_csv(csv_path, th, series)
        if plots:
            plotting.plot_cdf(png_path, th, series, "move distance (m)", "Action magnitude CDF")
        if 5.0 in th:
            print(f"steps >= 5 m: {1 - series['all'][0][th.index(5.0)]:.3f} (strictly above 5 m)")
    print(f"wrote {csv_path}" + (f" and {png_path}" if plots else ""))
    return EXIT_OK


# -- env-trace ---------------------------------------------------------------------

def cmd_env_trace(args: argparse.Namespace) -> int:
    g = NavGraph.load(args.graph)
    res = run_oracle(g, int(args.steps), int(args.seed), args.start, float(args.snap_radius_m))
    write_trace(res, args.out)
    if args.adherence_out:
        with open(args.adherence_out, "w", encoding="utf-8") as fh:
            for r in res:
                n = g.nodes[r.next_node]
                fh.write(json.dumps({"lat": n.pos.lat, "lon": n.pos.lon,
                                     "action_distance": r.realized_action.distance}) + "\n")
    valid = sum(r.valid for r in res)
    print(f"steps={len(res)} valid={valid} start={res[0].from_node if res else args.start}")
    return EXIT_OK


# -- synth-city ----------------------------------------------------------------------

def cmd_synth_city(args: argparse.Namespace) -> int:
    from .synth import CityConfig, write_city

    cfg = CityConfig(blocks_x=args.blocks, blocks_y=args.blocks, seed=args.seed if args.seed is not None else 7)
    w = int(args.pano_width)
    city = write_city(args.out, cfg, (w, w // 2), images=not args.no_images)
    print(f"wrote {len(city.nodes)} panoramas to {args.out}; bbox {','.join(f'{v:.8f}' for v in city.bbox.to_list())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panonav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def graph_flags(sp):
        sp.add_argument("--config", help="JSON file of flag defaults")
        sp.add_argument("--bbox", help="min_lat,min_lon,max_lat,max_lon")
        sp.add_argument("--max-move-m", type=float)
        sp.add_argument("--temporal-link-radius-m", type=float)
        sp.add_argument("--snap-tol-m", type=float)
        sp.add_argument("--holdout-years", help="comma separated, e.g. 2023,2024")
        sp.add_argument("--spatial-holdout-frac", type=float)

    sp = sub.add_parser("build-graph", help="panorama metadata + OSM -> navigation graph JSON")
    sp.add_argument("--metadata", required=True, help="JSONL or CSV panorama metadata")
    sp.add_argument("--osm", required=True, help="OSM XML or GeoJSON road extract")
    sp.add_argument("--out", required=True)
    graph_flags(sp)
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("gen", help="graph -> tokenized JSONL shards + manifest")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--image-root", help="directory image paths are relative to (default: graph dir)")
    sp.add_argument("--image-mode", help="project (default) or blank (constant image tokens)")
    sp.add_argument("--view-size", type=int, help="square perspective view size in pixels")
    sp.add_argument("--max-paths-per-node", type=int)
    sp.add_argument("--max-samples-per-seq", type=int)
    sp.add_argument("--lookaround-perms", help="orderings per node, or 'all' for 24")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--shard", help="i/N: keep origins whose sorted index is i mod N")
    graph_flags(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("project", help="render perspective views from an equirectangular image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True, help="PNG path, or a directory with --lookaround")
    sp.add_argument("--heading", type=float)
    sp.add_argument("--base-heading", type=float)
    sp.add_argument("--pitch", type=float)
    sp.add_argument("--fov", type=float)
    sp.add_argument("--size", default="512x512")
    sp.add_argument("--lookaround", action="store_true")
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("tokenize-check", help="print the vocabulary layout and validate JSONL files")
    sp.add_argument("jsonl", nargs="*")
    sp.add_argument("--manifest-out", help="write the vocab manifest JSON here")
    sp.set_defaults(func=cmd_tokenize_check)

    sp = sub.add_parser("eval", help="evaluation tables (CSV) and figures (PNG)")
    sp.add_argument("metric", help="one of: " + ", ".join(METRICS))
    sp.add_argument("--input", required=True, help="JSONL records")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--osm", help="road extract (adherence only)")
    sp.add_argument("--bbox")
    sp.add_argument("--thresholds", help="lo:hi:step or comma list, metres")
    sp.add_argument("--widths", help="comma list of lane widths, metres")
    sp.add_argument("--width-convention", choices=("half", "full"))
    sp.add_argument("--bucket", help="comma list of: " + ", ".join(ev.BUCKET_FIELDS))
    sp.add_argument("--no-plots", action="store_true")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("env-trace", help="run the oracle policy and write a StepResult trace")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--start")
    sp.add_argument("--snap-radius-m", type=float)
    sp.add_argument("--adherence-out", help="also write adherence records for `eval adherence`")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_env_trace)

    sp = sub.add_parser("synth-city", help="write a synthetic grid city fixture")
    sp.add_argument("--out", required=True)
    sp.add_argument("--blocks", type=int, default=4)
    sp.add_argument("--pano-width", type=int, default=256)
    sp.add_argument("--no-images", action="store_true")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth_city)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        if args.command == "eval" and args.metric not in METRICS:
            raise UsageError(f"unknown metric {args.metric!r}; choose from {', '.join(METRICS)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(_resolve(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
