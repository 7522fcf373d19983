"""Spatiotemporal navigation graph over panorama captures."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .geo import BBox, GeoPoint, M_PER_DEG, haversine_m
from .roadnet import DEFAULT_SNAP_TOL_M, RoadNetwork, nearest_centerline, road_path_exists

log = logging.getLogger(__name__)

TRAIN = "train"
TEST_TEMPORAL = "test_temporal"
TEST_SPATIOTEMPORAL = "test_spatiotemporal"
SPLITS = (TRAIN, TEST_TEMPORAL, TEST_SPATIOTEMPORAL)
GRAPH_VERSION = 1


class GraphError(ValueError):
    pass


class EmptyGraphError(GraphError):
    pass


@dataclass(frozen=True)
class PanoNode:
    id: str
    pos: GeoPoint
    month: int
    year: int
    image_ref: str = ""
    base_heading: float = 0.0

    @property
    def months(self) -> int:
        """Absolute month index, for date arithmetic."""
        return 12 * self.year + self.month - 1

    def to_json(self) -> dict:
        return {"id": self.id, "lat": self.pos.lat, "lon": self.pos.lon, "month": self.month,
                "year": self.year, "image_path": self.image_ref, "heading": self.base_heading}


@dataclass(frozen=True)
class GraphConfig:
    bbox: Optional[BBox] = None
    max_move_m: float = 50.0
    temporal_link_radius_m: float = 5.0
    snap_tol_m: float = DEFAULT_SNAP_TOL_M
    year_range: Tuple[int, int] = (2000, 2030)


@dataclass
class NavGraph:
    nodes: Dict[str, PanoNode]
    spatial_edges: List[Tuple[str, str]]
    temporal_edges: List[Tuple[str, str]]
    bbox: Optional[BBox] = None
    split: Dict[str, str] = field(default_factory=dict)
    dropped: List[Tuple[str, str]] = field(default_factory=list)
    adj: Dict[str, List[str]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        nbrs: Dict[str, Set[str]] = {k: set() for k in self.nodes}
        for u, v in list(self.spatial_edges) + list(self.temporal_edges):
            nbrs[u].add(v)
            nbrs[v].add(u)
        self.adj = {k: sorted(v) for k, v in nbrs.items()}
        self._spatial = {frozenset(e) for e in self.spatial_edges}
        self._temporal = {frozenset(e) for e in self.temporal_edges}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def neighbors(self, node_id: str) -> List[str]:
        return self.adj[node_id]

    def is_spatial_edge(self, u: str, v: str) -> bool:
        return frozenset((u, v)) in self._spatial

    def is_temporal_edge(self, u: str, v: str) -> bool:
        return frozenset((u, v)) in self._temporal

    def has_edge(self, u: str, v: str) -> bool:
        return self.is_spatial_edge(u, v) or self.is_temporal_edge(u, v)

    def edges(self) -> List[Tuple[str, str]]:
        return sorted({tuple(sorted(e)) for e in self.spatial_edges + self.temporal_edges})

    def sorted_ids(self) -> List[str]:
        return sorted(self.nodes)

    def subgraph(self, keep: Iterable[str]) -> "NavGraph":
        keep = set(keep)
        return NavGraph(
            {k: n for k, n in self.nodes.items() if k in keep},
            [e for e in self.spatial_edges if e[0] in keep and e[1] in keep],
            [e for e in self.temporal_edges if e[0] in keep and e[1] in keep],
            self.bbox,
            {k: s for k, s in self.split.items() if k in keep},
        )

    def split_counts(self) -> Dict[str, Dict[str, int]]:
        out = {s: {"nodes": 0, "spatial_edges": 0, "temporal_edges": 0} for s in SPLITS}
        for k in self.nodes:
            out[self.split.get(k, TRAIN)]["nodes"] += 1
        for kind, edges in (("spatial_edges", self.spatial_edges),
                            ("temporal_edges", self.temporal_edges)):
            for u, v in edges:
                su, sv = self.split.get(u, TRAIN), self.split.get(v, TRAIN)
                if su == sv:
                    out[su][kind] += 1
        return out

    # -- serialization -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "version": GRAPH_VERSION,
            "bbox": self.bbox.to_list() if self.bbox else None,
            "nodes": [dict(self.nodes[k].to_json(), split=self.split.get(k, TRAIN))
                      for k in self.sorted_ids()],
            "spatial_edges": [list(e) for e in sorted(self.spatial_edges)],
            "temporal_edges": [list(e) for e in sorted(self.temporal_edges)],
            "dropped": [{"id": k, "reason": r} for k, r in sorted(self.dropped)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "NavGraph":
        try:
            nodes = {}
            split = {}
            for r in doc["nodes"]:
                n = _node_from_record(r)
                nodes[n.id] = n
                split[n.id] = r.get("split", TRAIN)
            bb = doc.get("bbox")
            return cls(nodes,
                       [tuple(e) for e in doc["spatial_edges"]],  # type: ignore[misc]
                       [tuple(e) for e in doc["temporal_edges"]],  # type: ignore[misc]
                       BBox.from_str(",".join(map(str, bb))) if bb else None,
                       split,
                       [(d["id"], d["reason"]) for d in doc.get("dropped", [])])
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NavGraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# -- metadata ---------------------------------------------------------------

def _node_from_record(r: dict) -> PanoNode:
    return PanoNode(
        str(r["id"]),
        GeoPoint(float(r["lat"]), float(r["lon"])),
        int(r["month"]),
        int(r["year"]),
        str(r.get("image_path") or ""),
        float(r.get("heading") or 0.0),
    )


def load_metadata(path: Union[str, Path]) -> List[PanoNode]:
    """Read panorama metadata from JSONL or CSV (id, lat, lon, month, year, image_path[, heading])."""
    path = Path(path)
    rows: List[dict] = []
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        rows.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise GraphError(f"{path}:{lineno}: {exc.msg}") from exc
    out = []
    for k, r in enumerate(rows, 1):
        try:
            out.append(_node_from_record(r))
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"{path}: record {k}: {exc}") from exc
    return out


def save_metadata(nodes: Sequence[PanoNode], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n in nodes:
            fh.write(json.dumps(n.to_json(), sort_keys=True) + "\n")


# -- construction -------------------------------------------------------------

def _planar(nodes: Sequence[PanoNode]) -> np.ndarray:
    lat0 = float(np.mean([n.pos.lat for n in nodes]))
    k = math.cos(math.radians(lat0))
    return np.array([[n.pos.lon * M_PER_DEG * k, n.pos.lat * M_PER_DEG] for n in nodes])


def build_graph(nodes: Sequence[PanoNode], net: RoadNetwork,
                cfg: GraphConfig = GraphConfig()) -> NavGraph:
    """Link panoramas that are <= max_move_m apart and joined by a road path of that length,
    and co-located captures with different dates.
    """
    dropped: List[Tuple[str, str]] = []
    kept: List[PanoNode] = []
    seen: Set[str] = set()
    ylo, yhi = cfg.year_range
    for n in nodes:
        if n.id in seen:
            dropped.append((n.id, "duplicate id"))
            continue
        seen.add(n.id)
        if cfg.bbox is not None and not cfg.bbox.contains(n.pos):
            dropped.append((n.id, "outside bbox"))
            continue
        if not (1 <= n.month <= 12 and ylo <= n.year <= yhi):
            dropped.append((n.id, "date outside tokenizable range"))
            continue
        d, _ = nearest_centerline(n.pos, net)
        if d > cfg.snap_tol_m:
            dropped.append((n.id, f"no road within {cfg.snap_tol_m:g} m ({d:.1f} m)"))
            continue
        kept.append(n)
    if not kept:
        raise EmptyGraphError("no panorama survived filtering")
    for reason, count in sorted(Counter(r.split(" (")[0] for _, r in dropped).items()):
        log.info("dropped %d nodes: %s", count, reason)

    kept.sort(key=lambda n: n.id)
    xy = _planar(kept)
    tree = cKDTree(xy)
    # planar distances are within a fraction of a percent of haversine at city scale
    radius = max(cfg.max_move_m, cfg.temporal_link_radius_m) * 1.01
    spatial: List[Tuple[str, str]] = []
    temporal: List[Tuple[str, str]] = []
    for i, j in sorted(tree.query_pairs(radius, output_type="set")):
        u, v = kept[i], kept[j]
        d = haversine_m(u.pos, v.pos)
        if d <= cfg.max_move_m and road_path_exists(u.pos, v.pos, cfg.max_move_m, net, cfg.snap_tol_m):
            spatial.append((u.id, v.id))
        if d <= cfg.temporal_link_radius_m and (u.month, u.year) != (v.month, v.year):
            temporal.append((u.id, v.id))
    return NavGraph({n.id: n for n in kept}, spatial, temporal, cfg.bbox, {}, dropped)


def split_graph(g: NavGraph, holdout_years: Iterable[int] = (2023, 2024),
                spatial_frac: float = 0.10) -> NavGraph:
    """Tag nodes train / test_temporal / test_spatiotemporal.

    The spatial holdout is the band below ``min_lat + spatial_frac * height`` of
    the graph bbox (or the nodes' extent when the graph has none).
    """
    if not 0.0 < spatial_frac < 1.0:
        raise GraphError(f"spatial_frac must be in (0, 1), got {spatial_frac}")
    years = set(holdout_years)
    cut = spatial_cut_lat(g, spatial_frac)
    tags = {}
    for k, n in g.nodes.items():
        if n.year in years:
            tags[k] = TEST_TEMPORAL
        elif n.pos.lat < cut:
            tags[k] = TEST_SPATIOTEMPORAL
        else:
            tags[k] = TRAIN
    return replace(g, split=tags)


def spatial_cut_lat(g: NavGraph, spatial_frac: float) -> float:
    if g.bbox is not None:
        lo, hi = g.bbox.min.lat, g.bbox.max.lat
    else:
        lats = [n.pos.lat for n in g.nodes.values()]
        lo, hi = min(lats), max(lats)
    return lo + spatial_frac * (hi - lo)


def train_test_graphs(g: NavGraph) -> Dict[str, NavGraph]:
    """``{"train": ..., "test": ...}`` induced subgraphs; both test splits pool into ``test``.

    Untagged nodes count as training data. No edge crosses the two subgraphs.
    """
    train = [k for k in g.sorted_ids() if g.split.get(k, TRAIN) == TRAIN]
    test = [k for k in g.sorted_ids() if g.split.get(k, TRAIN) != TRAIN]
    return {"train": g.subgraph(train), "test": g.subgraph(test)}
