"""Drivable road network: OSM parsing, grid index, centerline and path queries."""

from __future__ import annotations

import heapq
import json
import math
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .geo import (BBox, GeoPoint, M_PER_DEG, haversine_m, point_to_segment_m,
                  project_onto_segment)

_BASE_CLASSES = ("motorway", "trunk", "primary", "secondary", "tertiary")
DRIVABLE_HIGHWAYS = frozenset(
    _BASE_CLASSES
    + tuple(f"{c}_link" for c in _BASE_CLASSES)
    + ("residential", "unclassified", "service", "living_street")
)

CELL_M = 50.0
DEFAULT_SNAP_TOL_M = 15.0
SERIAL_VERSION = 1


class RoadNetError(ValueError):
    pass


class MalformedDocumentError(RoadNetError):
    pass


class EmptyNetworkError(RoadNetError):
    pass


@dataclass(frozen=True)
class RoadSegment:
    id: int
    a: GeoPoint
    b: GeoPoint
    way_id: str
    highway_class: str
    # junction keys of the endpoints; segments sharing a key are connected
    ka: str = ""
    kb: str = ""

    @property
    def length_m(self) -> float:
        return haversine_m(self.a, self.b)


class _Grid:
    """Uniform lat/lon grid; each cell lists the segments whose bbox overlaps it."""

    def __init__(self, segments: Sequence[RoadSegment], cell_m: float = CELL_M):
        lats = [s.a.lat for s in segments] + [s.b.lat for s in segments]
        lons = [s.a.lon for s in segments] + [s.b.lon for s in segments]
        self.lat0, self.lon0 = min(lats), min(lons)
        self.dlat = cell_m / M_PER_DEG
        # cells must be at least cell_m wide everywhere in the extent
        coslat = min(math.cos(math.radians(min(lats))), math.cos(math.radians(max(lats))))
        self.dlon = cell_m / (M_PER_DEG * coslat)
        self.cell_m = cell_m
        self.cells: Dict[Tuple[int, int], List[int]] = defaultdict(list)
        for s in segments:
            i0, j0 = self.cell_of(GeoPoint(min(s.a.lat, s.b.lat), min(s.a.lon, s.b.lon)))
            i1, j1 = self.cell_of(GeoPoint(max(s.a.lat, s.b.lat), max(s.a.lon, s.b.lon)))
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    self.cells[(i, j)].append(s.id)
        ks = list(self.cells)
        self.imin = min(k[0] for k in ks)
        self.imax = max(k[0] for k in ks)
        self.jmin = min(k[1] for k in ks)
        self.jmax = max(k[1] for k in ks)

    def cell_of(self, p: GeoPoint) -> Tuple[int, int]:
        return (math.floor((p.lat - self.lat0) / self.dlat),
                math.floor((p.lon - self.lon0) / self.dlon))

    def ring(self, ci: int, cj: int, r: int) -> Iterable[int]:
        if r == 0:
            yield from self.cells.get((ci, cj), ())
            return
        for i in range(ci - r, ci + r + 1):
            if i == ci - r or i == ci + r:
                js: Iterable[int] = range(cj - r, cj + r + 1)
            else:
                js = (cj - r, cj + r)
            for j in js:
                yield from self.cells.get((i, j), ())

    def max_ring(self, ci: int, cj: int) -> int:
        return max(abs(ci - self.imin), abs(ci - self.imax),
                   abs(cj - self.jmin), abs(cj - self.jmax))


@dataclass
class RoadNetwork:
    segments: List[RoadSegment]
    cell_m: float = CELL_M
    junctions: Dict[str, List[int]] = field(init=False)
    index: _Grid = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.segments:
            raise EmptyNetworkError("road network has no drivable segments")
        for i, s in enumerate(self.segments):
            if s.id != i:
                raise RoadNetError("segment ids must be 0..n-1 in order")
        self.junctions = defaultdict(list)
        for s in self.segments:
            self.junctions[s.ka].append(s.id)
            self.junctions[s.kb].append(s.id)
        self.junctions = dict(self.junctions)
        self.index = _Grid(self.segments, self.cell_m)

    def __len__(self) -> int:
        return len(self.segments)

    def neighbors_of_segment(self, sid: int) -> List[int]:
        s = self.segments[sid]
        out = set(self.junctions[s.ka]) | set(self.junctions[s.kb])
        out.discard(sid)
        return sorted(out)

    # -- serialization -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "version": SERIAL_VERSION,
            "segments": [
                {"id": s.id, "way_id": s.way_id, "highway": s.highway_class,
                 "a": [s.a.lat, s.a.lon], "b": [s.b.lat, s.b.lon], "ka": s.ka, "kb": s.kb}
                for s in self.segments
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))

    @classmethod
    def from_json(cls, doc: dict) -> "RoadNetwork":
        try:
            segs = [RoadSegment(int(r["id"]), GeoPoint(*r["a"]), GeoPoint(*r["b"]),
                                str(r["way_id"]), str(r["highway"]), str(r["ka"]), str(r["kb"]))
                    for r in doc["segments"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocumentError(f"bad segment JSON: {exc}") from exc
        return cls(segs)


# -- parsing ----------------------------------------------------------------

def _clip(a: GeoPoint, b: GeoPoint, bbox: BBox) -> Optional[Tuple[float, float]]:
    """Liang-Barsky clip of a->b against bbox in lat/lon space; returns (t0, t1)."""
    t0, t1 = 0.0, 1.0
    dx, dy = b.lon - a.lon, b.lat - a.lat
    for p, q in ((-dx, a.lon - bbox.min.lon), (dx, bbox.max.lon - a.lon),
                 (-dy, a.lat - bbox.min.lat), (dy, bbox.max.lat - a.lat)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return t0, t1


def _lerp(a: GeoPoint, b: GeoPoint, t: float) -> GeoPoint:
    return GeoPoint(a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t)


def explode_ways(ways: Iterable[Tuple[str, str, List[Tuple[str, GeoPoint]]]],
                 bbox: Optional[BBox] = None) -> List[RoadSegment]:
    """Turn (way_id, highway, [(vertex_key, point), ...]) into clipped segments."""
    segs: List[RoadSegment] = []
    for way_id, hw, pts in ways:
        for (ka, a), (kb, b) in zip(pts, pts[1:]):
            if a == b:
                continue
            if bbox is not None and not (bbox.contains(a) and bbox.contains(b)):
                span = _clip(a, b, bbox)
                if span is None:
                    continue
                t0, t1 = span
                base = f"clip:{way_id}:{ka}:{kb}"
                if t0 > 0:
                    ka = base + ":a"
                if t1 < 1:
                    kb = base + ":b"
                a, b = _lerp(a, b, t0), _lerp(a, b, t1)
                if a == b:
                    continue
            segs.append(RoadSegment(len(segs), a, b, way_id, hw, ka, kb))
    return segs


def parse_osm_xml(text: str, bbox: Optional[BBox] = None,
                  allowlist: Iterable[str] = DRIVABLE_HIGHWAYS) -> RoadNetwork:
    allow = frozenset(allowlist)
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        context = text.splitlines()[line - 1][:80] if 0 < line <= len(text.splitlines()) else ""
        raise MalformedDocumentError(f"OSM XML parse error at line {line}, col {col}: {context!r}") from exc
    nodes: Dict[str, GeoPoint] = {}
    for n in root.iter("node"):
        try:
            nodes[n.attrib["id"]] = GeoPoint(float(n.attrib["lat"]), float(n.attrib["lon"]))
        except (KeyError, ValueError) as exc:
            raise MalformedDocumentError(f"bad <node> {n.attrib}: {exc}") from exc
    ways = []
    for w in root.iter("way"):
        wid = w.attrib.get("id")
        if wid is None:
            raise MalformedDocumentError("<way> without id")
        tags = {t.attrib.get("k"): t.attrib.get("v") for t in w.iter("tag")}
        hw = tags.get("highway")
        if hw not in allow:
            continue
        pts = []
        for nd in w.iter("nd"):
            ref = nd.attrib.get("ref")
            if ref not in nodes:
                raise MalformedDocumentError(f"way {wid} references unknown node {ref}")
            pts.append((ref, nodes[ref]))
        ways.append((wid, hw, pts))
    return RoadNetwork(explode_ways(ways, bbox))


def _coord_key(lon: float, lat: float) -> str:
    return f"{lat:.7f},{lon:.7f}"


def parse_geojson(doc: Union[str, dict], bbox: Optional[BBox] = None,
                  allowlist: Iterable[str] = DRIVABLE_HIGHWAYS) -> RoadNetwork:
    """FeatureCollection of LineStrings carrying a ``highway`` property.

    Shared coordinates (to 1e-7 degrees) form junctions.
    """
    allow = frozenset(allowlist)
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise MalformedDocumentError(
                f"GeoJSON parse error at line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedDocumentError("expected a GeoJSON FeatureCollection")
    ways = []
    for k, feat in enumerate(doc.get("features", [])):
        try:
            geom = feat["geometry"]
            props = feat.get("properties") or {}
        except (KeyError, TypeError) as exc:
            raise MalformedDocumentError(f"feature {k}: {exc}") from exc
        if geom is None or geom.get("type") != "LineString":
            continue
        hw = props.get("highway")
        if hw not in allow:
            continue
        wid = str(props.get("id", feat.get("id", k)))
        try:
            pts = [(_coord_key(c[0], c[1]), GeoPoint(float(c[1]), float(c[0])))
                   for c in geom["coordinates"]]
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise MalformedDocumentError(f"feature {k}: bad coordinates: {exc}") from exc
        ways.append((wid, hw, pts))
    return RoadNetwork(explode_ways(ways, bbox))


def parse_osm(doc: Union[str, dict], bbox: Optional[BBox] = None,
              allowlist: Iterable[str] = DRIVABLE_HIGHWAYS) -> RoadNetwork:
    """Parse OSM XML, simplified GeoJSON, or our own segment JSON."""
    if isinstance(doc, dict):
        if "segments" in doc:
            return RoadNetwork.from_json(doc)
        return parse_geojson(doc, bbox, allowlist)
    head = doc.lstrip()[:1]
    if head == "<":
        return parse_osm_xml(doc, bbox, allowlist)
    if head == "{":
        try:
            obj = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise MalformedDocumentError(
                f"JSON parse error at line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
        return parse_osm(obj, bbox, allowlist)
    raise MalformedDocumentError("document is neither OSM XML nor JSON")


def load_network(path: Union[str, Path], bbox: Optional[BBox] = None,
                 allowlist: Iterable[str] = DRIVABLE_HIGHWAYS) -> RoadNetwork:
    return parse_osm(Path(path).read_text(), bbox, allowlist)


# -- queries ----------------------------------------------------------------

def nearest_centerline(p: GeoPoint, net: RoadNetwork) -> Tuple[float, int]:
    """(distance_m, segment id) of the closest centerline; ties go to the lower id."""
    if not net.segments:
        raise EmptyNetworkError("empty network")
    grid = net.index
    ci, cj = grid.cell_of(p)
    best: Optional[Tuple[float, int]] = None
    seen = set()
    rmax = grid.max_ring(ci, cj)
    # past this ring count a plain scan is cheaper than walking empty cells
    rscan = int(math.sqrt(len(net.segments))) + 2
    r = 0
    while r <= rmax:
        if r > rscan:
            for s in net.segments:
                if s.id not in seen:
                    cand = (point_to_segment_m(p, (s.a, s.b)), s.id)
                    if best is None or cand < best:
                        best = cand
            break
        for sid in grid.ring(ci, cj, r):
            if sid in seen:
                continue
            seen.add(sid)
            s = net.segments[sid]
            cand = (point_to_segment_m(p, (s.a, s.b)), sid)
            if best is None or cand < best:
                best = cand
        # unseen segments lie entirely outside rings 0..r, so at least r cells away;
        # the 0.98 factor absorbs the planar-frame difference between p and the grid
        if best is not None and best[0] < r * grid.cell_m * 0.98:
            break
        r += 1
    assert best is not None
    return best


def snap(p: GeoPoint, net: RoadNetwork, snap_tol: float) -> Optional[Tuple[int, float, float]]:
    """(segment id, t along segment, distance) if p is within snap_tol of a centerline."""
    d, sid = nearest_centerline(p, net)
    if d > snap_tol:
        return None
    s = net.segments[sid]
    _, t = project_onto_segment(p, s.a, s.b)
    return sid, t, d


def road_path_length(a: GeoPoint, b: GeoPoint, net: RoadNetwork,
                     snap_tol: float = DEFAULT_SNAP_TOL_M,
                     max_len: float = math.inf) -> Optional[float]:
    """Shortest along-road length between the snap points of a and b, or None.

    Search is cut off once partial paths exceed ``max_len``.
    """
    sa = snap(a, net, snap_tol)
    sb = snap(b, net, snap_tol)
    if sa is None or sb is None:
        return None
    seg_a, ta, _ = sa
    seg_b, tb, _ = sb
    A, B = net.segments[seg_a], net.segments[seg_b]
    la, lb = A.length_m, B.length_m
    best = math.inf
    if seg_a == seg_b:
        best = abs(ta - tb) * la
    targets = {B.ka: tb * lb, B.kb: (1.0 - tb) * lb}
    dist: Dict[str, float] = {}
    heap = [(ta * la, A.ka), ((1.0 - ta) * la, A.kb)]
    heapq.heapify(heap)
    while heap:
        d, k = heapq.heappop(heap)
        if d >= best or d > max_len:
            break
        if k in dist:
            continue
        dist[k] = d
        if k in targets:
            best = min(best, d + targets[k])
        for sid in net.junctions.get(k, ()):
            s = net.segments[sid]
            other = s.kb if s.ka == k else s.ka
            if other not in dist:
                heapq.heappush(heap, (d + s.length_m, other))
    return best if best <= max_len else None


def road_path_exists(a: GeoPoint, b: GeoPoint, max_len: float, net: RoadNetwork,
                     snap_tol: float = DEFAULT_SNAP_TOL_M) -> bool:
    if max_len <= 0:
        raise RoadNetError("max_len must be positive")
    return road_path_length(a, b, net, snap_tol, max_len) is not None
