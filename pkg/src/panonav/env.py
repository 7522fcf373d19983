"""Markovian navigation environment over a NavGraph."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .geo import GeoPoint, M_PER_DEG, haversine_m
from .panograph import NavGraph, PanoNode
from .roadnet import DEFAULT_SNAP_TOL_M, RoadNetwork, road_path_exists
from .seqgen import ViewProvider, apply_action, derive_action, node_state
from .tokens import DEFAULT_VOCAB, ZERO_ACTION, Action, OutOfRangeError, TokenVocab

DEFAULT_SNAP_RADIUS_M = 7.5
DEFAULT_MASK_TOL_M = 2.0


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvState:
    node: str
    graph: NavGraph
    rng_seed: int = 0


@dataclass(frozen=True)
class StepResult:
    next_node: str
    realized_action: Action
    requested_action: Action
    valid: bool
    from_node: str = ""

    def to_json(self) -> dict:
        return {"from_node": self.from_node, "next_node": self.next_node, "valid": self.valid,
                "requested_action": self.requested_action.to_json(),
                "realized_action": self.realized_action.to_json()}


class NodeLocator:
    """Radius queries over graph node positions."""

    def __init__(self, g: NavGraph):
        self.ids = g.sorted_ids()
        self.nodes = [g.nodes[k] for k in self.ids]
        self.lat0 = float(np.mean([n.pos.lat for n in self.nodes])) if self.nodes else 0.0
        self.kx = M_PER_DEG * math.cos(math.radians(self.lat0))
        xy = np.array([[n.pos.lon * self.kx, n.pos.lat * M_PER_DEG] for n in self.nodes])
        self.tree = cKDTree(xy if len(xy) else np.zeros((0, 2)))

    def within(self, p: GeoPoint, radius_m: float) -> List[Tuple[float, PanoNode]]:
        idx = self.tree.query_ball_point([p.lon * self.kx, p.lat * M_PER_DEG], radius_m * 1.01 + 0.5)
        out = []
        for i in idx:
            n = self.nodes[i]
            d = haversine_m(p, n.pos)
            if d <= radius_m:
                out.append((d, n))
        return out


_LOCATORS: Dict[int, NodeLocator] = {}


def _locator(g: NavGraph) -> NodeLocator:
    loc = _LOCATORS.get(id(g))
    if loc is None or loc.ids != sorted(g.nodes):
        loc = NodeLocator(g)
        _LOCATORS[id(g)] = loc
    return loc


def _check_action(a: Action) -> None:
    if not 0.0 <= a.distance <= 50.0:
        raise OutOfRangeError(f"distance {a.distance} outside [0, 50]")
    if not 0 <= a.d_month <= 11 or not -30 <= a.d_year <= 30:
        raise OutOfRangeError(f"temporal offset ({a.d_month}, {a.d_year}) outside token ranges")


def step(s: EnvState, a: Action, snap_radius: float = DEFAULT_SNAP_RADIUS_M) -> StepResult:
    """Resolve an action to the graph node it lands on.

    Candidates are the current node and its graph neighbours within ``snap_radius``
    of the dead-reckoned target. An exact date match wins over the nearest date;
    ties break on distance, then node id. No candidate: ``valid=False`` and the
    agent stays put.
    """
    _check_action(a)
    g = s.graph
    cur = g.nodes[s.node]
    target, months = apply_action(cur.pos, cur.months, a)
    reachable = set(g.neighbors(s.node)) | {s.node}
    cands = [(d, n) for d, n in _locator(g).within(target, snap_radius) if n.id in reachable]
    if not cands:
        return StepResult(s.node, ZERO_ACTION, a, False, s.node)
    exact = [(d, n) for d, n in cands if n.months == months]
    if exact:
        _, best = min(exact, key=lambda c: (c[0], c[1].id))
    else:
        _, best = min(cands, key=lambda c: (abs(c[1].months - months), c[0], c[1].id))
    return StepResult(best.id, derive_action(cur, best), a, True, s.node)


def valid_transition(u: str, v: str, g: NavGraph) -> bool:
    """True iff (u, v) is a spatial or temporal edge."""
    for k in (u, v):
        if k not in g:
            raise EnvError(f"unknown node {k!r}")
    return g.has_edge(u, v)


def recheck_spatial_edge(u: str, v: str, g: NavGraph, net: RoadNetwork,
                         max_move_m: float = 50.0, snap_tol: float = DEFAULT_SNAP_TOL_M) -> bool:
    a, b = g.nodes[u].pos, g.nodes[v].pos
    return haversine_m(a, b) <= max_move_m and road_path_exists(a, b, max_move_m, net, snap_tol)


# -- self-masking ----------------------------------------------------------

def _axis_range(center_of, n: int, anchor: float, scale: float, limit: float) -> Set[int]:
    def ok(i: int) -> bool:
        return abs(center_of(i) - anchor) * scale <= limit

    # nearest bin to the anchor, then grow both ways while admissible
    lo_c, hi_c = center_of(0), center_of(n - 1)
    guess = int(round((anchor - lo_c) / (hi_c - lo_c) * (n - 1))) if hi_c != lo_c else 0
    guess = min(max(guess, 0), n - 1)
    near = [i for i in (guess - 1, guess, guess + 1) if 0 <= i < n]
    guess = min(near, key=lambda i: abs(center_of(i) - anchor))
    if not ok(guess):
        return set()
    lo = hi = guess
    while lo > 0 and ok(lo - 1):
        lo -= 1
    while hi < n - 1 and ok(hi + 1):
        hi += 1
    return set(range(lo, hi + 1))


def admissible_coord_tokens(anchor: GeoPoint, move_d: float, tol: float = DEFAULT_MASK_TOL_M,
                            vocab: TokenVocab = DEFAULT_VOCAB) -> Tuple[Set[int], Set[int]]:
    """Latitude and longitude token ids whose bin centres lie within move_d + tol metres
    of the anchor along their own axis.
    """
    if not 0.0 <= move_d <= 50.0:
        raise OutOfRangeError(f"move distance {move_d} outside [0, 50]")
    lat_m, lon_m = vocab["latitude"], vocab["longitude"]
    for m, v in ((lat_m, anchor.lat), (lon_m, anchor.lon)):
        if not m.min - m.precision / 2 <= v <= m.min + (m.size - 1) * m.precision + m.precision / 2:
            raise OutOfRangeError(f"anchor {anchor} outside the {m.name} token range")
    limit = move_d + tol
    lat_scale = M_PER_DEG
    lon_scale = M_PER_DEG * math.cos(math.radians(anchor.lat))
    lats = _axis_range(lat_m.center, lat_m.size, anchor.lat, lat_scale, limit)
    lons = _axis_range(lon_m.center, lon_m.size, anchor.lon, lon_scale, limit)
    return {lat_m.offset + i for i in lats}, {lon_m.offset + i for i in lons}


def mask_logits(logits: np.ndarray, allowed: Iterable[int]) -> np.ndarray:
    """Copy of a vocabulary-sized score vector with every id outside ``allowed`` at -inf."""
    out = np.full_like(np.asarray(logits, dtype=np.float64), -np.inf)
    idx = np.fromiter(allowed, dtype=np.int64)
    out[idx] = np.asarray(logits, dtype=np.float64)[idx]
    return out


# -- policy and sessions -------------------------------------------------

def oracle_policy(s: EnvState, rng: Optional[random.Random] = None) -> Action:
    """Move toward a uniformly drawn neighbour; the zero action on an isolated node."""
    if rng is None:
        rng = random.Random(s.rng_seed)
    nbrs = s.graph.neighbors(s.node)
    if not nbrs:
        return ZERO_ACTION
    v = nbrs[rng.randrange(len(nbrs))]
    return derive_action(s.graph.nodes[s.node], s.graph.nodes[v])


class Session:
    """Single-owner environment session: ``reset``, ``step``, ``observe``."""

    def __init__(self, g: NavGraph, snap_radius: float = DEFAULT_SNAP_RADIUS_M,
                 views: Optional[ViewProvider] = None):
        if not g.nodes:
            raise EnvError("empty graph")
        self.graph = g
        self.snap_radius = snap_radius
        self.views = views
        self.state: Optional[EnvState] = None
        self.rng = random.Random(0)
        self.last_heading = 0.0

    def reset(self, node: Optional[str] = None, seed: int = 0) -> EnvState:
        self.rng = random.Random(seed)
        if node is None:
            node = self.graph.sorted_ids()[self.rng.randrange(len(self.graph))]
        elif node not in self.graph:
            raise EnvError(f"unknown node {node!r}")
        self.state = EnvState(node, self.graph, seed)
        self.last_heading = 0.0
        return self.state

    def step(self, a: Action) -> StepResult:
        if self.state is None:
            raise EnvError("call reset() first")
        res = step(self.state, a, self.snap_radius)
        if res.valid:
            self.state = EnvState(res.next_node, self.graph, self.state.rng_seed)
            if res.realized_action.distance > 0:
                self.last_heading = res.realized_action.heading
        return res

    def policy_action(self) -> Action:
        if self.state is None:
            raise EnvError("call reset() first")
        return oracle_policy(self.state, self.rng)

    def observe(self) -> dict:
        if self.state is None:
            raise EnvError("call reset() first")
        node = self.graph.nodes[self.state.node]
        view = self.views(node, self.last_heading) if self.views is not None else None
        return {"view": view, "state": node_state(node),
                "neighbors": [(v, derive_action(node, self.graph.nodes[v]))
                              for v in self.graph.neighbors(node.id)]}


def run_oracle(g: NavGraph, steps: int, seed: int = 0, start: Optional[str] = None,
               snap_radius: float = DEFAULT_SNAP_RADIUS_M) -> List[StepResult]:
    sess = Session(g, snap_radius)
    sess.reset(start, seed)
    return [sess.step(sess.policy_action()) for _ in range(steps)]


def write_trace(results: Sequence[StepResult], sink: Union[str, Path, IO[str]]) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_trace(results, fh)
        return
    for r in results:
        sink.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
