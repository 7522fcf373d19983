"""Path permutation over the navigation graph and visual-sentence assembly."""

from __future__ import annotations

import itertools
import random
import zlib
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

from .geo import GeoPoint, destination, haversine_m, initial_bearing_deg
from .panograph import NavGraph, PanoNode
from .tokens import Action, Sample, State

DEFAULT_MAX_PATHS = 32
DEFAULT_MAX_SAMPLES = 13
DEFAULT_LOOKAROUND_PERMS = 4
LOOKAROUND_OFFSETS = (0.0, 90.0, 180.0, 270.0)

# (node, heading in degrees) -> 1024 image token ids
ViewProvider = Callable[[PanoNode, float], Sequence[int]]


class SeqGenError(ValueError):
    pass


class ActionRangeError(SeqGenError):
    pass


@dataclass(frozen=True)
class VisualSentence:
    samples: Tuple[Sample, ...]
    origin: str
    path: Tuple[str, ...]
    kind: str  # "dfs" | "lookaround"
    view_headings: Tuple[float, ...]


def enumerate_paths(g: NavGraph, origin: str, max_paths: int = DEFAULT_MAX_PATHS,
                    max_samples: int = DEFAULT_MAX_SAMPLES) -> List[List[str]]:
    """Simple paths from ``origin`` in DFS preorder, neighbours in ascending id order.

    Every prefix of length >= 2 is emitted as soon as it is reached; enumeration
    stops after ``max_paths`` paths. Paths never exceed ``max_samples`` nodes.
    """
    if origin not in g:
        raise SeqGenError(f"unknown origin node {origin!r}")
    if max_paths < 1 or max_samples < 2:
        raise SeqGenError("need max_paths >= 1 and max_samples >= 2")
    out: List[List[str]] = []
    path = [origin]
    on_path = {origin}
    stack = [iter(g.neighbors(origin))]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            on_path.discard(path.pop())
            continue
        if nxt in on_path:
            continue
        path.append(nxt)
        out.append(list(path))
        if len(out) >= max_paths:
            break
        if len(path) < max_samples:
            on_path.add(nxt)
            stack.append(iter(g.neighbors(nxt)))
        else:
            path.pop()
    return out


def canonical_delta(months: int) -> Tuple[int, int]:
    """Split a signed month offset into (d_year, d_month) with d_month in [0, 11]."""
    d_year, d_month = divmod(months, 12)
    return d_year, d_month


def derive_action(src: PanoNode, dst: PanoNode, max_move_m: float = 50.0) -> Action:
    dist = round(haversine_m(src.pos, dst.pos), 1)
    if dist > max_move_m:
        raise ActionRangeError(f"{src.id} -> {dst.id}: {dist} m exceeds {max_move_m} m")
    heading = 0.0 if dist == 0.0 else round(initial_bearing_deg(src.pos, dst.pos), 1) % 360.0
    d_year, d_month = canonical_delta(dst.months - src.months)
    if not -30 <= d_year <= 30:
        raise ActionRangeError(f"{src.id} -> {dst.id}: year offset {d_year} outside [-30, 30]")
    return Action(dist, heading, d_month, d_year)


def apply_action(pos: GeoPoint, months: int, a: Action) -> Tuple[GeoPoint, int]:
    """Dead-reckon one action from (position, absolute month index)."""
    return destination(pos, a.distance, a.heading), months + a.months


def node_state(n: PanoNode) -> State:
    return State(n.pos.lat, n.pos.lon, n.month, n.year)


def _rng_for(node_id: str, seed: int) -> random.Random:
    return random.Random((seed << 32) ^ zlib.crc32(node_id.encode("utf-8")))


def lookaround_orders(node: PanoNode, perms: Optional[int] = DEFAULT_LOOKAROUND_PERMS,
                      seed: int = 0) -> List[Tuple[float, ...]]:
    """Absolute view headings for each emitted ordering; ``perms=None`` means all 24."""
    views = tuple(round((node.base_heading + d) % 360.0, 1) % 360.0 for d in LOOKAROUND_OFFSETS)
    orders = list(itertools.permutations(views))
    if perms is None or perms >= len(orders):
        return orders
    if perms < 1:
        raise SeqGenError("lookaround perms must be >= 1")
    picked = sorted(_rng_for(node.id, seed).sample(range(len(orders)), perms))
    return [orders[i] for i in picked]


def gen_lookaround(node: PanoNode, views: Optional[ViewProvider] = None,
                   perms: Optional[int] = DEFAULT_LOOKAROUND_PERMS,
                   seed: int = 0) -> List[VisualSentence]:
    if views is not None and not node.image_ref:
        raise SeqGenError(f"node {node.id} has no image")
    state = node_state(node)
    out = []
    for order in lookaround_orders(node, perms, seed):
        samples = []
        for k, h in enumerate(order):
            nxt = order[k + 1] if k + 1 < len(order) else h
            toks = tuple(views(node, h)) if views is not None else ()
            samples.append(Sample(toks, state, Action(0.0, nxt, 0, 0)))
        out.append(VisualSentence(tuple(samples), node.id, (node.id,), "lookaround", order))
    return out


def path_actions(path: Sequence[str], g: NavGraph) -> Tuple[List[Action], List[float]]:
    """Per-sample actions and view headings for a node path.

    The last sample carries a zero move that repeats the previous heading.
    """
    actions = []
    for u, v in zip(path, path[1:]):
        if not g.has_edge(u, v):
            raise SeqGenError(f"{u} -> {v} is not a graph edge")
        actions.append(derive_action(g.nodes[u], g.nodes[v]))
    last = actions[-1].heading if actions else 0.0
    actions.append(Action(0.0, last, 0, 0))
    return actions, [a.heading for a in actions]


def assemble_sentence(path: Sequence[str], g: NavGraph,
                      views: Optional[ViewProvider] = None) -> VisualSentence:
    actions, headings = path_actions(path, g)
    samples = []
    for nid, a, h in zip(path, actions, headings):
        node = g.nodes[nid]
        try:
            toks = tuple(views(node, h)) if views is not None else ()
        except Exception as exc:
            raise SeqGenError(f"view for {nid} at {h} deg on path {list(path)} failed: {exc}") from exc
        samples.append(Sample(toks, node_state(node), a))
    return VisualSentence(tuple(samples), path[0], tuple(path), "dfs", tuple(headings))


def replay_errors(sentence: VisualSentence) -> Iterator[Tuple[float, float, int]]:
    """(|dlat|, |dlon|, month error) between each dead-reckoned step and the recorded next state."""
    ss = sentence.samples
    for a, b in zip(ss, ss[1:]):
        pos, months = apply_action(GeoPoint(a.state.lat, a.state.lon), a.state.months, a.action)
        yield abs(pos.lat - b.state.lat), abs(pos.lon - b.state.lon), months - b.state.months


@dataclass(frozen=True)
class GenConfig:
    max_paths: int = DEFAULT_MAX_PATHS
    max_samples: int = DEFAULT_MAX_SAMPLES
    lookaround_perms: Optional[int] = DEFAULT_LOOKAROUND_PERMS
    seed: int = 0
    shard: Tuple[int, int] = (0, 1)


def iter_sentences(g: NavGraph, cfg: GenConfig = GenConfig(),
                   views: Optional[ViewProvider] = None) -> Iterator[VisualSentence]:
    """All sentences for the origins owned by ``cfg.shard``: per origin, DFS paths then look-arounds."""
    i, n = cfg.shard
    if not 0 <= i < n:
        raise SeqGenError(f"bad shard {i}/{n}")
    for k, origin in enumerate(g.sorted_ids()):
        if k % n != i:
            continue
        for path in enumerate_paths(g, origin, cfg.max_paths, cfg.max_samples):
            yield assemble_sentence(path, g, views)
        yield from gen_lookaround(g.nodes[origin], views, cfg.lookaround_perms, cfg.seed)


def projection_plan(sentences: Sequence[VisualSentence]) -> set:
    """Unique (node id, heading) views needed to render ``sentences``."""
    plan = set()
    for s in sentences:
        for nid, h in zip(s.path if s.kind == "dfs" else s.path * len(s.view_headings),
                          s.view_headings):
            plan.add((nid, h))
    return plan
