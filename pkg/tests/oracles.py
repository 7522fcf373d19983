"""Brute-force reference implementations used only by the tests."""

from __future__ import annotations

import itertools
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from panonav.geo import GeoPoint, point_to_segment_m, project_onto_segment


def brute_nearest(p: GeoPoint, net) -> Tuple[float, int]:
    return min((point_to_segment_m(p, (s.a, s.b)), s.id) for s in net.segments)


class RoadOracle:
    """All-pairs junction distances via scipy, then closed-form snap-point offsets."""

    def __init__(self, net):
        self.net = net
        keys = sorted({k for s in net.segments for k in (s.ka, s.kb)})
        self.idx = {k: i for i, k in enumerate(keys)}
        n = len(keys)
        w = np.full((n, n), np.inf)
        for s in net.segments:
            i, j = self.idx[s.ka], self.idx[s.kb]
            w[i, j] = w[j, i] = min(w[i, j], s.length_m)
        rows, cols = np.nonzero(np.isfinite(w))
        self.dist = shortest_path(csr_matrix((w[rows, cols], (rows, cols)), shape=(n, n)),
                                  method="D", directed=False)

    def snap(self, p: GeoPoint, tol: float) -> Optional[Tuple[int, float]]:
        d, sid = brute_nearest(p, self.net)
        if d > tol:
            return None
        s = self.net.segments[sid]
        return sid, project_onto_segment(p, s.a, s.b)[1]

    def path_length(self, a: GeoPoint, b: GeoPoint, tol: float = 15.0) -> float:
        sa, sb = self.snap(a, tol), self.snap(b, tol)
        if sa is None or sb is None:
            return float("inf")
        A, B = self.net.segments[sa[0]], self.net.segments[sb[0]]
        best = abs(sa[1] - sb[1]) * A.length_m if A.id == B.id else float("inf")
        for ka, oa in ((A.ka, sa[1] * A.length_m), (A.kb, (1 - sa[1]) * A.length_m)):
            for kb, ob in ((B.ka, sb[1] * B.length_m), (B.kb, (1 - sb[1]) * B.length_m)):
                best = min(best, oa + self.dist[self.idx[ka], self.idx[kb]] + ob)
        return best


def all_simple_paths(adj: Dict[str, List[str]], origin: str, max_len: int) -> List[Tuple[str, ...]]:
    """Every simple path of 2..max_len nodes from origin, by exhaustive permutation."""
    others = [k for k in adj if k != origin]
    out = []
    for n in range(1, min(max_len, len(adj))):
        for rest in itertools.permutations(others, n):
            path = (origin,) + rest
            if all(b in adj[a] for a, b in zip(path, path[1:])):
                out.append(path)
    return out
