"""Evaluation aggregates: georeferencing error CDF, road adherence, perplexity buckets,
action-magnitude CDF. Every table is written as CSV for plotting.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import (Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union)

from .geo import GeoPoint, haversine_m
from .roadnet import RoadNetwork, nearest_centerline
from .tokens import Action

CSV_SCHEMA_VERSION = 1
DEFAULT_THRESHOLDS_M = tuple(float(t) for t in range(0, 51))
DEFAULT_WIDTHS_M = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0)
BUCKET_FIELDS = ("year", "month", "action_distance", "d_month", "d_year")


class EvalError(ValueError):
    pass


class SchemaError(EvalError):
    pass


@dataclass(frozen=True)
class GeorefRecord:
    predicted: GeoPoint
    truth: GeoPoint
    year: int = 0
    split: str = ""


@dataclass(frozen=True)
class AdherenceRecord:
    resulting_state: GeoPoint
    action_distance: float


@dataclass(frozen=True)
class NllRecord:
    nll: float
    year: int = 0
    month: int = 0
    action_distance: float = 0.0
    d_month: int = 0
    d_year: int = 0


def _nonempty(xs: Sequence, what: str) -> None:
    if len(xs) == 0:
        raise EvalError(f"{what}: no records")


def _fraction_at(values: Sequence[float], thresholds: Sequence[float]) -> List[float]:
    if list(thresholds) != sorted(thresholds):
        raise EvalError("thresholds must be sorted ascending")
    xs = sorted(values)
    n = len(xs)
    out = []
    k = 0
    for t in thresholds:
        while k < n and xs[k] <= t:
            k += 1
        out.append(k / n)
    return out


def error_cdf(records: Sequence[GeorefRecord], thresholds: Sequence[float]) -> List[float]:
    """Fraction of predictions whose great-circle error is <= each threshold."""
    _nonempty(records, "error_cdf")
    return _fraction_at([haversine_m(r.predicted, r.truth) for r in records], thresholds)


def action_magnitude_cdf(actions: Sequence[Union[Action, float]],
                         thresholds: Sequence[float]) -> List[float]:
    _nonempty(actions, "action_magnitude_cdf")
    return _fraction_at([a.distance if isinstance(a, Action) else float(a) for a in actions],
                        thresholds)


@dataclass(frozen=True)
class AdherenceRow:
    width_m: float
    all_pct: float
    nonzero_pct: float
    n_all: int
    n_nonzero: int


def adherence_valid(distance_m: float, width_m: float, convention: str = "half") -> bool:
    """Whether a state ``distance_m`` from the centreline lies inside a lane of ``width_m``.

    ``half``: the lane is centred on the centreline (valid iff d <= w/2);
    ``full``: valid iff d <= w.
    """
    if convention == "half":
        return distance_m <= width_m / 2.0
    if convention == "full":
        return distance_m <= width_m
    raise EvalError(f"unknown width convention {convention!r}")


def centerline_distances(records: Sequence[AdherenceRecord], net: RoadNetwork) -> List[float]:
    return [nearest_centerline(r.resulting_state, net)[0] for r in records]


def road_adherence(records: Sequence[AdherenceRecord], net: RoadNetwork,
                   widths: Sequence[float] = DEFAULT_WIDTHS_M,
                   convention: str = "half",
                   distances: Optional[Sequence[float]] = None) -> List[AdherenceRow]:
    """Valid-percentage per lane width, over all actions and over nonzero moves."""
    _nonempty(records, "road_adherence")
    if distances is None:
        distances = centerline_distances(records, net)
    moving = [d for d, r in zip(distances, records) if r.action_distance > 0]
    rows = []
    for w in widths:
        ok_all = sum(adherence_valid(d, w, convention) for d in distances)
        ok_mov = sum(adherence_valid(d, w, convention) for d in moving)
        rows.append(AdherenceRow(
            float(w), 100.0 * ok_all / len(distances),
            100.0 * ok_mov / len(moving) if moving else float("nan"),
            len(distances), len(moving)))
    return rows


BucketKey = Union[str, Sequence[str], Callable[[NllRecord], Tuple]]


def _key_fn(key: BucketKey) -> Tuple[Tuple[str, ...], Callable[[NllRecord], Tuple]]:
    if callable(key):
        return ("bucket",), lambda r: (key(r),)  # type: ignore[operator]
    names = (key,) if isinstance(key, str) else tuple(key)
    for k in names:
        if k not in BUCKET_FIELDS:
            raise EvalError(f"unknown bucket field {k!r}; choose from {BUCKET_FIELDS}")
    return names, lambda r: tuple(getattr(r, k) for k in names)


def perplexity_by_bucket(records: Sequence[NllRecord],
                         key: BucketKey = "year") -> Dict[Tuple, Tuple[float, int]]:
    """bucket -> (exp(mean nll), count); buckets are returned in sorted order."""
    _nonempty(records, "perplexity_by_bucket")
    _, fn = _key_fn(key)
    groups: Dict[Tuple, List[float]] = defaultdict(list)
    for r in records:
        if r.nll < 0 or not math.isfinite(r.nll):
            raise EvalError(f"invalid nll {r.nll}")
        groups[fn(r)].append(r.nll)
    return {k: (math.exp(math.fsum(v) / len(v)), len(v)) for k, v in sorted(groups.items())}


# -- record IO ---------------------------------------------------------------

def _read_jsonl(path: Union[str, Path]) -> List[Tuple[int, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"record {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise SchemaError(f"record {lineno}: expected a JSON object")
            out.append((lineno, obj))
    return out


def _num(obj: dict, key: str, lineno: int, cast=float):
    try:
        v = obj[key]
    except KeyError:
        raise SchemaError(f"record {lineno}: missing field {key!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"record {lineno}: field {key!r} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise SchemaError(f"record {lineno}: field {key!r} is not finite")
    return cast(v)


def load_georef(path: Union[str, Path]) -> List[GeorefRecord]:
    """``{"pred_lat", "pred_lon", "true_lat", "true_lon", "year"?, "split"?}`` per line."""
    return [GeorefRecord(GeoPoint(_num(o, "pred_lat", n), _num(o, "pred_lon", n)),
                         GeoPoint(_num(o, "true_lat", n), _num(o, "true_lon", n)),
                         int(o.get("year", 0)), str(o.get("split", "")))
            for n, o in _read_jsonl(path)]


def load_adherence(path: Union[str, Path]) -> List[AdherenceRecord]:
    """``{"lat", "lon", "action_distance"}`` per line."""
    out = []
    for n, o in _read_jsonl(path):
        d = _num(o, "action_distance", n)
        if not 0.0 <= d <= 50.0:
            raise SchemaError(f"record {n}: action_distance {d} outside [0, 50]")
        out.append(AdherenceRecord(GeoPoint(_num(o, "lat", n), _num(o, "lon", n)), d))
    return out


def load_nll(path: Union[str, Path]) -> List[NllRecord]:
    """``{"nll", "year", "month", "action_distance", "d_month", "d_year"}`` per line."""
    out = []
    for n, o in _read_jsonl(path):
        nll = _num(o, "nll", n)
        if nll < 0:
            raise SchemaError(f"record {n}: nll must be >= 0")
        out.append(NllRecord(nll, int(o.get("year", 0)), int(o.get("month", 0)),
                             float(o.get("action_distance", 0.0)),
                             int(o.get("d_month", 0)), int(o.get("d_year", 0))))
    return out


def load_actions(path: Union[str, Path]) -> List[float]:
    """``{"distance"}`` (or ``{"action_distance"}``) per line."""
    out = []
    for n, o in _read_jsonl(path):
        out.append(_num(o, "distance" if "distance" in o else "action_distance", n))
    return out


# -- CSV writers ---------------------------------------------------------------

def _write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def write_cdf_csv(path: Union[str, Path], thresholds: Sequence[float],
                  series: Dict[str, Tuple[List[float], int]]) -> None:
    """series name -> (fractions, n); columns: series,threshold_m,fraction,n."""
    _write_csv(path, ("series", "threshold_m", "fraction", "n"),
               ((name, f"{t:g}", f"{f:.6f}", n)
                for name, (fr, n) in series.items() for t, f in zip(thresholds, fr)))


def write_adherence_csv(path: Union[str, Path], rows: Sequence[AdherenceRow]) -> None:
    _write_csv(path, ("width_m", "all_actions_valid_pct", "nonzero_move_valid_pct",
                      "n_all", "n_nonzero"),
               ((f"{r.width_m:g}", f"{r.all_pct:.2f}", f"{r.nonzero_pct:.2f}", r.n_all, r.n_nonzero)
                for r in rows))


def write_perplexity_csv(path: Union[str, Path], names: Sequence[str],
                         table: Dict[Tuple, Tuple[float, int]]) -> None:
    _write_csv(path, tuple(names) + ("perplexity", "count"),
               (tuple(k) + (f"{p:.6f}", c) for k, (p, c) in table.items()))


def bucket_names(key: BucketKey) -> Tuple[str, ...]:
    return _key_fn(key)[0]
