from __future__ import annotations

import csv
import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panonav import evaluation as ev
from panonav.geo import GeoPoint, destination
from panonav.roadnet import parse_osm

from .oracles import brute_nearest
from .test_roadnet import east_north, grid_doc, osm

O = GeoPoint(37.54, -122.3)


def georef(errors, seed=0):
    rng = random.Random(seed)
    return [ev.GeorefRecord(destination(O, e, rng.uniform(0, 360)), O) for e in errors]


def test_error_cdf_examples():
    assert ev.error_cdf(georef([5, 15, 25]), [10.0]) == [pytest.approx(1 / 3)]
    assert ev.error_cdf(georef([0, 0, 0]), [0.0, 1.0, 50.0]) == [1.0, 1.0, 1.0]
    with pytest.raises(ev.EvalError):
        ev.error_cdf([], [1.0])
    with pytest.raises(ev.EvalError):
        ev.error_cdf(georef([1]), [2.0, 1.0])


def test_error_cdf_planted_exponential():
    rng = np.random.default_rng(0)
    recs = georef(rng.exponential(10.0, 10_000).tolist())
    th = [float(t) for t in range(51)]
    got = ev.error_cdf(recs, th)
    assert max(abs(g - (1 - math.exp(-t / 10))) for g, t in zip(got, th)) < 0.02


@given(st.lists(st.floats(0, 80), min_size=1, max_size=40), st.randoms())
def test_cdf_monotone_and_order_invariant(errs, rnd):
    th = [0.0, 1.0, 5.0, 10.0, 40.0, 100.0]
    recs = georef(errs)
    a = ev.error_cdf(recs, th)
    assert all(x <= y for x, y in zip(a, a[1:]))
    assert a[-1] == 1.0
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert ev.error_cdf(shuffled, th) == a


def test_action_cdf():
    assert ev.action_magnitude_cdf([0.0, 5.0, 10.0], [5.0]) == [pytest.approx(2 / 3)]
    assert ev.action_magnitude_cdf([0.0] * 4, [0.0]) == [1.0]
    rng = np.random.default_rng(1)
    xs = rng.uniform(0, 50, 10_000).tolist()
    th = [float(t) for t in range(51)]
    got = ev.action_magnitude_cdf(xs, th)
    assert max(abs(g - t / 50) for g, t in zip(got, th)) < 0.02


def street():
    return parse_osm(osm({"1": east_north(-500, 0), "2": east_north(500, 0)},
                         [("1", "primary", ["1", "2"])]))


def test_adherence_examples():
    net = street()
    on = [ev.AdherenceRecord(east_north(x, 0), 5.0) for x in range(-100, 100, 10)]
    assert all(r.all_pct == 100.0 for r in ev.road_adherence(on, net))
    off = [ev.AdherenceRecord(east_north(x, 1.75 * (-1) ** k), 2.0) for k, x in enumerate(range(-50, 50, 5))]
    rows = {r.width_m: r for r in ev.road_adherence(off, net, [3.0, 4.0])}
    assert rows[3.0].all_pct == 0.0 and rows[4.0].all_pct == 100.0
    full = {r.width_m: r for r in ev.road_adherence(off, net, [1.0, 2.0], "full")}
    assert full[1.0].all_pct == 0.0 and full[2.0].all_pct == 100.0
    with pytest.raises(ev.EvalError):
        ev.road_adherence([], net)
    with pytest.raises(ev.EvalError):
        ev.adherence_valid(1.0, 2.0, "quarter")


def test_adherence_brute_force_and_reconcile():
    nodes, ways = grid_doc()
    net = parse_osm(osm(nodes, ways))
    rng = random.Random(2)
    recs = [ev.AdherenceRecord(east_north(rng.uniform(-10, 170), rng.uniform(-10, 170)),
                               rng.choice([0.0, 0.0, rng.uniform(0.1, 50)])) for _ in range(1500)]
    widths = list(ev.DEFAULT_WIDTHS_M)
    rows = ev.road_adherence(recs, net, widths)
    assert [r.width_m for r in rows] == [1, 2, 3, 4, 5, 6, 7, 8, 10]
    dists = [brute_nearest(r.resulting_state, net)[0] for r in recs]
    moving = [d for d, r in zip(dists, recs) if r.action_distance > 0]
    static = [d for d, r in zip(dists, recs) if r.action_distance == 0]
    for row in rows:
        assert row.all_pct == 100.0 * sum(d <= row.width_m / 2 for d in dists) / len(recs)
        assert row.nonzero_pct == 100.0 * sum(d <= row.width_m / 2 for d in moving) / len(moving)
        static_pct = sum(d <= row.width_m / 2 for d in static) / len(static)
        assert row.all_pct / 100 == pytest.approx(
            (row.nonzero_pct / 100 * len(moving) + static_pct * len(static)) / len(recs))
    assert all(a.all_pct <= b.all_pct for a, b in zip(rows, rows[1:]))


def test_perplexity_examples():
    zero = [ev.NllRecord(0.0, year=2020)] * 3
    assert ev.perplexity_by_bucket(zero) == {(2020,): (1.0, 3)}
    two = [ev.NllRecord(math.log(2), year=2015), ev.NllRecord(math.log(8), year=2015)]
    assert ev.perplexity_by_bucket(two) == {(2015,): (4.0, 2)}
    mixed = two + [ev.NllRecord(math.log(3), year=2019)]
    table = ev.perplexity_by_bucket(mixed)
    assert table == {(2015,): (4.0, 2), (2019,): (pytest.approx(3.0), 1)}
    assert list(ev.perplexity_by_bucket(list(reversed(mixed)))) == [(2015,), (2019,)]
    by_two = ev.perplexity_by_bucket(mixed + [ev.NllRecord(0.0, year=2015, month=2)], ("year", "month"))
    assert set(by_two) == {(2015, 0), (2015, 2), (2019, 0)}
    with pytest.raises(ev.EvalError):
        ev.perplexity_by_bucket([])
    with pytest.raises(ev.EvalError):
        ev.perplexity_by_bucket(two, "colour")


def write_jsonl(path, rows):
    import json

    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_loaders_and_schema_errors(tmp_path):
    p = write_jsonl(tmp_path / "g.jsonl", [{"pred_lat": 1, "pred_lon": 2, "true_lat": 1, "true_lon": 2}])
    assert ev.load_georef(p)[0].predicted == GeoPoint(1, 2)
    bad = write_jsonl(tmp_path / "b.jsonl", [{"pred_lat": 1, "pred_lon": 2, "true_lat": 1, "true_lon": 2},
                                             {"pred_lat": 1, "pred_lon": "x", "true_lat": 1, "true_lon": 2}])
    with pytest.raises(ev.SchemaError, match="record 2"):
        ev.load_georef(bad)
    with pytest.raises(ev.SchemaError, match="record 1.*outside"):
        ev.load_adherence(write_jsonl(tmp_path / "a.jsonl", [{"lat": 1, "lon": 1, "action_distance": 60}]))
    with pytest.raises(ev.SchemaError, match="record 1"):
        ev.load_nll(write_jsonl(tmp_path / "n.jsonl", [{"nll": -1}]))
    (tmp_path / "m.jsonl").write_text("{not json\n")
    with pytest.raises(ev.SchemaError, match="record 1"):
        ev.load_actions(tmp_path / "m.jsonl")
    assert ev.load_actions(write_jsonl(tmp_path / "d.jsonl", [{"distance": 3.5}])) == [3.5]


def test_csv_writers(tmp_path):
    ev.write_cdf_csv(tmp_path / "c.csv", [0.0, 10.0], {"all": ([0.5, 1.0], 2)})
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows == [["series", "threshold_m", "fraction", "n"], ["all", "0", "0.500000", "2"],
                    ["all", "10", "1.000000", "2"]]
    ev.write_perplexity_csv(tmp_path / "p.csv", ("year",), {(2015,): (4.0, 2)})
    assert open(tmp_path / "p.csv").read() == "year,perplexity,count\n2015,4.000000,2\n"
    r = ev.AdherenceRow(4.0, 50.0, 25.0, 4, 2)
    ev.write_adherence_csv(tmp_path / "a.csv", [r])
    assert open(tmp_path / "a.csv").read().splitlines()[1] == "4,50.00,25.00,4,2"


def test_plots_render(tmp_path):
    from panonav import plotting

    plotting.plot_cdf(tmp_path / "c.png", [0, 1], {"all": ([0.2, 1.0], 5)}, "m", "t")
    plotting.plot_adherence(tmp_path / "a.png", [ev.AdherenceRow(1.0, 10.0, 5.0, 2, 1)])
    plotting.plot_perplexity(tmp_path / "p.png", ("year",), {(2015,): (4.0, 2)})
    for name in ("c", "a", "p"):
        assert (tmp_path / f"{name}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
