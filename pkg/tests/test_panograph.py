from __future__ import annotations

import json
import math

import pytest

from panonav.geo import BBox, GeoPoint, haversine_m
from panonav.panograph import (SPLITS, TEST_SPATIOTEMPORAL, TEST_TEMPORAL, TRAIN, EmptyGraphError,
                               GraphConfig, GraphError, NavGraph, PanoNode, build_graph,
                               load_metadata, save_metadata, spatial_cut_lat, split_graph,
                               train_test_graphs)
from panonav.roadnet import parse_osm, road_path_exists

from .oracles import RoadOracle
from .test_roadnet import east_north, osm

ROAD = osm({"1": east_north(-200, 0), "2": east_north(200, 0), "3": east_north(0, 300),
            "4": east_north(200, 300)},
           [("1", "residential", ["1", "2"]), ("2", "residential", ["3", "4"])])


def node(k, e, n=0.0, month=6, year=2015):
    return PanoNode(k, east_north(e, n), month, year)


def test_spacing_examples():
    net = parse_osm(ROAD)
    g = build_graph([node("a", 0), node("b", 7.5), node("c", 67.5)], net)
    assert g.spatial_edges == [("a", "b")]
    assert g.neighbors("c") == []
    assert haversine_m(g.nodes["b"].pos, g.nodes["c"].pos) == pytest.approx(60.0, abs=1e-6)


def test_temporal_edge_for_revisit():
    net = parse_osm(ROAD)
    g = build_graph([node("a", 0, year=2014), node("b", 2.0, year=2016),
                     node("c", 3.0, year=2016, month=6)], net)
    assert g.is_temporal_edge("a", "b") and g.is_temporal_edge("b", "a")
    assert g.is_temporal_edge("a", "c")
    assert not g.is_temporal_edge("b", "c")  # same month and year
    assert g.is_spatial_edge("b", "c")


def test_no_edge_across_disconnected_roads():
    # two parallel streets 30 m apart that never meet
    net = parse_osm(osm({"1": east_north(-200, 0), "2": east_north(200, 0),
                         "3": east_north(-200, 30), "4": east_north(200, 30)},
                        [("1", "residential", ["1", "2"]), ("2", "residential", ["3", "4"])]))
    g = build_graph([node("a", 0, 0), node("b", 0, 30)], net)
    assert haversine_m(g.nodes["a"].pos, g.nodes["b"].pos) < 50.0
    assert not g.has_edge("a", "b")


def test_drops_are_reported():
    net = parse_osm(ROAD)
    box = BBox(east_north(-150, -50), east_north(150, 350))
    nodes = [node("a", 0), node("a", 5), node("far", 0, 100), node("out", -180),
             PanoNode("old", east_north(10, 0), 1, 1990)]
    g = build_graph(nodes, net, GraphConfig(box))
    assert sorted(g.nodes) == ["a"]
    reasons = dict(g.dropped)
    assert reasons["a"] == "duplicate id"
    assert reasons["out"] == "outside bbox"
    assert reasons["old"].startswith("date")
    assert reasons["far"].startswith("no road within 15 m")
    with pytest.raises(EmptyGraphError):
        build_graph([node("far", 0, 100)], net)


def test_split_rules():
    box = BBox(GeoPoint(37.50, -122.40), GeoPoint(37.60, -122.20))
    mk = lambda k, lat, year: PanoNode(k, GeoPoint(lat, -122.3), 5, year)
    g = NavGraph({n.id: n for n in [mk("t", 37.59, 2023), mk("t2", 37.505, 2024),
                                    mk("s", 37.505, 2015), mk("tr", 37.58, 2015),
                                    mk("edge", 37.51, 2015)]}, [], [], box)
    g = split_graph(g)
    assert spatial_cut_lat(g, 0.10) == pytest.approx(37.51)
    assert g.split == {"t": TEST_TEMPORAL, "t2": TEST_TEMPORAL, "s": TEST_SPATIOTEMPORAL,
                       "tr": TRAIN, "edge": TRAIN}
    with pytest.raises(GraphError):
        split_graph(g, spatial_frac=1.0)


def test_city_edge_invariants(city_graph, city_net):
    g = city_graph
    assert len(g) >= 1000
    for u, v in g.spatial_edges:
        assert haversine_m(g.nodes[u].pos, g.nodes[v].pos) <= 50.0
        assert road_path_exists(g.nodes[u].pos, g.nodes[v].pos, 50.0, city_net)
    for u, v in g.temporal_edges:
        a, b = g.nodes[u], g.nodes[v]
        assert haversine_m(a.pos, b.pos) <= 5.0 and (a.month, a.year) != (b.month, b.year)
    for k in g.nodes:
        for v in g.neighbors(k):
            assert k in g.neighbors(v)


def test_city_edges_match_exhaustive_oracle(city_graph, city_net):
    g = city_graph
    oracle = RoadOracle(city_net)
    ids = g.sorted_ids()
    expect_spatial, expect_temporal = set(), set()
    for i, u in enumerate(ids):
        pu = g.nodes[u].pos
        for v in ids[i + 1:]:
            pv = g.nodes[v].pos
            if abs(pu.lat - pv.lat) > 0.0005:
                continue
            d = haversine_m(pu, pv)
            if d > 50.0:
                continue
            if oracle.path_length(pu, pv) <= 50.0 + 1e-9:
                expect_spatial.add((u, v))
            a, b = g.nodes[u], g.nodes[v]
            if d <= 5.0 and (a.month, a.year) != (b.month, b.year):
                expect_temporal.add((u, v))
    assert set(g.spatial_edges) == expect_spatial
    assert set(g.temporal_edges) == expect_temporal


def test_city_degree_and_split_partition(city_graph):
    g = city_graph
    pts = {k: n.pos for k, n in g.nodes.items()}
    for k in g.sorted_ids()[::7]:
        within = sum(1 for j, p in pts.items() if j != k and haversine_m(pts[k], p) <= 50.0)
        assert len(g.neighbors(k)) <= within
    assert set(g.split) == set(g.nodes)
    assert set(g.split.values()) <= set(SPLITS)
    counts = g.split_counts()
    assert sum(c["nodes"] for c in counts.values()) == len(g)
    assert all(counts[s]["nodes"] > 0 for s in SPLITS)


def test_train_test_graphs_disjoint(city_graph):
    parts = train_test_graphs(city_graph)
    tr, te = parts["train"], parts["test"]
    assert set(tr.nodes).isdisjoint(te.nodes)
    assert len(tr) + len(te) == len(city_graph)
    assert all(city_graph.split[k] == TRAIN for k in tr.nodes)
    for u, v in tr.edges():
        assert u in tr.nodes and v in tr.nodes


def test_graph_serialization_roundtrip(city_graph, tmp_path):
    p = tmp_path / "g.json"
    city_graph.save(p)
    again = NavGraph.load(p)
    assert again.dumps() == city_graph.dumps()
    assert again.split == city_graph.split
    doc = json.loads(p.read_text())
    assert doc["nodes"][0]["id"] < doc["nodes"][1]["id"]


def test_metadata_roundtrip(tmp_path, city):
    p = tmp_path / "m.jsonl"
    save_metadata(city.nodes[:20], p)
    assert load_metadata(p) == city.nodes[:20]
    c = tmp_path / "m.csv"
    c.write_text("id,lat,lon,month,year,image_path\nx,37.55,-122.3,3,2019,a.png\n")
    (n,) = load_metadata(c)
    assert n == PanoNode("x", GeoPoint(37.55, -122.3), 3, 2019, "a.png", 0.0)
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x", "lat": 1}\n')
    with pytest.raises(GraphError, match="record 1"):
        load_metadata(bad)


def test_node_months():
    assert node("a", 0, month=1, year=2000).months == 24000
    assert math.isclose(node("a", 0).pos.lat, 37.54, abs_tol=1e-7)
