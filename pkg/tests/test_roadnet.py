from __future__ import annotations

import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panonav.geo import BBox, GeoPoint, destination, haversine_m, point_to_segment_m
from panonav.roadnet import (EmptyNetworkError, MalformedDocumentError, RoadNetError, RoadNetwork,
                             load_network, nearest_centerline, parse_osm, road_path_exists,
                             road_path_length)

O = GeoPoint(37.54, -122.30)


def osm(nodes, ways):
    """nodes: {id: GeoPoint}; ways: [(way id, highway, [node ids])]."""
    out = ['<?xml version="1.0"?>', "<osm>"]
    out += [f'<node id="{k}" lat="{p.lat!r}" lon="{p.lon!r}"/>' for k, p in nodes.items()]
    for wid, hw, refs in ways:
        out.append(f'<way id="{wid}">' + "".join(f'<nd ref="{r}"/>' for r in refs)
                   + f'<tag k="highway" v="{hw}"/></way>')
    out.append("</osm>")
    return "\n".join(out)


def east_north(e, n, origin=O):
    return destination(destination(origin, e, 90.0), n, 0.0)


def test_single_way_and_footway():
    nodes = {"1": east_north(0, 0), "2": east_north(30, 0), "3": east_north(60, 0),
             "4": east_north(0, 20)}
    doc = osm(nodes, [("10", "residential", ["1", "2", "3"])])
    assert len(parse_osm(doc)) == 2
    doc = osm(nodes, [("10", "residential", ["1", "2", "3"]), ("11", "footway", ["1", "4"])])
    assert len(parse_osm(doc)) == 2


def grid_doc(n=5, spacing=40.0):
    nodes, ways = {}, []
    for i in range(n):
        for j in range(n):
            nodes[f"{i}_{j}"] = east_north(i * spacing, j * spacing)
    for j in range(n):
        ways.append((f"h{j}", "tertiary", [f"{i}_{j}" for i in range(n)]))
    for i in range(n):
        ways.append((f"v{i}", "residential", [f"{i}_{j}" for j in range(n)]))
    return nodes, ways


def test_ten_way_grid_count():
    # 5 east-west + 5 north-south ways, 5 nodes each: 10 ways * 4 segments by hand
    nodes, ways = grid_doc()
    net = parse_osm(osm(nodes, ways))
    assert len(net) == 40
    # every interior intersection joins 4 segments, corners 2, edges 3
    degrees = sorted(len(v) for v in net.junctions.values())
    assert degrees == [2] * 4 + [3] * 12 + [4] * 9


def test_clipping_to_bbox():
    nodes = {"1": east_north(-50, 0), "2": east_north(50, 0), "3": east_north(500, 500),
             "4": east_north(600, 500)}
    box = BBox(east_north(0, -10), east_north(100, 10))
    net = parse_osm(osm(nodes, [("1", "primary", ["1", "2"]), ("2", "primary", ["3", "4"])]), box)
    assert len(net) == 1
    s = net.segments[0]
    assert haversine_m(s.a, s.b) == pytest.approx(50.0, abs=0.05)
    assert box.contains(s.a) and box.contains(s.b)


def test_empty_and_malformed():
    nodes = {"1": east_north(0, 0), "2": east_north(30, 0)}
    with pytest.raises(EmptyNetworkError):
        parse_osm(osm(nodes, [("1", "footway", ["1", "2"])]))
    with pytest.raises(MalformedDocumentError, match="line 3"):
        parse_osm('<?xml version="1.0"?>\n<osm>\n<node id="1" lat=37.5/>\n</osm>')


def test_geojson_matches_xml():
    nodes, ways = grid_doc(3)
    feats = [{"type": "Feature", "properties": {"highway": hw, "id": wid},
              "geometry": {"type": "LineString",
                           "coordinates": [[nodes[r].lon, nodes[r].lat] for r in refs]}}
             for wid, hw, refs in ways]
    gj = parse_osm(json.dumps({"type": "FeatureCollection", "features": feats}))
    xml = parse_osm(osm(nodes, ways))
    assert len(gj) == len(xml) == 12
    assert sorted(len(v) for v in gj.junctions.values()) == sorted(len(v) for v in xml.junctions.values())


def test_segment_json_roundtrip(tmp_path):
    nodes, ways = grid_doc(3)
    net = parse_osm(osm(nodes, ways))
    again = RoadNetwork.from_json(json.loads(net.dumps()))
    assert again.dumps() == net.dumps()
    p = tmp_path / "roads.osm"
    p.write_text(osm(nodes, ways))
    assert load_network(p).dumps() == net.dumps()


def brute_nearest(p, net):
    return min((point_to_segment_m(p, (s.a, s.b)), s.id) for s in net.segments)


def test_nearest_examples():
    nodes, ways = grid_doc()
    net = parse_osm(osm(nodes, ways))
    s = net.segments[7]
    mid = GeoPoint((s.a.lat + s.b.lat) / 2, (s.a.lon + s.b.lon) / 2)
    d, sid = nearest_centerline(mid, net)
    assert d == pytest.approx(0.0, abs=1e-6)
    assert sid == brute_nearest(mid, net)[1]


def test_nearest_tie_breaks_on_lowest_id():
    nodes = {"1": east_north(0, 0), "2": east_north(100, 0), "3": east_north(0, 20),
             "4": east_north(100, 20)}
    net = parse_osm(osm(nodes, [("1", "residential", ["3", "4"]), ("2", "residential", ["1", "2"])]))
    mid = GeoPoint((nodes["1"].lat + nodes["3"].lat) / 2, east_north(50, 0).lon)
    d0 = point_to_segment_m(mid, (net.segments[0].a, net.segments[0].b))
    d1 = point_to_segment_m(mid, (net.segments[1].a, net.segments[1].b))
    if d0 == d1:
        assert nearest_centerline(mid, net)[1] == 0
    assert nearest_centerline(mid, net) == brute_nearest(mid, net)


def test_nearest_matches_scan_on_city(city, city_net):
    rng = random.Random(11)
    b = city.bbox
    for _ in range(600):
        p = GeoPoint(rng.uniform(b.min.lat - 0.001, b.max.lat + 0.001),
                     rng.uniform(b.min.lon - 0.001, b.max.lon + 0.001))
        d, sid = nearest_centerline(p, city_net)
        bd, bsid = brute_nearest(p, city_net)
        assert sid == bsid
        assert d == pytest.approx(bd, rel=1e-9, abs=1e-12)


def perpendicular_net():
    # way A runs west-east into junction J, way B runs south-north out of J
    nodes = {"w": east_north(-100, 0), "j": east_north(0, 0), "n": east_north(0, 100)}
    return parse_osm(osm(nodes, [("A", "secondary", ["w", "j"]), ("B", "secondary", ["j", "n"])]))


def test_path_42m_across_junction():
    net = perpendicular_net()
    a, b = east_north(-20, 0), east_north(0, 22)
    assert road_path_length(a, b, net) == pytest.approx(42.0, abs=0.01)
    assert road_path_exists(a, b, 50.0, net)
    assert not road_path_exists(a, b, 40.0, net)
    assert haversine_m(a, b) < 40.0  # straight line alone would pass; the road walk does not


def test_path_same_segment_and_disconnected():
    net = perpendicular_net()
    assert road_path_exists(east_north(-50, 0), east_north(-40, 0), 50.0, net)
    nodes = {"1": east_north(0, 0), "2": east_north(30, 0), "3": east_north(0, 300),
             "4": east_north(30, 300)}
    net2 = parse_osm(osm(nodes, [("1", "primary", ["1", "2"]), ("2", "primary", ["3", "4"])]))
    assert not road_path_exists(east_north(10, 0), east_north(10, 300), 1000.0, net2)
    assert not road_path_exists(east_north(10, 100), east_north(10, 0), 1000.0, net2)  # unsnappable
    with pytest.raises(RoadNetError):
        road_path_exists(east_north(10, 0), east_north(20, 0), 0.0, net2)


@settings(max_examples=150, deadline=None)
@given(st.floats(-100, 0), st.floats(-5, 5), st.floats(0, 100), st.floats(-5, 5), st.floats(5, 150))
def test_path_symmetric(e1, n1, n2, e2, max_len):
    net = perpendicular_net()
    a, b = east_north(e1, n1), east_north(e2, n2)
    assert road_path_exists(a, b, max_len, net) == road_path_exists(b, a, max_len, net)


def test_path_length_is_manhattan_on_grid():
    nodes, ways = grid_doc()
    net = parse_osm(osm(nodes, ways))
    a, b = east_north(10, 0), east_north(40, 25)
    # 30 m east to the junction at (40, 0), then 25 m north
    assert road_path_length(a, b, net) == pytest.approx(55.0, abs=0.02)
    assert not math.isinf(road_path_length(a, b, net))
