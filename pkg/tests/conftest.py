from __future__ import annotations

import pytest

from panonav.panograph import GraphConfig, build_graph, split_graph
from panonav.roadnet import parse_osm
from panonav.synth import CityConfig, make_city


def build_city(cfg: CityConfig = CityConfig()):
    city = make_city(cfg)
    net = parse_osm(city.osm_xml, city.bbox)
    g = split_graph(build_graph(city.nodes, net, GraphConfig(city.bbox)))
    return city, net, g


@pytest.fixture(scope="session")
def city_bundle():
    """The default synthetic city (about 1,100 panoramas) with its road network and graph."""
    return build_city()


@pytest.fixture(scope="session")
def city(city_bundle):
    return city_bundle[0]


@pytest.fixture(scope="session")
def city_net(city_bundle):
    return city_bundle[1]


@pytest.fixture(scope="session")
def city_graph(city_bundle):
    return city_bundle[2]


@pytest.fixture(scope="session")
def small_bundle():
    return build_city(CityConfig(blocks_x=1, blocks_y=1, block_m=60.0, seed=3))


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0].strip("#"))):
            terminalreporter.write_line(line)
