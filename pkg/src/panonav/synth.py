"""Synthetic grid city: OSM road extract, panorama metadata and procedural panoramas.

Used for fixtures and end-to-end dry runs; no real imagery involved.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union
from xml.sax.saxutils import quoteattr

import numpy as np
from PIL import Image

from .geo import BBox, GeoPoint, M_PER_DEG
from .panograph import PanoNode, save_metadata


@dataclass(frozen=True)
class CityConfig:
    origin: GeoPoint = GeoPoint(37.5300, -122.3200)
    blocks_x: int = 4
    blocks_y: int = 4
    block_m: float = 150.0
    margin_m: float = 20.0
    spacing_m: float = 7.5
    jitter_m: float = 0.4
    revisit_frac: float = 0.3
    holdout_revisit_frac: float = 0.25
    seed: int = 7


@dataclass
class City:
    bbox: BBox
    osm_xml: str
    nodes: List[PanoNode]


def _offset(origin: GeoPoint, east_m: float, north_m: float) -> GeoPoint:
    kx = M_PER_DEG * math.cos(math.radians(origin.lat))
    return GeoPoint(origin.lat + north_m / M_PER_DEG, origin.lon + east_m / kx)


def make_city(cfg: CityConfig = CityConfig()) -> City:
    rng = random.Random(cfg.seed)
    w = cfg.blocks_x * cfg.block_m + 2 * cfg.margin_m
    h = cfg.blocks_y * cfg.block_m + 2 * cfg.margin_m
    bbox = BBox(cfg.origin, _offset(cfg.origin, w, h))
    xs = [cfg.margin_m + i * cfg.block_m for i in range(cfg.blocks_x + 1)]
    ys = [cfg.margin_m + j * cfg.block_m for j in range(cfg.blocks_y + 1)]

    # OSM: one node per intersection plus the street ends at the bbox edge
    osm_nodes = {}
    ways = []

    def nid(east: float, north: float) -> str:
        key = f"{round(east, 3)}:{round(north, 3)}"
        if key not in osm_nodes:
            osm_nodes[key] = (str(len(osm_nodes) + 1), _offset(cfg.origin, east, north))
        return osm_nodes[key][0]

    for j, y in enumerate(ys):
        ways.append((f"h{j}", "residential", [nid(0.0, y)] + [nid(x, y) for x in xs] + [nid(w, y)]))
    for i, x in enumerate(xs):
        ways.append((f"v{i}", "residential", [nid(x, 0.0)] + [nid(x, y) for y in ys] + [nid(x, h)]))
    # a footpath across the first block, which must be ignored
    ways.append(("f0", "footway", [nid(xs[0], ys[0]), nid(xs[1], ys[1])]))

    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6">']
    for _key, (ident, p) in sorted(osm_nodes.items(), key=lambda kv: int(kv[1][0])):
        lines.append(f'  <node id="{ident}" lat="{p.lat:.8f}" lon="{p.lon:.8f}"/>')
    for k, (wid, hw, refs) in enumerate(ways):
        lines.append(f'  <way id="{k + 1}">')
        lines.extend(f'    <nd ref="{r}"/>' for r in refs)
        lines.append(f'    <tag k="highway" v={quoteattr(hw)}/>')
        lines.append(f'    <tag k="name" v={quoteattr(wid)}/>')
        lines.append("  </way>")
    lines.append("</osm>")

    # panoramas: one capture run per street, spaced along the centreline
    raw: List[Tuple[float, float, float, int, int]] = []
    for j, y in enumerate(ys):
        year, month = rng.randint(2008, 2022), rng.randint(1, 12)
        n = int(w // cfg.spacing_m)
        for k in range(n + 1):
            e = min(k * cfg.spacing_m + rng.uniform(-cfg.jitter_m, cfg.jitter_m), w - 0.5)
            raw.append((max(e, 0.5), y + rng.uniform(-cfg.jitter_m, cfg.jitter_m), 90.0, month, year))
    for i, x in enumerate(xs):
        year, month = rng.randint(2008, 2022), rng.randint(1, 12)
        n = int(h // cfg.spacing_m)
        for k in range(n + 1):
            nn = min(k * cfg.spacing_m + rng.uniform(-cfg.jitter_m, cfg.jitter_m), h - 0.5)
            if any(abs(nn - y) < 3.0 for y in ys):
                continue  # already covered by the east-west run
            raw.append((x + rng.uniform(-cfg.jitter_m, cfg.jitter_m), max(nn, 0.5), 0.0, month, year))
    # revisits: a second capture near an existing one at another date
    extra = []
    for e, nrt, hd, month, year in raw:
        if rng.random() < cfg.revisit_frac:
            if rng.random() < cfg.holdout_revisit_frac:
                y2 = rng.choice((2023, 2024))
            else:
                y2 = rng.randint(2008, 2022)
            m2 = rng.randint(1, 12)
            if (m2, y2) == (month, year):
                m2 = month % 12 + 1
            ang = rng.uniform(0, 2 * math.pi)
            r = rng.uniform(0.5, 2.0)
            extra.append((e + r * math.cos(ang), nrt + r * math.sin(ang), hd, m2, y2))
    raw.extend(extra)
    nodes = []
    for k, (e, nrt, hd, month, year) in enumerate(raw):
        heading = (hd + rng.choice((0.0, 180.0)) + rng.uniform(-3.0, 3.0)) % 360.0
        nodes.append(PanoNode(f"p{k:05d}", _offset(cfg.origin, e, nrt), month, year,
                              f"panos/p{k:05d}.png", round(heading, 2)))
    return City(bbox, "\n".join(lines) + "\n", nodes)


def render_panorama(node: PanoNode, size: Tuple[int, int] = (256, 128)) -> np.ndarray:
    """Smooth procedural 2:1 panorama; features are fixed in world azimuth so that
    the base heading rotates the image content."""
    w, h = size
    if w != 2 * h:
        raise ValueError("panorama size must be 2:1")
    seed = int(node.id.lstrip("p") or 0) if node.id.lstrip("p").isdigit() else hash(node.id) & 0xFFFF
    az = np.radians((np.arange(w) / w - 0.5) * 360.0 + node.base_heading)
    el = np.radians((0.5 - (np.arange(h) + 0.5) / h) * 180.0)
    AZ, EL = np.meshgrid(az, el)
    phase = (seed % 97) / 97.0 * 2 * np.pi
    r = 128 + 90 * np.sin(AZ * 3 + phase) * np.cos(EL)
    g = 128 + 90 * np.cos(AZ * 2 - EL * 2 + node.year * 0.3)
    b = 128 + 90 * np.sin(EL * 3 + node.month * 0.5)
    return np.clip(np.stack([r, g, b], axis=-1), 0, 255).astype(np.uint8)


def write_city(outdir: Union[str, Path], cfg: CityConfig = CityConfig(),
               pano_size: Tuple[int, int] = (256, 128), images: bool = True) -> City:
    """Write ``roads.osm``, ``metadata.jsonl``, ``bbox.txt`` and ``panos/*.png``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    city = make_city(cfg)
    (out / "roads.osm").write_text(city.osm_xml, encoding="utf-8")
    (out / "bbox.txt").write_text(",".join(f"{v:.8f}" for v in city.bbox.to_list()) + "\n")
    save_metadata(city.nodes, out / "metadata.jsonl")
    if images:
        (out / "panos").mkdir(exist_ok=True)
        for n in city.nodes:
            Image.fromarray(render_panorama(n, pano_size)).save(out / n.image_ref)
    return city
