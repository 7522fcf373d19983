"""Spherical-earth geodesy helpers shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

EARTH_RADIUS_M = 6371000.0
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


class GeoError(ValueError):
    pass


class GeoPoint(NamedTuple):
    lat: float
    lon: float

    def validate(self) -> "GeoPoint":
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise GeoError(f"non-finite coordinate {self}")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon < 180.0:
            raise GeoError(f"coordinate out of range {self}")
        return self


@dataclass(frozen=True)
class BBox:
    min: GeoPoint
    max: GeoPoint

    def __post_init__(self) -> None:
        if self.min.lat > self.max.lat or self.min.lon > self.max.lon:
            raise GeoError(f"inverted bbox {self.min} .. {self.max}")

    @classmethod
    def from_str(cls, text: str) -> "BBox":
        """Parse ``min_lat,min_lon,max_lat,max_lon``."""
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 4:
            raise GeoError(f"bbox needs 4 numbers, got {text!r}")
        return cls(GeoPoint(parts[0], parts[1]), GeoPoint(parts[2], parts[3]))

    def to_list(self) -> list:
        return [self.min.lat, self.min.lon, self.max.lat, self.max.lon]

    def contains(self, p: GeoPoint) -> bool:
        return (self.min.lat <= p.lat <= self.max.lat
                and self.min.lon <= p.lon <= self.max.lon)

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.min.lat + self.max.lat) / 2, (self.min.lon + self.max.lon) / 2)


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    lat1, lat2 = math.radians(a[0]), math.radians(b[0])
    dlat = lat2 - lat1
    dlon = math.radians(b[1] - a[1])
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Forward azimuth from ``a`` to ``b``; 0 is true north, clockwise, in [0, 360)."""
    if a[0] == b[0] and a[1] == b[1]:
        raise GeoError(f"bearing undefined for identical points {a}")
    lat1, lat2 = math.radians(a[0]), math.radians(b[0])
    dlon = math.radians(b[1] - a[1])
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    deg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if deg >= 360.0 else deg


def destination(a: GeoPoint, distance_m: float, bearing_deg: float) -> GeoPoint:
    """Point reached by travelling ``distance_m`` along a great circle at ``bearing_deg``."""
    if distance_m == 0:
        return GeoPoint(a[0], a[1])
    d = distance_m / EARTH_RADIUS_M
    th = math.radians(bearing_deg)
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2 = math.asin(math.sin(lat1) * math.cos(d) + math.cos(lat1) * math.sin(d) * math.cos(th))
    lon2 = lon1 + math.atan2(math.sin(th) * math.sin(d) * math.cos(lat1),
                             math.cos(d) - math.sin(lat1) * math.sin(lat2))
    lon = (math.degrees(lon2) + 180.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(lat2), lon)


def local_xy(origin: GeoPoint, p: GeoPoint) -> Tuple[float, float]:
    """Equirectangular offset of ``p`` from ``origin`` in meters (east, north)."""
    kx = M_PER_DEG * math.cos(math.radians(origin[0]))
    return (p[1] - origin[1]) * kx, (p[0] - origin[0]) * M_PER_DEG


def project_onto_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> Tuple[float, float]:
    """Return (distance_m, t) where t in [0, 1] is the clamped position of the foot on a->b.

    Uses a local planar frame centred at ``p``.
    """
    ax, ay = local_xy(p, a)
    bx, by = local_xy(p, b)
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den == 0.0:
        raise GeoError(f"degenerate segment {a} -> {b}")
    t = -(ax * dx + ay * dy) / den
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    fx, fy = ax + t * dx, ay + t * dy
    return math.hypot(fx, fy), t


def point_to_segment_m(p: GeoPoint, seg: Tuple[GeoPoint, GeoPoint]) -> float:
    return project_onto_segment(p, seg[0], seg[1])[0]
