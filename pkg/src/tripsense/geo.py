"""Spherical geodesy on a mean-radius Earth model.

All distances are great-circle meters on a sphere of radius 6,371,000 m;
bearings are compass degrees in [0, 360) with 0 = true north.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0


class BearingUndefinedError(ValueError):
    """Raised when a bearing is requested between coincident points."""


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A WGS-ish latitude/longitude pair in degrees, validated on construction."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"coordinates must be finite, got ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points, in meters.

    Haversine form; numerically stable for small separations where the
    law-of-cosines form loses precision.
    """
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Forward azimuth from a to b, degrees in [0, 360).

    Undefined for coincident points (there is no direction to face).
    """
    if a == b:
        raise BearingUndefinedError(f"bearing undefined for coincident points {a}")
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    bearing = math.degrees(math.atan2(y, x)) % 360.0
    # a tiny negative azimuth rounds to exactly 360.0 under the modulo
    return 0.0 if bearing == 360.0 else bearing


def destination_point(start: GeoPoint, bearing_deg: float,
                      distance_m: float) -> GeoPoint:
    """The point reached by traveling distance_m along a great circle from
    start at the given initial bearing (the direct geodesy problem)."""
    if distance_m < 0.0:
        raise ValueError(f"distance must be >= 0, got {distance_m}")
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1, lam1 = math.radians(start.lat), math.radians(start.lon)
    phi2 = math.asin(math.sin(phi1) * math.cos(delta)
                     + math.cos(phi1) * math.sin(delta) * math.cos(theta))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2))
    lon = math.degrees(lam2)
    # atan2 can step just over the antimeridian; fold back into [-180, 180]
    lon = (lon + 180.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(phi2), lon)


def polyline_length_m(points: list[GeoPoint]) -> float:
    """Sum of great-circle step lengths along a polyline."""
    return sum(haversine_m(points[i], points[i + 1]) for i in range(len(points) - 1))


def point_to_segment_m(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance from p to the arc segment a-b, in meters.

    Uses the spherical cross-track formula, falling back to the nearer
    endpoint when the along-track projection lands outside the segment.
    """
    if a == b:
        return haversine_m(p, a)
    d_ap = haversine_m(a, p)
    if d_ap == 0.0:
        return 0.0
    # Nearer endpoint bounds the answer; for arcs that wrap far around the
    # sphere the foot-of-perpendicular tests below can pick the far end.
    endpoint = min(d_ap, haversine_m(p, b))
    delta13 = d_ap / EARTH_RADIUS_M
    theta13 = math.radians(initial_bearing_deg(a, p))
    theta12 = math.radians(initial_bearing_deg(a, b))
    # Projection behind a: the angle between the two bearings is obtuse.
    if math.cos(theta13 - theta12) < 0.0:
        return endpoint
    dxt = math.asin(max(-1.0, min(1.0, math.sin(delta13) * math.sin(theta13 - theta12))))
    cos_dxt = math.cos(dxt)
    if cos_dxt == 0.0:
        return min(abs(dxt) * EARTH_RADIUS_M, endpoint)
    dat = math.acos(max(-1.0, min(1.0, math.cos(delta13) / cos_dxt)))
    if dat > haversine_m(a, b) / EARTH_RADIUS_M:
        return endpoint
    return min(abs(dxt) * EARTH_RADIUS_M, endpoint)


def point_to_polyline_m(p: GeoPoint, polyline: list[GeoPoint]) -> float:
    """Distance from p to the nearest segment of a polyline (>= 1 point)."""
    if not polyline:
        raise ValueError("empty polyline")
    if len(polyline) == 1:
        return haversine_m(p, polyline[0])
    return min(
        point_to_segment_m(p, polyline[i], polyline[i + 1]) for i in range(len(polyline) - 1)
    )
