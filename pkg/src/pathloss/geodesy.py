"""Local planar frame and link geometry.

Coordinates are mapped onto an equirectangular tangent plane around a
projection origin. At county scale (< 30 km) the distortion stays well under
0.1 %, which is far below the lidar raster resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .exceptions import CoincidentPoints, MixedOrigins, OutOfProjectionRange, ZeroDistance

R_EARTH = 6371000.0
MAX_OFFSET_DEG = 1.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    h_asl: Optional[float] = None

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class LocalXY:
    x: float
    y: float
    origin: Optional[GeoPoint] = None


def project(origin: GeoPoint, p: GeoPoint) -> LocalXY:
    dlat = p.lat - origin.lat
    dlon = p.lon - origin.lon
    if abs(dlat) >= MAX_OFFSET_DEG or abs(dlon) >= MAX_OFFSET_DEG:
        raise OutOfProjectionRange(
            f"({p.lat}, {p.lon}) is more than {MAX_OFFSET_DEG} deg from the origin"
        )
    x = R_EARTH * math.cos(math.radians(origin.lat)) * math.radians(dlon)
    y = R_EARTH * math.radians(dlat)
    return LocalXY(x, y, origin)


def unproject(p: LocalXY) -> GeoPoint:
    """Inverse of :func:`project`; ``p.origin`` must be set."""
    if p.origin is None:
        raise MixedOrigins("LocalXY without origin cannot be unprojected")
    o = p.origin
    lat = o.lat + math.degrees(p.y / R_EARTH)
    lon = o.lon + math.degrees(p.x / (R_EARTH * math.cos(math.radians(o.lat))))
    return GeoPoint(lat, lon)


def _check_origins(a: LocalXY, b: LocalXY):
    if a.origin is not None and b.origin is not None and a.origin != b.origin:
        raise MixedOrigins("points are expressed in different local frames")


def horizontal_distance(a: LocalXY, b: LocalXY) -> float:
    _check_origins(a, b)
    return math.hypot(b.x - a.x, b.y - a.y)


def azimuth_aoa(bs: LocalXY, ue: LocalXY) -> float:
    """Azimuth angle of arrival in degrees clockwise from north, in [0, 360).

    This is the bearing of the base station as seen from the receiver.
    """
    _check_origins(bs, ue)
    dx = bs.x - ue.x
    dy = bs.y - ue.y
    if dx == 0.0 and dy == 0.0:
        raise CoincidentPoints("base station and receiver coincide")
    az = math.degrees(math.atan2(dx, dy)) % 360.0
    # a tiny negative angle wraps to exactly 360.0 in floating point
    return 0.0 if az >= 360.0 else az


def elevation_angle(d_horizontal: float, dh: float) -> float:
    """``atan(dh / d)`` in degrees.

    Pass ``dh = h_bs - h_rx`` for the downward look angle from the base
    station, or ``dh = h_rx - h_bs`` for the tilt angle of arrival.
    """
    if d_horizontal <= 0.0:
        raise ZeroDistance("elevation angle needs a positive horizontal distance")
    return math.degrees(math.atan(dh / d_horizontal))
