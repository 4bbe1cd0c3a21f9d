"""Geohashing and spherical geometry helpers.

Geohash here is the classic base32 Z-order encoding: longitude and latitude
are bisected alternately starting with longitude, five bits per output
character. Precision is measured in output characters; three characters give
a cell of 1.40625 degrees per side, five characters roughly 5 km per side.

Distances are great-circle miles on a sphere of radius 3958.8 statute miles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

GEOHASH_ALPHABET = "0123456789bcdefghjkmnpqrstuvwxyz"
_CHAR_TO_BITS = {char: index for index, char in enumerate(GEOHASH_ALPHABET)}

EARTH_RADIUS_MILES = 3958.8


@dataclass(frozen=True)
class BoundingBox:
    """Rectangle in degrees decoded from a geohash."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def contains(self, latitude: float, longitude: float) -> bool:
        return (
            self.lat_min <= latitude < self.lat_max
            and self.lon_min <= longitude < self.lon_max
        )

    @property
    def lat_span(self) -> float:
        return self.lat_max - self.lat_min

    @property
    def lon_span(self) -> float:
        return self.lon_max - self.lon_min


def geohash_encode(latitude: float, longitude: float, precision: int = 3) -> str:
    """Encode a coordinate to a geohash of ``precision`` characters.

    Args:
        latitude: degrees in [-90, 90].
        longitude: degrees in [-180, 180].
        precision: number of output characters, >= 1.

    Returns:
        The geohash string; its decoded bounding box contains the input point.

    Raises:
        ValueError: coordinate or precision out of range.
    """
    if not precision >= 1:
        raise ValueError(f"precision must be >= 1, got {precision}")
    if not -90.0 <= latitude <= 90.0:
        raise ValueError(f"latitude out of range: {latitude}")
    if not -180.0 <= longitude <= 180.0:
        raise ValueError(f"longitude out of range: {longitude}")

    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars: list[str] = []
    bits = 0
    bit_count = 0
    even = True  # even bit positions split longitude
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if longitude >= mid:
                bits = (bits << 1) | 1
                lon_lo = mid
            else:
                bits <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if latitude >= mid:
                bits = (bits << 1) | 1
                lat_lo = mid
            else:
                bits <<= 1
                lat_hi = mid
        even = not even
        bit_count += 1
        if bit_count == 5:
            chars.append(GEOHASH_ALPHABET[bits])
            bits = 0
            bit_count = 0
    return "".join(chars)


def geohash_decode(code: str) -> BoundingBox:
    """Decode a geohash to its bounding box.

    Raises:
        ValueError: empty code or character outside the geohash alphabet.
    """
    if not code:
        raise ValueError("geohash must be non-empty")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for char in code:
        try:
            value = _CHAR_TO_BITS[char]
        except KeyError:
            raise ValueError(f"invalid geohash character: {char!r}") from None
        for shift in range(4, -1, -1):
            bit = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                if bit:
                    lon_lo = mid
                else:
                    lon_hi = mid
            else:
                mid = (lat_lo + lat_hi) / 2
                if bit:
                    lat_lo = mid
                else:
                    lat_hi = mid
            even = not even
    return BoundingBox(lat_min=lat_lo, lat_max=lat_hi, lon_min=lon_lo, lon_max=lon_hi)


def haversine_miles(
    lat1: float, lon1: float, lat2: float, lon2: float
) -> float:
    """Great-circle distance in statute miles between two coordinates."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlambda = math.radians(lon2 - lon1)
    a = (
        math.sin(dphi / 2) ** 2
        + math.cos(phi1) * math.cos(phi2) * math.sin(dlambda / 2) ** 2
    )
    return 2 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(a)))


def displace(
    latitude: float, longitude: float, distance_miles: float, bearing_degrees: float
) -> tuple[float, float]:
    """Destination point after moving along a great circle.

    Args:
        latitude, longitude: start coordinate in degrees.
        distance_miles: great-circle distance to travel, >= 0.
        bearing_degrees: initial bearing clockwise from north.

    Returns:
        (latitude, longitude) of the destination, longitude normalized to
        [-180, 180].
    """
    if distance_miles < 0:
        raise ValueError(f"distance must be >= 0, got {distance_miles}")
    delta = distance_miles / EARTH_RADIUS_MILES
    theta = math.radians(bearing_degrees)
    phi1 = math.radians(latitude)
    lambda1 = math.radians(longitude)

    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(
        delta
    ) * math.cos(theta)
    sin_phi2 = max(-1.0, min(1.0, sin_phi2))
    phi2 = math.asin(sin_phi2)
    lambda2 = lambda1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * sin_phi2,
    )

    lat2 = math.degrees(phi2)
    lon2 = math.degrees(lambda2)
    lon2 = (lon2 + 180.0) % 360.0 - 180.0
    lat2 = max(-90.0, min(90.0, lat2))
    return lat2, lon2
