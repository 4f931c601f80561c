"""Web-Mercator pixel/tile math, base-4 quadkeys, and n-gram extraction.

Pure geometry, no learning. The projection follows the standard 256px
quadtree tile scheme: at zoom level l the world is a (256*2^l)^2 pixel
plane and a tile is 256x256 pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0088
# Mercator diverges at the poles; this latitude makes the world square.
MAX_LATITUDE = 85.05112878
TILE_SIZE = 256


class GeoError(ValueError):
    pass


@dataclass(frozen=True)
class GridPosition:
    """A point on the Mercator pixel plane at a given zoom level."""

    level: int
    x: float
    y: float
    tile_x: int
    tile_y: int


@dataclass(frozen=True)
class QuadKey:
    """Base-4 tile address; digit i refines the tile at level i."""

    digits: str

    def __post_init__(self):
        if not all(c in "0123" for c in self.digits):
            raise GeoError(f"quadkey digits must be base-4, got {self.digits!r}")

    @property
    def level(self) -> int:
        return len(self.digits)

    def digit_values(self) -> list[int]:
        return [int(c) for c in self.digits]


@dataclass(frozen=True)
class NGramSequence:
    grams: tuple[str, ...]
    n: int


def _normalize_lon(lon: float) -> float:
    # Wrap out-of-range longitudes; +/-180 are kept as given so that -180
    # maps to the west edge and +180 clamps into the last pixel column.
    if -180.0 <= lon <= 180.0:
        return lon
    return ((lon + 180.0) % 360.0) - 180.0


def project(lat: float, lon: float, level: int) -> GridPosition:
    """Project (lat, lon) degrees onto the pixel plane at `level`."""
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise GeoError(f"non-finite coordinates: lat={lat}, lon={lon}")
    if not 1 <= level <= 30:
        raise GeoError(f"level must be in [1, 30], got {level}")
    lat = min(max(lat, -MAX_LATITUDE), MAX_LATITUDE)
    lon = _normalize_lon(lon)

    map_size = float(TILE_SIZE * (1 << level))
    x = (lon + 180.0) / 360.0 * map_size
    sin_lat = math.sin(lat * math.pi / 180.0)
    y = (0.5 - math.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)) * map_size

    x = min(max(x, 0.0), map_size - 1.0)
    y = min(max(y, 0.0), map_size - 1.0)
    return GridPosition(
        level=level,
        x=x,
        y=y,
        tile_x=int(x // TILE_SIZE),
        tile_y=int(y // TILE_SIZE),
    )


def quadkey(pos: GridPosition) -> QuadKey:
    """Interleave tile-index bits into the base-4 tile address."""
    digits = []
    for i in range(1, pos.level + 1):
        bit = pos.level - i
        digit = ((pos.tile_x >> bit) & 1) + 2 * ((pos.tile_y >> bit) & 1)
        digits.append(str(digit))
    return QuadKey("".join(digits))


def ngrams(key: QuadKey, n: int = 3) -> NGramSequence:
    """Overlapping width-n windows over the quadkey digits, stride 1.

    Keys shorter than n yield a single gram right-padded with '0'.
    """
    if n < 1:
        raise GeoError(f"n must be >= 1, got {n}")
    s = key.digits
    if len(s) < n:
        return NGramSequence((s.ljust(n, "0"),), n)
    return NGramSequence(tuple(s[i : i + n] for i in range(len(s) - n + 1)), n)


def gram_index(gram: str) -> int:
    """Dense index of a gram in the 4^n gram vocabulary."""
    return int(gram, 4)


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in kilometers between (lat, lon) pairs."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))
