import math

import numpy as np
import pytest

from geopoi.geocode import (
    EARTH_RADIUS_KM,
    GeoError,
    GridPosition,
    QuadKey,
    gram_index,
    haversine_km,
    ngrams,
    project,
    quadkey,
)
from oracles import reference_haversine_km, reference_quadkey, reference_tile


class TestProject:
    def test_equator_prime_meridian_level1(self):
        pos = project(0.0, 0.0, 1)
        assert pos.x == 256.0 and pos.y == 256.0
        assert (pos.tile_x, pos.tile_y) == (1, 1)

    @pytest.mark.parametrize("level", range(1, 11))
    def test_origin_pixel_fixed_point(self, level):
        pos = project(0.0, 0.0, level)
        assert pos.x == 128.0 * 2**level
        assert pos.y == 128.0 * 2**level

    def test_west_edge(self):
        pos = project(0.0, -180.0, 1)
        assert pos.x == 0.0 and pos.tile_x == 0

    def test_east_edge_clamps_into_last_pixel(self):
        pos = project(0.0, 180.0, 1)
        assert pos.x == 256.0 * 2 - 1
        assert pos.tile_x == 1

    def test_nyc_tile_matches_reference(self):
        pos = project(40.7128, -74.0060, 12)
        assert (pos.tile_x, pos.tile_y) == reference_tile(40.7128, -74.0060, 12)
        assert (pos.tile_x, pos.tile_y) == (1205, 1540)

    def test_polar_latitudes_clamp_without_error(self):
        for lat in (90.0, -90.0, 86.0, -86.0):
            pos = project(lat, 10.0, 8)
            assert 0 <= pos.tile_y < 2**8

    def test_non_finite_rejected(self):
        with pytest.raises(GeoError):
            project(float("nan"), 0.0, 5)
        with pytest.raises(GeoError):
            project(0.0, float("inf"), 5)

    def test_level_range_enforced(self):
        with pytest.raises(GeoError):
            project(0.0, 0.0, 0)
        with pytest.raises(GeoError):
            project(0.0, 0.0, 31)

    def test_longitude_wrapping(self):
        assert project(0.0, 181.0, 4).x == project(0.0, -179.0, 4).x
        assert project(0.0, -541.0, 4).x == project(0.0, 179.0, 4).x

    def test_y_strictly_decreasing_in_latitude(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            lat1, lat2 = sorted(rng.uniform(-85.0, 85.0, size=2))
            if lat1 == lat2:
                continue
            lon = rng.uniform(-180.0, 180.0)
            level = int(rng.integers(1, 26))
            assert project(lat2, lon, level).y < project(lat1, lon, level).y

    def test_tile_distance_bounded_by_pixel_distance(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            level = int(rng.integers(1, 20))
            a = project(rng.uniform(-85, 85), rng.uniform(-180, 180), level)
            b = project(rng.uniform(-85, 85), rng.uniform(-180, 180), level)
            assert abs(a.tile_x - b.tile_x) <= math.ceil(abs(a.x - b.x) / 256) + 1
            assert abs(a.tile_y - b.tile_y) <= math.ceil(abs(a.y - b.y) / 256) + 1


class TestQuadKey:
    def test_tile_1_1_level_1(self):
        assert quadkey(GridPosition(1, 300.0, 300.0, 1, 1)).digits == "3"

    def test_zero_tile_level_5(self):
        assert quadkey(GridPosition(5, 0.0, 0.0, 0, 0)).digits == "00000"

    def test_origin_level_3(self):
        assert quadkey(project(0.0, 0.0, 3)).digits == "300"

    def test_matches_reference_randomized(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            lat = rng.uniform(-90.0, 90.0)
            lon = rng.uniform(-180.0, 180.0)
            level = int(rng.integers(1, 26))
            assert quadkey(project(lat, lon, level)).digits == reference_quadkey(lat, lon, level)

    def test_prefix_property(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            lat = rng.uniform(-85.0, 85.0)
            lon = rng.uniform(-180.0, 180.0)
            level = int(rng.integers(2, 26))
            k = int(rng.integers(1, level))
            full = quadkey(project(lat, lon, level)).digits
            assert quadkey(project(lat, lon, k)).digits == full[:k]

    def test_digit_validation(self):
        with pytest.raises(GeoError):
            QuadKey("0412")

    def test_digit_values(self):
        assert QuadKey("0321").digit_values() == [0, 3, 2, 1]


class TestNGrams:
    def test_paper_example(self):
        assert ngrams(QuadKey("03201"), 3).grams == ("032", "320", "201")

    def test_all_zero_key(self):
        seq = ngrams(QuadKey("0000000"), 3)
        assert seq.grams == ("000",) * 5

    def test_short_key_padded(self):
        assert ngrams(QuadKey("03"), 3).grams == ("030",)

    def test_count_law(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(1, 5))
            length = int(rng.integers(n, 26))
            digits = "".join(str(d) for d in rng.integers(0, 4, size=length))
            assert len(ngrams(QuadKey(digits), n).grams) == length - n + 1

    def test_vocabulary_bound(self):
        rng = np.random.default_rng(13)
        seen = set()
        for _ in range(500):
            digits = "".join(str(d) for d in rng.integers(0, 4, size=25))
            seen.update(ngrams(QuadKey(digits), 3).grams)
        assert len(seen) <= 64
        assert all(0 <= gram_index(g) < 64 for g in seen)

    def test_gram_index(self):
        assert gram_index("000") == 0
        assert gram_index("333") == 63
        assert gram_index("032") == 0 * 16 + 3 * 4 + 2


class TestHaversine:
    def test_identical_points(self):
        assert haversine_km((51.5, -0.1), (51.5, -0.1)) == 0.0

    def test_antipodal(self):
        assert haversine_km((0.0, 0.0), (0.0, 180.0)) == pytest.approx(math.pi * EARTH_RADIUS_KM, abs=1e-6)

    def test_nyc_to_la(self):
        d = haversine_km((40.7128, -74.0060), (34.0522, -118.2437))
        assert d == pytest.approx(3935.7516908, abs=1.0)
        assert d == pytest.approx(
            reference_haversine_km((40.7128, -74.0060), (34.0522, -118.2437)), abs=1e-9
        )

    def test_symmetry(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            a = (rng.uniform(-90, 90), rng.uniform(-180, 180))
            b = (rng.uniform(-90, 90), rng.uniform(-180, 180))
            assert haversine_km(a, b) == pytest.approx(haversine_km(b, a), rel=1e-12)
            assert haversine_km(a, b) >= 0.0
