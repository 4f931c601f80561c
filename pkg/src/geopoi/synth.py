"""Synthetic check-in generators for protocol tests and demos.

Two dynamics, both deterministic given the seed:
- cycle: POIs sit on a fixed visiting cycle; every user walks the cycle
  from a random offset. Transition structure carries all the signal.
- geo-clustered: POIs form distant clusters; within a session a user
  hops to the geographically nearest not-yet-visited POI of their
  cluster, and each session restarts at a random POI. Geometry carries
  the signal.
"""
from __future__ import annotations

import numpy as np

from .checkins import CheckIn
from .geocode import haversine_km

BASE_TS = 1_330_560_000  # 2012-03-01T00:00:00Z


def cycle_checkins(
    n_pois: int = 20,
    n_users: int = 50,
    events_per_user: int = 200,
    seed: int = 0,
    lat_range: tuple[float, float] = (40.5, 40.9),
    lon_range: tuple[float, float] = (-74.2, -73.7),
) -> list[CheckIn]:
    """Deterministic visiting cycle: POI i is always followed by i+1 mod n."""
    rng = np.random.default_rng(seed)
    lats = rng.uniform(*lat_range, n_pois)
    lons = rng.uniform(*lon_range, n_pois)
    categories = [f"cat{i % 5}" for i in range(n_pois)]
    checkins = []
    for u in range(n_users):
        offset = int(rng.integers(n_pois))
        for step in range(events_per_user):
            p = (offset + step) % n_pois
            checkins.append(
                CheckIn(
                    user_id=f"u{u:03d}",
                    poi_id=f"p{p:03d}",
                    category=categories[p],
                    ts=BASE_TS + u * 7 + step * 3600,
                    lat=float(lats[p]),
                    lon=float(lons[p]),
                )
            )
    return checkins


def geo_cluster_checkins(
    n_clusters: int = 4,
    pois_per_cluster: int = 12,
    n_users: int = 16,
    sessions_per_user: int = 25,
    session_len: int = 8,
    seed: int = 0,
    poi_prefix: str = "p",
    cluster_extent: float = 0.02,
    origin: tuple[float, float] = (35.0, 10.0),
) -> list[CheckIn]:
    """Nearest-unvisited-in-cluster walks inside well-separated clusters.

    Cluster centers sit on a coarse grid (degrees apart); each session
    starts at a random POI of the user's home cluster and then follows
    the nearest-unvisited rule, resetting the visited set if exhausted.
    """
    rng = np.random.default_rng(seed)
    centers = [
        (origin[0] + 3.0 * (k // 3), origin[1] + 3.0 * (k % 3)) for k in range(n_clusters)
    ]
    coords = np.zeros((n_clusters * pois_per_cluster, 2))
    for k, (clat, clon) in enumerate(centers):
        for j in range(pois_per_cluster):
            i = k * pois_per_cluster + j
            coords[i] = (
                clat + rng.uniform(-cluster_extent, cluster_extent),
                clon + rng.uniform(-cluster_extent, cluster_extent),
            )

    def nearest_unvisited(cluster: int, current: int, visited: set[int]) -> int:
        members = range(cluster * pois_per_cluster, (cluster + 1) * pois_per_cluster)
        candidates = [m for m in members if m not in visited and m != current]
        if not candidates:
            return -1
        dists = [haversine_km(tuple(coords[current]), tuple(coords[m])) for m in candidates]
        return candidates[int(np.argmin(dists))]

    checkins = []
    for u in range(n_users):
        cluster = int(rng.integers(n_clusters))
        for s in range(sessions_per_user):
            session_start = BASE_TS + u * 11 + s * 2 * 86400
            current = cluster * pois_per_cluster + int(rng.integers(pois_per_cluster))
            visited = {current}
            for step in range(session_len):
                if step > 0:
                    nxt = nearest_unvisited(cluster, current, visited)
                    if nxt < 0:
                        visited = {current}
                        nxt = nearest_unvisited(cluster, current, visited)
                    current = nxt
                    visited.add(current)
                checkins.append(
                    CheckIn(
                        user_id=f"u{u:03d}",
                        poi_id=f"{poi_prefix}{current:03d}",
                        category=f"cat{current % 4}",
                        ts=session_start + step * 1800,
                        lat=float(coords[current][0]),
                        lon=float(coords[current][1]),
                    )
                )
    return checkins


def two_city_checkins(seed: int = 0, **kwargs) -> tuple[list[CheckIn], list[CheckIn]]:
    """Two geographically disjoint datasets sharing the proximity rule."""
    city_a = geo_cluster_checkins(seed=seed, poi_prefix="a", origin=(35.0, 10.0), **kwargs)
    city_b = geo_cluster_checkins(seed=seed + 1, poi_prefix="b", origin=(48.0, -30.0), **kwargs)
    return city_a, city_b
