"""Check-in ingestion: parsing, sparsity filtering, trajectories, splits.

Canonical file format: UTF-8 TSV with header
`user_id\tpoi_id\tcategory\tlat\tlon\ttimestamp` and ISO-8601 UTC
timestamps. A `foursquare-raw` adapter reads the original 8-column tab
layout (UTC time string in the last column) and converts to UTC epochs.
"""
from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

CANONICAL_HEADER = ["user_id", "poi_id", "category", "lat", "lon", "timestamp"]


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    category: str
    ts: int  # UTC epoch seconds
    lat: float
    lon: float

    def iso_time(self) -> str:
        return datetime.fromtimestamp(self.ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class Trajectory:
    """Chronological check-ins of one user with session break indices.

    `session_breaks` lists event indices i where events[i] starts a new
    session (a gap longer than the configured threshold precedes it).
    """

    user_id: str
    events: list[CheckIn]
    session_breaks: list[int] = field(default_factory=list)

    def sessions(self) -> list[list[CheckIn]]:
        bounds = [0] + self.session_breaks + [len(self.events)]
        return [self.events[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass(frozen=True)
class Sample:
    """One (prefix, next check-in) prediction instance."""

    sample_id: int
    user_id: str
    target_pos: int  # index of the target event in the user's trajectory


@dataclass
class Vocab:
    ids: list[str]
    index: dict[str, int]

    @classmethod
    def from_ids(cls, ids) -> "Vocab":
        ordered = sorted(set(ids))
        return cls(ids=ordered, index={v: i for i, v in enumerate(ordered)})

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class DatasetSplit:
    trajectories: dict[str, Trajectory]
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]
    poi_vocab: Vocab
    user_vocab: Vocab
    category_vocab: Vocab
    poi_coords: np.ndarray  # (|POI|, 2) lat/lon by vocab index
    session_gap_hours: float = 24.0

    def target(self, sample: Sample) -> CheckIn:
        return self.trajectories[sample.user_id].events[sample.target_pos]

    def prefix(self, sample: Sample, limit: int | None = None) -> list[CheckIn]:
        events = self.trajectories[sample.user_id].events
        start = 0 if limit is None else max(0, sample.target_pos - limit)
        return events[start : sample.target_pos]


def _parse_iso_utc(text: str) -> int:
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_canonical_row(fields: list[str]) -> CheckIn:
    if len(fields) < 6:
        raise ValueError(f"expected 6 fields, got {len(fields)}")
    user_id, poi_id, category, lat_s, lon_s, ts_s = fields[:6]
    lat, lon = float(lat_s), float(lon_s)
    ts = _parse_iso_utc(ts_s)
    return CheckIn(user_id, poi_id, category, ts, lat, lon)


def _parse_foursquare_row(fields: list[str]) -> CheckIn:
    # user, venue, category-id, category-name, lat, lon, tz-offset-min, UTC time
    if len(fields) != 8:
        raise ValueError(f"expected 8 fields, got {len(fields)}")
    user_id, poi_id, _cat_id, category, lat_s, lon_s, _tz_min, time_s = fields
    lat, lon = float(lat_s), float(lon_s)
    dt = datetime.strptime(time_s.strip(), "%a %b %d %H:%M:%S %z %Y")
    return CheckIn(user_id, poi_id, category, int(dt.timestamp()), lat, lon)


def _validate(c: CheckIn) -> CheckIn:
    if not (-90.0 <= c.lat <= 90.0):
        raise ValueError(f"latitude {c.lat} out of range")
    if not (-180.0 <= c.lon <= 180.0):
        raise ValueError(f"longitude {c.lon} out of range")
    if not math.isfinite(c.lat) or not math.isfinite(c.lon):
        raise ValueError("non-finite coordinates")
    return c


def parse_checkins(path: str, fmt: str = "canonical") -> tuple[list[CheckIn], int]:
    """Read check-ins from `path`; returns (check-ins, skipped row count).

    Malformed rows are skipped with a warning on stderr; an unreadable
    file raises IngestError.
    """
    if fmt not in ("canonical", "foursquare-raw"):
        raise IngestError(f"unknown format {fmt!r}")
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc

    parse_row = _parse_canonical_row if fmt == "canonical" else _parse_foursquare_row
    checkins: list[CheckIn] = []
    skipped = 0
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if fmt == "canonical" and lineno == 1 and fields == CANONICAL_HEADER:
                continue
            try:
                checkins.append(_validate(parse_row(fields)))
            except (ValueError, OverflowError) as exc:
                skipped += 1
                print(f"warning: {path}:{lineno}: skipping row ({exc})", file=sys.stderr)
    if skipped:
        print(f"warning: {path}: skipped {skipped} malformed row(s)", file=sys.stderr)
    return checkins, skipped


def write_checkins(path: str, checkins: list[CheckIn], sample_ids: list[int] | None = None) -> None:
    """Write canonical TSV; with `sample_ids`, append a sample_id column."""
    header = list(CANONICAL_HEADER)
    if sample_ids is not None:
        header.append("sample_id")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for i, c in enumerate(checkins):
            row = [c.user_id, c.poi_id, c.category, repr(c.lat), repr(c.lon), c.iso_time()]
            if sample_ids is not None:
                row.append(str(sample_ids[i]))
            f.write("\t".join(row) + "\n")


def filter_sparse(checkins: list[CheckIn], min_count: int = 10) -> list[CheckIn]:
    """Drop check-ins of users/POIs with < min_count occurrences.

    Iterates to a fixed point: removing a sparse POI can push a user
    below the threshold and vice versa.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    current = list(checkins)
    while True:
        user_counts: dict[str, int] = {}
        poi_counts: dict[str, int] = {}
        for c in current:
            user_counts[c.user_id] = user_counts.get(c.user_id, 0) + 1
            poi_counts[c.poi_id] = poi_counts.get(c.poi_id, 0) + 1
        kept = [
            c for c in current
            if user_counts[c.user_id] >= min_count and poi_counts[c.poi_id] >= min_count
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def build_trajectories(checkins: list[CheckIn], session_gap_hours: float = 24.0) -> list[Trajectory]:
    """Group check-ins per user, sort by time, mark session breaks."""
    by_user: dict[str, list[CheckIn]] = {}
    for c in checkins:
        by_user.setdefault(c.user_id, []).append(c)
    gap_seconds = session_gap_hours * 3600.0
    trajectories = []
    for user_id in sorted(by_user):
        events = sorted(by_user[user_id], key=lambda c: c.ts)
        breaks = [
            i for i in range(1, len(events))
            if events[i].ts - events[i - 1].ts > gap_seconds
        ]
        trajectories.append(Trajectory(user_id, events, breaks))
    return trajectories


def split_chronological(
    trajectories: list[Trajectory],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    session_gap_hours: float = 24.0,
) -> DatasetSplit:
    """Per-user chronological split of (prefix, next check-in) samples.

    Train and val sizes round down; the remainder goes to test. Users
    with fewer than 3 events contribute train samples only.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    all_events = [c for t in trajectories for c in t.events]
    poi_vocab = Vocab.from_ids(c.poi_id for c in all_events)
    user_vocab = Vocab.from_ids(c.user_id for c in all_events)
    category_vocab = Vocab.from_ids(c.category for c in all_events)

    poi_coords = np.zeros((len(poi_vocab), 2), dtype=np.float64)
    seen = set()
    for t in sorted(trajectories, key=lambda t: t.user_id):
        for c in t.events:
            if c.poi_id not in seen:
                seen.add(c.poi_id)
                poi_coords[poi_vocab.index[c.poi_id]] = (c.lat, c.lon)

    train: list[Sample] = []
    val: list[Sample] = []
    test: list[Sample] = []
    next_id = 0
    traj_map = {t.user_id: t for t in trajectories}
    for user_id in sorted(traj_map):
        t = traj_map[user_id]
        n = len(t.events) - 1  # one sample per event after the first
        if n <= 0:
            continue
        samples = []
        for j in range(1, len(t.events)):
            samples.append(Sample(next_id, user_id, j))
            next_id += 1
        if n < 3:  # too few samples to carve out val/test
            train.extend(samples)
            continue
        n_train = math.floor(ratios[0] * n)
        n_val = math.floor(ratios[1] * n)
        train.extend(samples[:n_train])
        val.extend(samples[n_train : n_train + n_val])
        test.extend(samples[n_train + n_val :])

    return DatasetSplit(
        trajectories=traj_map,
        train=train,
        val=val,
        test=test,
        poi_vocab=poi_vocab,
        user_vocab=user_vocab,
        category_vocab=category_vocab,
        poi_coords=poi_coords,
        session_gap_hours=session_gap_hours,
    )


def save_split(split: DatasetSplit, dir_path: str) -> None:
    """Persist a split as train/val/test TSVs plus a vocab manifest.

    Every event appears exactly once, in its portion's file, tagged with
    the sample id it is the target of (-1 for each user's first event).
    """
    os.makedirs(dir_path, exist_ok=True)
    portion_of: dict[tuple[str, int], str] = {}
    sample_of: dict[tuple[str, int], int] = {}
    for name, samples in (("train", split.train), ("val", split.val), ("test", split.test)):
        for s in samples:
            portion_of[(s.user_id, s.target_pos)] = name
            sample_of[(s.user_id, s.target_pos)] = s.sample_id

    rows: dict[str, tuple[list[CheckIn], list[int]]] = {
        "train": ([], []), "val": ([], []), "test": ([], []),
    }
    for user_id in sorted(split.trajectories):
        t = split.trajectories[user_id]
        for pos, event in enumerate(t.events):
            portion = portion_of.get((user_id, pos), "train")
            rows[portion][0].append(event)
            rows[portion][1].append(sample_of.get((user_id, pos), -1))
    for name, (events, ids) in rows.items():
        write_checkins(os.path.join(dir_path, f"{name}.tsv"), events, sample_ids=ids)

    manifest = {
        "poi": split.poi_vocab.index,
        "user": split.user_vocab.index,
        "category": split.category_vocab.index,
        "poi_coords": {
            pid: [float(split.poi_coords[i][0]), float(split.poi_coords[i][1])]
            for pid, i in split.poi_vocab.index.items()
        },
        "session_gap_hours": split.session_gap_hours,
    }
    with open(os.path.join(dir_path, "vocab.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_split(dir_path: str) -> DatasetSplit:
    with open(os.path.join(dir_path, "vocab.json"), encoding="utf-8") as f:
        manifest = json.load(f)
    gap = float(manifest.get("session_gap_hours", 24.0))

    per_user: dict[str, list[tuple[CheckIn, str, int]]] = {}
    for name in ("train", "val", "test"):
        path = os.path.join(dir_path, f"{name}.tsv")
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n").split("\t")
            if header[:6] != CANONICAL_HEADER or header[6:] != ["sample_id"]:
                raise IngestError(f"{path}: unexpected header {header}")
            for line in f:
                fields = line.rstrip("\n").split("\t")
                c = _parse_canonical_row(fields[:6])
                per_user.setdefault(c.user_id, []).append((c, name, int(fields[6])))

    gap_seconds = gap * 3600.0
    trajectories: dict[str, Trajectory] = {}
    buckets: dict[str, list[Sample]] = {"train": [], "val": [], "test": []}
    for user_id in sorted(per_user):
        entries = per_user[user_id]  # file order is chronological per portion
        events = [e[0] for e in entries]
        breaks = [
            i for i in range(1, len(events))
            if events[i].ts - events[i - 1].ts > gap_seconds
        ]
        trajectories[user_id] = Trajectory(user_id, events, breaks)
        for pos, (_, portion, sid) in enumerate(entries):
            if sid >= 0:
                buckets[portion].append(Sample(sid, user_id, pos))
    for samples in buckets.values():
        samples.sort(key=lambda s: s.sample_id)

    poi_vocab = Vocab(
        ids=sorted(manifest["poi"], key=manifest["poi"].get), index=dict(manifest["poi"]),
    )
    poi_coords = np.zeros((len(poi_vocab), 2), dtype=np.float64)
    for pid, (lat, lon) in manifest["poi_coords"].items():
        poi_coords[poi_vocab.index[pid]] = (lat, lon)
    return DatasetSplit(
        trajectories=trajectories,
        train=buckets["train"],
        val=buckets["val"],
        test=buckets["test"],
        poi_vocab=poi_vocab,
        user_vocab=Vocab(ids=sorted(manifest["user"], key=manifest["user"].get), index=dict(manifest["user"])),
        category_vocab=Vocab(
            ids=sorted(manifest["category"], key=manifest["category"].get), index=dict(manifest["category"]),
        ),
        poi_coords=poi_coords,
        session_gap_hours=gap,
    )
