import collections

import numpy as np
import pytest

from geopoi.checkins import (
    CheckIn,
    IngestError,
    Trajectory,
    build_trajectories,
    filter_sparse,
    load_split,
    parse_checkins,
    save_split,
    split_chronological,
    write_checkins,
)

BASE = 1333476000  # 2012-04-03T18:00:00Z


def ci(user="u1", poi="p1", cat="Coffee Shop", ts=BASE, lat=40.7128, lon=-74.0060):
    return CheckIn(user, poi, cat, ts, lat, lon)


def make_cycle(user, pois, start_ts, step_s=3600, count=None):
    count = count if count is not None else len(pois)
    return [
        ci(user=user, poi=pois[i % len(pois)], ts=start_ts + i * step_s, lat=40.0 + i * 0.001)
        for i in range(count)
    ]


class TestParse:
    def test_canonical_row(self, tmp_path):
        path = tmp_path / "in.tsv"
        path.write_text(
            "user_id\tpoi_id\tcategory\tlat\tlon\ttimestamp\n"
            "u1\tp9\tCoffee Shop\t40.7128\t-74.0060\t2012-04-03T18:00:00Z\n"
        )
        rows, skipped = parse_checkins(str(path))
        assert skipped == 0
        assert rows == [CheckIn("u1", "p9", "Coffee Shop", BASE, 40.7128, -74.0060)]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        rows, skipped = parse_checkins(str(path))
        assert rows == [] and skipped == 0

    def test_out_of_range_latitude_skipped(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            "user_id\tpoi_id\tcategory\tlat\tlon\ttimestamp\n"
            "u1\tp1\tPark\t95.0\t-74.0\t2012-04-03T18:00:00Z\n"
            "u1\tp2\tPark\t40.0\t-74.0\t2012-04-03T19:00:00Z\n"
        )
        rows, skipped = parse_checkins(str(path))
        assert skipped == 1
        assert [c.poi_id for c in rows] == ["p2"]

    def test_malformed_rows_skipped(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            "user_id\tpoi_id\tcategory\tlat\tlon\ttimestamp\n"
            "only\tthree\tfields\n"
            "u1\tp1\tPark\tnot-a-number\t-74.0\t2012-04-03T18:00:00Z\n"
            "u1\tp1\tPark\t40.0\t-74.0\tnot-a-time\n"
        )
        rows, skipped = parse_checkins(str(path))
        assert rows == [] and skipped == 3

    def test_unreadable_file_is_fatal(self, tmp_path):
        with pytest.raises(IngestError):
            parse_checkins(str(tmp_path / "missing.tsv"))

    def test_foursquare_raw(self, tmp_path):
        path = tmp_path / "raw.txt"
        path.write_text(
            "470\t49bbd6c0f964a520f4531fe3\t4bf58dd8d48988d127951735\tArts & Crafts Store"
            "\t40.719810375488535\t-74.00258103213994\t-240\tTue Apr 03 18:00:09 +0000 2012\n"
        )
        rows, skipped = parse_checkins(str(path), fmt="foursquare-raw")
        assert skipped == 0
        (c,) = rows
        assert c.user_id == "470" and c.category == "Arts & Crafts Store"
        assert c.ts == BASE + 9
        assert c.iso_time() == "2012-04-03T18:00:09Z"

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(IngestError):
            parse_checkins(str(tmp_path / "x.tsv"), fmt="csv")

    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(5)
        rows = [
            ci(user=f"u{i%3}", poi=f"p{i%4}", ts=BASE + i * 977,
               lat=float(rng.uniform(-85, 85)), lon=float(rng.uniform(-180, 180)))
            for i in range(25)
        ]
        path = tmp_path / "out.tsv"
        write_checkins(str(path), rows)
        back, skipped = parse_checkins(str(path))
        assert skipped == 0 and back == rows


def brute_force_sparse_filter(rows, min_count):
    """Oracle: remove one offending check-in at a time until stable."""
    rows = list(rows)
    while True:
        users = collections.Counter(c.user_id for c in rows)
        pois = collections.Counter(c.poi_id for c in rows)
        for i, c in enumerate(rows):
            if users[c.user_id] < min_count or pois[c.poi_id] < min_count:
                del rows[i]
                break
        else:
            return rows


class TestFilterSparse:
    def test_sparse_user_removed(self):
        rows = []
        for u in range(3):
            rows += [ci(user=f"big{u}", poi="p1", ts=BASE + i) for i in range(10)]
        rows += [ci(user="small", poi="p1", ts=BASE + 100 + i) for i in range(9)]
        out = filter_sparse(rows, min_count=10)
        assert {c.user_id for c in out} == {"big0", "big1", "big2"}

    def test_dense_input_unchanged(self):
        rows = [ci(user=f"u{u}", poi=f"p{u}", ts=BASE + i) for u in range(2) for i in range(10)]
        assert filter_sparse(rows, min_count=10) == rows

    def test_chained_removal_matches_bruteforce_oracle(self):
        # 20-row toy: removing sparse POI p-weak drops u2 from 10 to 9 rows,
        # which then removes u2 entirely.
        rows = [ci(user="u1", poi="p-pop", ts=BASE + i) for i in range(10)]
        rows += [ci(user="u2", poi="p-pop", ts=BASE + 50 + i) for i in range(9)]
        rows += [ci(user="u2", poi="p-weak", ts=BASE + 99)]
        out = filter_sparse(rows, min_count=10)
        oracle = brute_force_sparse_filter(rows, 10)
        assert out == oracle
        assert {c.user_id for c in out} == {"u1"}

    def test_matches_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(23)
        for trial in range(20):
            rows = [
                ci(user=f"u{rng.integers(4)}", poi=f"p{rng.integers(5)}", ts=BASE + i)
                for i in range(int(rng.integers(10, 40)))
            ]
            k = int(rng.integers(2, 6))
            assert filter_sparse(rows, k) == brute_force_sparse_filter(rows, k), f"trial {trial}"

    def test_idempotent(self):
        rng = np.random.default_rng(29)
        rows = [
            ci(user=f"u{rng.integers(5)}", poi=f"p{rng.integers(6)}", ts=BASE + i)
            for i in range(60)
        ]
        once = filter_sparse(rows, 4)
        assert filter_sparse(once, 4) == once

    def test_recount_property(self):
        rng = np.random.default_rng(31)
        rows = [
            ci(user=f"u{rng.integers(6)}", poi=f"p{rng.integers(7)}", ts=BASE + i)
            for i in range(200)
        ]
        out = filter_sparse(rows, 10)
        users = collections.Counter(c.user_id for c in out)
        pois = collections.Counter(c.poi_id for c in out)
        assert all(v >= 10 for v in users.values())
        assert all(v >= 10 for v in pois.values())

    def test_min_count_validated(self):
        with pytest.raises(ValueError):
            filter_sparse([], min_count=0)


class TestBuildTrajectories:
    def test_single_session(self):
        rows = [ci(ts=BASE + i * 3600) for i in range(3)]
        (t,) = build_trajectories(rows)
        assert t.session_breaks == []
        assert len(t.sessions()) == 1

    def test_gap_inserts_boundary(self):
        rows = [ci(ts=BASE), ci(ts=BASE + 25 * 3600)]
        (t,) = build_trajectories(rows)
        assert t.session_breaks == [1]
        assert [len(s) for s in t.sessions()] == [1, 1]

    def test_exact_gap_is_same_session(self):
        rows = [ci(ts=BASE), ci(ts=BASE + 24 * 3600)]
        (t,) = build_trajectories(rows)
        assert t.session_breaks == []

    def test_interleaved_users_sorted_and_grouped(self):
        rng = np.random.default_rng(37)
        rows = []
        expected = {}
        for u in ("a", "b", "c"):
            times = sorted(int(x) for x in rng.integers(BASE, BASE + 10**6, size=12))
            expected[u] = times
            rows += [ci(user=u, ts=t) for t in times]
        rng.shuffle(rows)
        trajectories = build_trajectories(rows)
        assert [t.user_id for t in trajectories] == ["a", "b", "c"]
        for t in trajectories:
            assert [c.ts for c in t.events] == expected[t.user_id]
            assert all(x.ts <= y.ts for x, y in zip(t.events, t.events[1:]))


class TestSplit:
    def test_user_with_10_samples(self):
        rows = make_cycle("u1", [f"p{i}" for i in range(4)], BASE, count=11)
        split = split_chronological(build_trajectories(rows))
        assert (len(split.train), len(split.val), len(split.test)) == (8, 1, 1)

    def test_two_samples_degenerate(self):
        rows = make_cycle("u1", ["p1", "p2"], BASE, count=3)
        split = split_chronological(build_trajectories(rows))
        assert (len(split.train), len(split.val), len(split.test)) == (2, 0, 0)

    def test_seven_samples_floor_rounding(self):
        rows = make_cycle("u1", [f"p{i}" for i in range(3)], BASE, count=8)
        split = split_chronological(build_trajectories(rows))
        assert (len(split.train), len(split.val), len(split.test)) == (5, 0, 2)

    def test_time_order_per_user(self):
        rng = np.random.default_rng(41)
        rows = []
        for u in range(5):
            count = int(rng.integers(5, 40))
            rows += make_cycle(f"u{u}", [f"p{i}" for i in range(6)], BASE + u, count=count)
        split = split_chronological(build_trajectories(rows))
        per_user = {}
        for name, samples in (("train", split.train), ("val", split.val), ("test", split.test)):
            for s in samples:
                per_user.setdefault(s.user_id, {}).setdefault(name, []).append(
                    split.target(s).ts
                )
        for user, parts in per_user.items():
            if "train" in parts and "val" in parts:
                assert max(parts["train"]) <= min(parts["val"])
            if "val" in parts and "test" in parts:
                assert max(parts["val"]) <= min(parts["test"])
            if "train" in parts and "test" in parts:
                assert max(parts["train"]) <= min(parts["test"])

    def test_samples_disjoint_and_cover(self):
        rows = make_cycle("u1", [f"p{i}" for i in range(5)], BASE, count=20)
        rows += make_cycle("u2", [f"p{i}" for i in range(5)], BASE, count=7)
        split = split_chronological(build_trajectories(rows))
        ids = [s.sample_id for s in split.train + split.val + split.test]
        assert len(ids) == len(set(ids)) == 19 + 6

    def test_targets_within_vocab(self):
        rows = make_cycle("u1", ["a", "b", "c"], BASE, count=12)
        split = split_chronological(build_trajectories(rows))
        for s in split.train + split.val + split.test:
            assert split.target(s).poi_id in split.poi_vocab.index

    def test_prefix_limit(self):
        rows = make_cycle("u1", [f"p{i}" for i in range(9)], BASE, count=9)
        split = split_chronological(build_trajectories(rows))
        last = split.test[-1] if split.test else split.train[-1]
        assert len(split.prefix(last)) == last.target_pos
        assert len(split.prefix(last, limit=3)) == 3

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(43)
        rows = []
        for u in range(4):
            count = int(rng.integers(4, 30))
            rows += make_cycle(f"u{u}", [f"p{i}" for i in range(5)], BASE + u * 7, count=count)
        split = split_chronological(build_trajectories(rows))
        save_split(split, str(tmp_path / "split"))
        loaded = load_split(str(tmp_path / "split"))
        assert loaded.poi_vocab.index == split.poi_vocab.index
        assert loaded.user_vocab.index == split.user_vocab.index
        assert loaded.category_vocab.index == split.category_vocab.index
        assert np.array_equal(loaded.poi_coords, split.poi_coords)
        for name in ("train", "val", "test"):
            assert getattr(loaded, name) == getattr(split, name)
        for user, traj in split.trajectories.items():
            assert loaded.trajectories[user].events == traj.events
            assert loaded.trajectories[user].session_breaks == traj.session_breaks

    def test_ratio_validation(self):
        with pytest.raises(ValueError):
            split_chronological([], ratios=(0.5, 0.2, 0.2))
