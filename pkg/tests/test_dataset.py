import os
from collections import Counter

import numpy as np
import pytest

from getnext import dataset as ds

from conftest import make_checkin

HEADER = "user_id,poi_id,category_id,lat,lon,timestamp_utc\n"


def write(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- ingest ------------------------------------------------------------------

def test_ingest_empty_file(tmp_path):
    assert ds.ingest(write(tmp_path, "")) == ([], [])


def test_ingest_single_row(tmp_path):
    qs, errors = ds.ingest(write(tmp_path, HEADER + "u1,p1,c1,40.5,-73.9,1333324800\n"))
    assert errors == []
    assert qs == [ds.CheckIn("u1", "p1", "c1", 40.5, -73.9, 1333324800)]


def test_ingest_sorts_by_user_then_time(tmp_path):
    rows = ["u1,p1,c1,0,0,300", "u1,p2,c1,0,0,100", "u1,p3,c1,0,0,200"]
    qs, _ = ds.ingest(write(tmp_path, HEADER + "\n".join(rows) + "\n"))
    assert [q.timestamp for q in qs] == sorted([300, 100, 200])


def test_ingest_reports_malformed_rows(tmp_path):
    rows = ["u1,p1,c1,0,0,100", "u1,p2,c1,0,0,later", "u1,p3,c1,95,0,300", "u1,p1,c1,0,0,400",
            "u2,p1,c1,0,0,500"]
    qs, errors = ds.ingest(write(tmp_path, HEADER + "\n".join(rows) + "\n"))
    assert len(qs) == 3
    assert [e.line for e in errors] == [3, 4]


def test_ingest_fails_when_mostly_malformed(tmp_path):
    rows = ["u1,p1,c1,0,0,x", "u1,p1,c1,0,0,y", "u1,p1,c1,0,0,1"]
    with pytest.raises(ds.DataError):
        ds.ingest(write(tmp_path, HEADER + "\n".join(rows) + "\n"))


def test_ingest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ds.ingest(tmp_path / "absent.csv")


def test_ingest_foursquare_converts_to_utc(tmp_path):
    line = "u1\tp1\tc1\tBar\t40.7\t-74.0\t-240\tTue Apr 03 18:00:09 +0000 2012\n"
    (q,), errors = ds.ingest(write(tmp_path, line, "fs.tsv"), "foursquare_tsv")
    assert errors == []
    assert q.timestamp == 1333476009
    assert q.tz_offset_min == -240 and q.local_hour == 14


def test_canonical_roundtrip_with_quoting(tmp_path):
    qs = [make_checkin(user='we,ird "id"', ts=10), make_checkin(poi="p,2", ts=20, tz=60)]
    ds.write_canonical(tmp_path / "o.csv", qs)
    back, errors = ds.ingest(tmp_path / "o.csv")
    assert errors == [] and back == sorted(qs, key=lambda q: (q.user_id, q.timestamp))


def test_checkin_invariants():
    with pytest.raises(ValueError):
        make_checkin(lat=91)
    with pytest.raises(ValueError):
        make_checkin(lon=-181)
    with pytest.raises(ValueError):
        make_checkin(ts=0)


def test_slot_uses_local_time():
    q = make_checkin(ts=ds.SYNTH_EPOCH + 3600 * 23 + 1800, tz=60)
    assert q.slot == 1 and q.day_fraction == pytest.approx(1800 / 86400)


# -- preprocess --------------------------------------------------------------

def test_twelve_checkins_one_poi_all_train():
    raw = [make_checkin(ts=ds.SYNTH_EPOCH + 300 * i) for i in range(12)]
    d = ds.preprocess(raw)
    assert [len(t) for t in d.train] == [12]
    assert d.validation == [] and d.test == []


def test_distinct_pois_filtered_out():
    raw = [make_checkin(poi=f"p{i}", ts=ds.SYNTH_EPOCH + 60 * i) for i in range(10)]
    with pytest.raises(ds.DataError, match="10 check-ins"):
        ds.preprocess(raw)


def test_singletons_eliminated():
    raw = [make_checkin(ts=ds.SYNTH_EPOCH), make_checkin(ts=ds.SYNTH_EPOCH + 25 * 3600)]
    with pytest.raises(ds.DataError):
        ds.preprocess(raw, min_poi_checkins=1, min_user_checkins=1)


def test_split_trajectories_on_gap():
    qs = [make_checkin(ts=t) for t in (100, 200, 100 + 90000, 100 + 90100, 10**6)]
    trajs = ds.split_trajectories(qs, 24)
    assert [len(t) for t in trajs] == [2, 2]
    for t in trajs:
        gaps = np.diff([q.timestamp for q in t.checkins])
        assert np.all(gaps >= 0) and np.all(gaps <= 24 * 3600)


def test_filter_order_poi_then_user():
    # u2's only visits are to a rare POI, so u2 disappears once that POI does
    raw = [make_checkin("u1", "pA", ds.SYNTH_EPOCH + 60 * i) for i in range(10)]
    raw += [make_checkin("u2", "pB", ds.SYNTH_EPOCH + 60 * i) for i in range(9)]
    d = ds.preprocess(raw)
    assert set(d.user_index) == {"u1"} and set(d.poi_index) == {"pA"}


@pytest.fixture(scope="module")
def planted():
    return ds.preprocess(ds.synthesize(20, 40, 4, "planted_shared_paths", seed=2))


def test_split_exclusivity_and_order(planted):
    d = planted
    ids = [id(q) for name in ds.SPLITS for t in d.split(name) for q in t.checkins]
    assert len(ids) == len(set(ids))
    starts = {name: [t.start for t in d.split(name)] for name in ds.SPLITS}
    assert max(starts["train"]) <= min(starts["validation"])
    assert max(starts["validation"]) <= min(starts["test"])


def test_no_short_trajectories(planted):
    assert all(len(t) >= 2 for name in ds.SPLITS for t in planted.split(name))


def test_indices_are_bijections(planted):
    for index in (planted.poi_index, planted.user_index, planted.category_index):
        assert sorted(index.values()) == list(range(len(index)))


def test_unseen_never_indexed(planted):
    train_pois = {q.poi_id for t in planted.train for q in t.checkins}
    assert set(planted.poi_index) == train_pois
    assert planted.unseen_pois().isdisjoint(planted.poi_index)


def test_frequencies_from_train_only(planted):
    freq = Counter(q.poi_id for t in planted.train for q in t.checkins)
    assert all(planted.poi_meta[p].freq == freq.get(p, 0) for p in planted.poi_meta)


def test_filter_idempotence(planted):
    again = ds.preprocess(planted.all_checkins())
    for name in ds.SPLITS:
        assert [t.checkins for t in again.split(name)] == [t.checkins for t in planted.split(name)]
    assert again.poi_index == planted.poi_index


def test_per_user_split_mode():
    d = ds.preprocess(ds.synthesize(4, 8, 2, "cycle", 0), split_mode="per_user")
    assert {t.user_id for t in d.test} == set(d.user_index)


def test_save_load_roundtrip(tmp_path, planted):
    ds.save_dataset(planted, tmp_path / "d")
    back = ds.load_dataset(tmp_path / "d")
    for name in ds.SPLITS:
        assert back.split(name) == planted.split(name)
    assert back.poi_meta == planted.poi_meta and back.user_index == planted.user_index


# -- synthesize --------------------------------------------------------------

def test_cycle_is_periodic():
    qs = ds.synthesize(1, 4, 2, "cycle", seed=7)
    assert [q.poi_id for q in qs[:8]] == ["p0000", "p0001", "p0002", "p0003"] * 2
    assert all(a.poi_id == b.poi_id for a, b in zip(qs, qs[4:]))


def test_synthesize_deterministic(tmp_path):
    for name in ("a.csv", "b.csv"):
        ds.write_canonical(tmp_path / name, ds.synthesize(5, 12, 3, "planted_shared_paths", seed=7))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_uniform_frequencies_balanced():
    qs = ds.synthesize(10, 20, 4, "uniform", seed=1)
    counts = Counter(q.poi_id for q in qs)
    assert len(qs) == 2000 and len(counts) == 20
    assert max(counts.values()) / min(counts.values()) < 3


def test_planted_history_lengths():
    qs = ds.synthesize(10, 40, 4, "planted_shared_paths", seed=0)
    per_user = Counter(q.user_id for q in qs)
    assert sorted(per_user.values()) == [40] * 8 + [240] * 2


@pytest.mark.parametrize("args", [(2, 3, 1, "cycle"), (0, 8, 1, "cycle"), (2, 8, 9, "cycle"),
                                  (2, 8, 2, "spiral"), (1, 8, 2, "planted_shared_paths")])
def test_synthesize_rejects_bad_sizes(args):
    with pytest.raises(ValueError):
        ds.synthesize(*args, seed=0)


# -- cohorts -----------------------------------------------------------------

def cohort_dataset(counts):
    trajs = []
    for u, c in enumerate(counts):
        for k in range(c):
            qs = [make_checkin(f"u{u:03d}", "p", ds.SYNTH_EPOCH + 1000 * k + s) for s in range(2)]
            trajs.append(ds.Trajectory(f"u{u:03d}_{k}", f"u{u:03d}", qs))
    return ds.Dataset(trajs, [], [], {}, {}, {}, {}, {})


def test_cohorts_distinct_counts():
    users, _ = ds.cohort_labels(cohort_dataset(range(1, 101)))
    assert Counter(users.values()) == {"inactive": 15, "normal": 70, "very_active": 15}
    assert users["u000"] == "inactive" and users["u099"] == "very_active"


def test_cohorts_ties_by_id():
    users, _ = ds.cohort_labels(cohort_dataset([3] * 100))
    assert Counter(users.values()) == {"inactive": 15, "normal": 70, "very_active": 15}
    assert [users[f"u{i:03d}"] for i in (0, 14, 15, 84, 85)] == \
        ["inactive", "inactive", "normal", "normal", "very_active"]


def test_cohorts_tiny_population_clamps():
    users, _ = ds.cohort_labels(cohort_dataset([1, 2]))
    assert users == {"u000": "inactive", "u001": "very_active"}


def test_trajectory_cohorts_by_test_length(planted):
    _, trajs = ds.cohort_labels(planted)
    assert set(trajs) == {t.trajectory_id for t in planted.test}
    length = {t.trajectory_id: len(t) for t in planted.test}
    short = max(length[t] for t, g in trajs.items() if g == "short")
    long = min(length[t] for t, g in trajs.items() if g == "long")
    assert short <= long


@pytest.mark.skipif(not os.environ.get("GETNEXT_NYC_PATH"), reason="set GETNEXT_NYC_PATH to the NYC TSV")
def test_nyc_user_cohort_sizes():
    raw, _ = ds.ingest(os.environ["GETNEXT_NYC_PATH"], "foursquare_tsv")
    users, _ = ds.cohort_labels(ds.preprocess(raw))
    sizes = Counter(users.values())
    assert abs(sizes["inactive"] - 137) <= 5
    assert abs(sizes["normal"] - 766) <= 5
    assert abs(sizes["very_active"] - 144) <= 5
