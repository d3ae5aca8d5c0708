"""Check-in ingestion, filtering, trajectory splitting and synthetic corpora."""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CANONICAL_HEADER = ["user_id", "poi_id", "category_id", "lat", "lon", "timestamp_utc"]
TZ_COLUMN = "tz_offset_min"
FOURSQUARE_TIME = "%a %b %d %H:%M:%S %z %Y"
SYNTH_EPOCH = 1333324800  # 2012-04-02 00:00:00 UTC


class DataError(ValueError):
    """Input data cannot be turned into a usable dataset."""


@dataclass(frozen=True, order=True)
class CheckIn:
    user_id: str
    poi_id: str
    category_id: str
    lat: float
    lon: float
    timestamp: int
    tz_offset_min: int = 0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if self.timestamp <= 0:
            raise ValueError(f"timestamp {self.timestamp} must be positive")

    @property
    def local_seconds(self) -> int:
        """Seconds since local midnight."""
        return (self.timestamp + 60 * self.tz_offset_min) % 86400

    @property
    def local_hour(self) -> int:
        return self.local_seconds // 3600

    @property
    def local_day(self) -> int:
        return (self.timestamp + 60 * self.tz_offset_min) // 86400

    @property
    def slot(self) -> int:
        """Index of the 30-minute slot of the local day, in [0, 48)."""
        return self.local_seconds // 1800

    @property
    def day_fraction(self) -> float:
        return self.local_seconds / 86400.0


@dataclass
class Trajectory:
    trajectory_id: str
    user_id: str
    checkins: list[CheckIn]

    def __len__(self) -> int:
        return len(self.checkins)

    @property
    def start(self) -> int:
        return self.checkins[0].timestamp

    @property
    def end(self) -> int:
        return self.checkins[-1].timestamp


@dataclass(frozen=True)
class PoiMeta:
    lat: float
    lon: float
    category_id: str
    freq: int


@dataclass(frozen=True)
class RowError:
    line: int
    reason: str


@dataclass
class Dataset:
    train: list[Trajectory]
    validation: list[Trajectory]
    test: list[Trajectory]
    poi_index: dict[str, int]
    user_index: dict[str, int]
    category_index: dict[str, int]
    poi_meta: dict[str, PoiMeta]
    settings: dict = field(default_factory=dict)

    @property
    def n_pois(self) -> int:
        return len(self.poi_index)

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_categories(self) -> int:
        return len(self.category_index)

    def split(self, name: str) -> list[Trajectory]:
        if name not in ("train", "validation", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)

    def is_seen(self, q: CheckIn) -> bool:
        """Whether the check-in's user, POI and category all have trainable indices."""
        return (q.user_id in self.user_index and q.poi_id in self.poi_index
                and q.category_id in self.category_index)

    def unseen_users(self) -> set[str]:
        ids = {t.user_id for t in self.validation + self.test}
        return ids - set(self.user_index)

    def unseen_pois(self) -> set[str]:
        ids = {q.poi_id for t in self.validation + self.test for q in t.checkins}
        return ids - set(self.poi_index)

    def all_checkins(self) -> list[CheckIn]:
        return [q for part in (self.train, self.validation, self.test)
                for t in part for q in t.checkins]


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _parse_canonical(row: dict) -> CheckIn:
    tz = row.get(TZ_COLUMN) or 0
    return CheckIn(row["user_id"], row["poi_id"], row["category_id"],
                   float(row["lat"]), float(row["lon"]), int(row["timestamp_utc"]),
                   int(tz))


def _parse_foursquare(fields: list[str]) -> CheckIn:
    if len(fields) != 8:
        raise ValueError(f"expected 8 columns, got {len(fields)}")
    user, poi, cat, _cat_name, lat, lon, tz, when = fields
    ts = int(datetime.strptime(when.strip(), FOURSQUARE_TIME).timestamp())
    return CheckIn(user, poi, cat, float(lat), float(lon), ts, int(tz))


def ingest(path, fmt: str = "canonical_csv") -> tuple[list[CheckIn], list[RowError]]:
    """Read check-ins from ``path``.

    Returns the parsed check-ins sorted by ``(user_id, timestamp)`` together
    with one :class:`RowError` per malformed row.  More than half the rows
    being malformed raises :class:`DataError`.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    checkins: list[CheckIn] = []
    errors: list[RowError] = []
    with path.open(newline="", encoding="utf-8") as fh:
        if fmt == "canonical_csv":
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                return [], []
            missing = set(CANONICAL_HEADER) - set(reader.fieldnames)
            if missing:
                raise DataError(f"{path}: header lacks columns {sorted(missing)}")
            for row in reader:
                try:
                    checkins.append(_parse_canonical(row))
                except (ValueError, TypeError, KeyError) as exc:
                    errors.append(RowError(reader.line_num, str(exc)))
        elif fmt == "foursquare_tsv":
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    checkins.append(_parse_foursquare(line.rstrip("\r\n").split("\t")))
                except ValueError as exc:
                    errors.append(RowError(lineno, str(exc)))
        else:
            raise ValueError(f"unknown format {fmt!r}")
    total = len(checkins) + len(errors)
    if errors:
        log.warning("%s: %d of %d rows malformed", path, len(errors), total)
    if total and len(errors) > total / 2:
        raise DataError(f"{path}: {len(errors)} of {total} rows malformed")
    checkins.sort(key=lambda q: (q.user_id, q.timestamp))
    return checkins, errors


def write_canonical(path, checkins: Iterable[CheckIn], trajectory_ids: Sequence[str] | None = None) -> None:
    """Write check-ins as canonical CSV.

    The ``tz_offset_min`` column is only emitted when some offset is nonzero;
    a leading ``trajectory_id`` column is emitted when ids are given.
    """
    checkins = list(checkins)
    with_tz = any(q.tz_offset_min for q in checkins)
    header = list(CANONICAL_HEADER) + ([TZ_COLUMN] if with_tz else [])
    if trajectory_ids is not None:
        header = ["trajectory_id"] + header
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, q in enumerate(checkins):
            row = [q.user_id, q.poi_id, q.category_id, repr(q.lat), repr(q.lon), q.timestamp]
            if with_tz:
                row.append(q.tz_offset_min)
            if trajectory_ids is not None:
                row = [trajectory_ids[i]] + row
            w.writerow(row)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def split_trajectories(checkins: Sequence[CheckIn], window_hours: float = 24.0) -> list[Trajectory]:
    """Cut each user's time-ordered check-ins wherever the gap exceeds the window.

    Single check-in pieces are discarded.
    """
    window = window_hours * 3600.0
    by_user: dict[str, list[CheckIn]] = defaultdict(list)
    for q in checkins:
        by_user[q.user_id].append(q)
    out = []
    for user in sorted(by_user):
        seq = sorted(by_user[user], key=lambda q: (q.timestamp, q.poi_id))
        pieces = [[seq[0]]]
        for prev, cur in zip(seq, seq[1:]):
            if cur.timestamp - prev.timestamp > window:
                pieces.append([cur])
            else:
                pieces[-1].append(cur)
        n = 0
        for piece in pieces:
            if len(piece) >= 2:
                out.append(Trajectory(f"{user}_{n}", user, piece))
                n += 1
    return out


def _filter_counts(checkins: list[CheckIn], min_poi: int, min_user: int) -> list[CheckIn]:
    poi_counts = Counter(q.poi_id for q in checkins)
    kept = [q for q in checkins if poi_counts[q.poi_id] >= min_poi]
    user_counts = Counter(q.user_id for q in kept)
    return [q for q in kept if user_counts[q.user_id] >= min_user]


def _assign_splits(trajs: list[Trajectory], fractions: tuple[float, float], mode: str):
    train, val, test = [], [], []

    def place(group: list[Trajectory]):
        keys = sorted((q.timestamp, q.user_id, q.poi_id) for t in group for q in t.checkins)
        n = len(keys)
        val_from, test_from = math.ceil(fractions[0] * n), math.ceil(fractions[1] * n)
        for t in group:
            first = t.checkins[0]
            rank = bisect.bisect_left(keys, (first.timestamp, first.user_id, first.poi_id))
            if rank < val_from:
                train.append(t)
            elif rank < test_from:
                val.append(t)
            else:
                test.append(t)

    if mode == "global":
        place(trajs)
    elif mode == "per_user":
        by_user: dict[str, list[Trajectory]] = defaultdict(list)
        for t in trajs:
            by_user[t.user_id].append(t)
        for user in sorted(by_user):
            place(by_user[user])
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    key = lambda t: (t.start, t.user_id, t.trajectory_id)  # noqa: E731
    return sorted(train, key=key), sorted(val, key=key), sorted(test, key=key)


def build_indices(train: list[Trajectory], pool: Iterable[CheckIn]):
    """Dense indices over train-split ids plus per-POI metadata."""
    train_q = [q for t in train for q in t.checkins]
    poi_index = {p: i for i, p in enumerate(sorted({q.poi_id for q in train_q}))}
    user_index = {u: i for i, u in enumerate(sorted({q.user_id for q in train_q}))}
    category_index = {c: i for i, c in enumerate(sorted({q.category_id for q in train_q}))}
    freq = Counter(q.poi_id for q in train_q)
    coords: dict[str, list] = defaultdict(list)
    cats: dict[str, str] = {}
    for q in pool:
        coords[q.poi_id].append((q.lat, q.lon))
        cats.setdefault(q.poi_id, q.category_id)
    meta = {}
    for p in sorted(coords):
        arr = np.asarray(coords[p])
        meta[p] = PoiMeta(float(arr[:, 0].mean()), float(arr[:, 1].mean()), cats[p], freq.get(p, 0))
    return poi_index, user_index, category_index, meta


def preprocess(raw: Sequence[CheckIn], min_poi_checkins: int = 10, min_user_checkins: int = 10,
               window_hours: float = 24.0, split_mode: str = "global",
               fractions: tuple[float, float] = (0.8, 0.9)) -> Dataset:
    """Filter, split into trajectories and partition chronologically.

    POIs below ``min_poi_checkins`` go first, then users below
    ``min_user_checkins``; trajectories are cut at gaps above
    ``window_hours`` and singletons dropped.  The three steps repeat until
    nothing changes, so feeding the surviving check-ins back in yields the
    same dataset.  Each trajectory lands in the split that holds its first
    check-in: the first 80% of check-ins by time are train, the next 10%
    validation, the rest test.
    """
    if not raw:
        raise DataError("no check-ins to preprocess")
    current = list(raw)
    while True:
        kept = _filter_counts(current, min_poi_checkins, min_user_checkins)
        trajs = split_trajectories(kept, window_hours)
        survivors = [q for t in trajs for q in t.checkins]
        if len(survivors) == len(current):
            break
        current = survivors
        if not current:
            break
    if not trajs:
        n_poi = len({q.poi_id for q in raw})
        n_user = len({q.user_id for q in raw})
        raise DataError(
            f"all data filtered out: {len(raw)} check-ins, {n_poi} POIs, {n_user} users "
            f"(min_poi_checkins={min_poi_checkins}, min_user_checkins={min_user_checkins}, "
            f"window_hours={window_hours})")
    train, val, test = _assign_splits(trajs, fractions, split_mode)
    if not train:
        raise DataError("train split is empty")
    poi_index, user_index, cat_index, meta = build_indices(train, survivors)
    settings = dict(min_poi_checkins=min_poi_checkins, min_user_checkins=min_user_checkins,
                    window_hours=window_hours, split_mode=split_mode)
    return Dataset(train, val, test, poi_index, user_index, cat_index, meta, settings)


# ---------------------------------------------------------------------------
# prepared-directory format: {train,validation,test}.csv + manifest.json
# ---------------------------------------------------------------------------

SPLITS = ("train", "validation", "test")


def save_dataset(d: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        trajs = d.split(name)
        qs = [q for t in trajs for q in t.checkins]
        ids = [t.trajectory_id for t in trajs for _ in t.checkins]
        write_canonical(out / f"{name}.csv", qs, ids)
    manifest = {
        "version": 1,
        "settings": d.settings,
        "poi_index": d.poi_index,
        "user_index": d.user_index,
        "category_index": d.category_index,
        "poi_meta": {p: [m.lat, m.lon, m.category_id, m.freq] for p, m in d.poi_meta.items()},
        "counts": {name: {"trajectories": len(d.split(name)),
                          "checkins": sum(len(t) for t in d.split(name))} for name in SPLITS},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_dataset(out_dir) -> Dataset:
    src = Path(out_dir)
    manifest_path = src / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    parts = {}
    for name in SPLITS:
        groups: dict[str, list[CheckIn]] = {}
        with (src / f"{name}.csv").open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                groups.setdefault(row["trajectory_id"], []).append(_parse_canonical(row))
        parts[name] = [Trajectory(tid, qs[0].user_id, qs) for tid, qs in groups.items()]
    meta = {p: PoiMeta(float(v[0]), float(v[1]), v[2], int(v[3])) for p, v in manifest["poi_meta"].items()}
    return Dataset(parts["train"], parts["validation"], parts["test"], manifest["poi_index"],
                   manifest["user_index"], manifest["category_index"], meta, manifest["settings"])


# ---------------------------------------------------------------------------
# cohorts
# ---------------------------------------------------------------------------

def _quantile_groups(items: list[tuple], quantile: float, labels: tuple[str, str, str]) -> dict:
    """``items`` are (value, id); lowest/highest ``quantile`` share go to the extremes."""
    n = len(items)
    if n == 0:
        return {}
    k = max(1, int(round(quantile * n)))
    k = min(k, (n + 1) // 2)
    ordered = sorted(items)
    out = {}
    for rank, (_, ident) in enumerate(ordered):
        if rank < k:
            out[ident] = labels[0]
        elif rank >= n - k and rank >= k:
            out[ident] = labels[2]
        else:
            out[ident] = labels[1]
    return out


def cohort_labels(d: Dataset, quantile: float = 0.15) -> tuple[dict[str, str], dict[str, str]]:
    """User activity groups and test-trajectory length groups.

    Users are ranked by their number of train trajectories, test
    trajectories by length; ties fall back to id order.
    """
    if not d.train:
        raise DataError("train split is empty")
    counts = Counter(t.user_id for t in d.train)
    users = _quantile_groups([(c, u) for u, c in counts.items()], quantile,
                             ("inactive", "normal", "very_active"))
    trajs = _quantile_groups([(len(t), t.trajectory_id) for t in d.test], quantile,
                             ("short", "middle", "long"))
    return users, trajs


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

def _poi_layout(rng: np.random.Generator, n_pois: int, n_categories: int):
    lat = 40.55 + 0.35 * rng.random(n_pois)
    lon = -74.25 + 0.45 * rng.random(n_pois)
    cats = np.arange(n_pois) % n_categories
    return lat, lon, cats


def _checkin(user: int, poi: int, layout, ts: int) -> CheckIn:
    lat, lon, cats = layout
    return CheckIn(f"u{user:04d}", f"p{poi:04d}", f"c{cats[poi]:03d}",
                   round(float(lat[poi]), 6), round(float(lon[poi]), 6), int(ts))


def synthesize(n_users: int, n_pois: int, n_categories: int, pattern: str, seed: int,
               checkins_per_user: int = 200) -> list[CheckIn]:
    """Generate a deterministic synthetic check-in log.

    ``cycle``: user ``u`` walks POIs ``u, u+1, ...`` (mod ``n_pois``) every
    two hours from local midnight, twelve check-ins a day, on alternate days.
    ``uniform``: same timetable, POIs drawn i.i.d. uniformly.
    ``planted_shared_paths``: a pool of short POI paths is shared by everyone;
    20% of users have long histories and 80% short ones, each session
    chaining two paths.  ``checkins_per_user`` applies to the first two.
    """
    if n_pois < 4:
        raise ValueError("n_pois must be at least 4")
    if n_users < 1 or n_categories < 1 or checkins_per_user < 1:
        raise ValueError("n_users, n_categories and checkins_per_user must be positive")
    if n_categories > n_pois:
        raise ValueError("n_categories cannot exceed n_pois")
    rng = np.random.default_rng(seed)
    layout = _poi_layout(rng, n_pois, n_categories)
    out: list[CheckIn] = []
    if pattern in ("cycle", "uniform"):
        for u in range(n_users):
            for s in range(checkins_per_user):
                day, step = divmod(s, 12)
                ts = SYNTH_EPOCH + 2 * 86400 * day + 7200 * step
                poi = (u + s) % n_pois if pattern == "cycle" else int(rng.integers(n_pois))
                out.append(_checkin(u, poi, layout, ts))
    elif pattern == "planted_shared_paths":
        if n_users < 2:
            raise ValueError("planted_shared_paths needs at least 2 users")
        out = _planted(rng, n_users, n_pois, layout)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    out.sort(key=lambda q: (q.user_id, q.timestamp))
    return out


def _planted(rng, n_users: int, n_pois: int, layout, path_len: int = 4,
             long_sessions: int = 30, short_sessions: int = 5, span_days: int = 240) -> list[CheckIn]:
    perm = rng.permutation(n_pois)
    paths = [perm[i:i + path_len] for i in range(0, n_pois - path_len + 1, path_len)]
    n_long = max(1, int(round(0.2 * n_users)))
    out = []
    for u in range(n_users):
        n_sess = long_sessions if u < n_long else short_sessions
        days = np.sort(rng.choice(span_days // 2, size=n_sess, replace=False)) * 2
        for day in days:
            first, second = rng.choice(len(paths), size=2, replace=False)
            seq = np.concatenate([paths[first], paths[second]])
            ts = SYNTH_EPOCH + int(day) * 86400 + int(rng.integers(7, 10)) * 3600
            for poi in seq:
                out.append(_checkin(u, int(poi), layout, ts))
                ts += int(rng.integers(45, 120)) * 60
    return out
