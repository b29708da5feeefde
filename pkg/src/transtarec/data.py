"""Check-in ingestion: parsing, vocabularies, time keys, splits, synthetic data.

Calendar conventions used everywhere in the package (embedding tables are
indexed by these values): ``month`` is 1..12, ``weekday`` is 0..6 with
0 = Monday, ``hour`` is 0..23, all in the record's local time.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import EmptyCorpus, FormatError, InvalidArgument

log = logging.getLogger(__name__)

FORMATS = ("generic_tsv", "foursquare_tsv")
FOURSQUARE_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"
MAX_MALFORMED_FRACTION = 0.5

DAY_HOURS = range(6, 15)
NIGHT_HOURS = range(15, 24)
# synthetic check-in slots: two day, two evening
SYNTHETIC_HOURS = (8, 12, 16, 20)


class TimeKey(NamedTuple):
    month: int
    weekday: int
    hour: int


class CheckInRecord(NamedTuple):
    user: str
    poi: str
    timestamp: int  # UTC seconds
    offset: int = 0  # minutes east of UTC


class Visit(NamedTuple):
    timestamp: int
    poi: int
    time: TimeKey
    offset: int = 0


def decompose_time(timestamp: int | float | datetime, tz_offset_minutes: int = 0) -> TimeKey:
    """Month, weekday and hour of a UTC instant seen from ``tz_offset_minutes``."""
    if isinstance(timestamp, datetime):
        if timestamp.tzinfo is None:
            timestamp = timestamp.replace(tzinfo=timezone.utc)
        utc = timestamp.astimezone(timezone.utc)
    else:
        utc = datetime.fromtimestamp(timestamp, tz=timezone.utc)
    local = utc + timedelta(minutes=tz_offset_minutes)
    return TimeKey(local.month, local.weekday(), local.hour)


def parse_iso(text: str) -> tuple[int, int]:
    """Parse an ISO-8601 instant into (UTC seconds, offset minutes).

    Strings without a zone are taken as UTC.
    """
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    offset = dt.utcoffset()
    assert offset is not None
    return int(math.floor(dt.timestamp())), int(offset.total_seconds() // 60)


def format_iso(timestamp: int, offset: int = 0) -> str:
    tz = timezone(timedelta(minutes=offset))
    return datetime.fromtimestamp(timestamp, tz=tz).isoformat()


@dataclass(frozen=True)
class Corpus:
    """Users, POIs and each user's time-sorted visits.

    Vocabularies are sorted id tuples; ``sequences[u]`` belongs to
    ``users[u]`` and its ``Visit.poi`` values index ``pois``.
    """

    users: tuple[str, ...]
    pois: tuple[str, ...]
    sequences: tuple[tuple[Visit, ...], ...]
    malformed: int = field(default=0, compare=False)

    @classmethod
    def from_records(cls, records: Iterable[CheckInRecord], malformed: int = 0) -> "Corpus":
        by_user: dict[str, list[CheckInRecord]] = {}
        poi_ids: set[str] = set()
        for rec in records:
            by_user.setdefault(rec.user, []).append(rec)
            poi_ids.add(rec.poi)
        users = tuple(sorted(by_user))
        pois = tuple(sorted(poi_ids))
        poi_index = {p: i for i, p in enumerate(pois)}
        sequences = []
        for user in users:
            recs = sorted(by_user[user], key=lambda r: r.timestamp)  # stable for ties
            sequences.append(
                tuple(
                    Visit(r.timestamp, poi_index[r.poi], decompose_time(r.timestamp, r.offset), r.offset)
                    for r in recs
                )
            )
        return cls(users, pois, tuple(sequences), malformed)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_pois(self) -> int:
        return len(self.pois)

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.sequences)

    def records(self) -> Iterator[CheckInRecord]:
        for user, seq in zip(self.users, self.sequences):
            for v in seq:
                yield CheckInRecord(user, self.pois[v.poi], v.timestamp, v.offset)

    def compact(self) -> "Corpus":
        """Drop users without visits and POIs never visited, re-indexing both."""
        return Corpus.from_records(self.records(), self.malformed)

    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.users)}

    def poi_index(self) -> dict[str, int]:
        return {p: i for i, p in enumerate(self.pois)}


def _parse_generic(line: str) -> CheckInRecord:
    user, poi, stamp = line.split("\t")
    ts, offset = parse_iso(stamp)
    return CheckInRecord(user.strip(), poi.strip(), ts, offset)


def _parse_foursquare(line: str) -> CheckInRecord:
    cols = line.split("\t")
    if len(cols) != 8:
        raise ValueError(f"expected 8 columns, got {len(cols)}")
    dt = datetime.strptime(cols[7].strip(), FOURSQUARE_TIME_FORMAT)
    return CheckInRecord(cols[0].strip(), cols[1].strip(), int(dt.timestamp()), int(cols[6]))


def parse_dataset(path: str | Path, format: str = "generic_tsv") -> Corpus:
    """Read a check-in file into a :class:`Corpus`.

    Malformed lines are skipped and counted in ``Corpus.malformed``; if more
    than half of the non-blank lines are malformed the format flag is
    probably wrong and :class:`FormatError` is raised.
    """
    if format not in FORMATS:
        raise InvalidArgument(f"unknown format {format!r}; expected one of {FORMATS}")
    parse_line = _parse_generic if format == "generic_tsv" else _parse_foursquare
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    records: list[CheckInRecord] = []
    bad = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            try:
                rec = parse_line(line)
                if not rec.user or not rec.poi:
                    raise ValueError("empty id")
            except (ValueError, OverflowError) as exc:
                bad += 1
                log.debug("%s:%d malformed: %s", path, lineno, exc)
                continue
            records.append(rec)

    total = len(records) + bad
    if total == 0:
        raise EmptyCorpus(f"{path}: no records")
    if bad > MAX_MALFORMED_FRACTION * total:
        raise FormatError(f"{path}: {bad}/{total} lines malformed for format {format!r}")
    if bad:
        log.warning("%s: skipped %d malformed line(s)", path, bad)
    return Corpus.from_records(records, malformed=bad)


def write_tsv(corpus: Corpus, path: str | Path) -> None:
    """Write ``corpus`` in generic_tsv layout, users in vocabulary order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in corpus.records():
            fh.write(f"{rec.user}\t{rec.poi}\t{format_iso(rec.timestamp, rec.offset)}\n")


@dataclass(frozen=True)
class Split:
    """Per-user chronological split; ``cut[u]`` is the first test position."""

    corpus: Corpus
    cut: tuple[int, ...]
    dropped_users: int = 0

    @property
    def train(self) -> Corpus:
        seqs = tuple(seq[:c] for seq, c in zip(self.corpus.sequences, self.cut))
        return Corpus(self.corpus.users, self.corpus.pois, seqs)

    @property
    def test(self) -> Corpus:
        seqs = tuple(seq[c:] for seq, c in zip(self.corpus.sequences, self.cut))
        return Corpus(self.corpus.users, self.corpus.pois, seqs)


def chronological_split(corpus: Corpus, train_fraction: float = 0.8) -> Split:
    """Give each user's first ``ceil(train_fraction * n)`` visits to training.

    Users with fewer than two visits admit no transition and are dropped.
    The cut is clamped so every kept user has at least one visit on each side.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgument(f"train_fraction must lie in (0, 1), got {train_fraction}")
    kept = [(u, s) for u, s in zip(corpus.users, corpus.sequences) if len(s) >= 2]
    dropped = corpus.n_users - len(kept)
    if not kept:
        raise EmptyCorpus("no user has two or more records")
    cut = []
    for _, seq in kept:
        n = len(seq)
        c = math.ceil(train_fraction * n - 1e-9)
        cut.append(min(max(c, 1), n - 1))
    filtered = Corpus(
        tuple(u for u, _ in kept), corpus.pois, tuple(s for _, s in kept), corpus.malformed
    )
    if dropped:
        log.info("split: dropped %d user(s) with fewer than 2 records", dropped)
    return Split(filtered, tuple(cut), dropped)


TASKS = ("next", "timespec", "timespec_gap")


@dataclass(frozen=True)
class Task:
    kind: str = "next"
    gap_hours: float = 5.0

    def __post_init__(self):
        if self.kind not in TASKS:
            raise InvalidArgument(f"unknown task {self.kind!r}; expected one of {TASKS}")
        if self.gap_hours < 0:
            raise InvalidArgument("gap_hours must be non-negative")

    def __str__(self) -> str:
        if self.kind == "timespec_gap":
            return f"timespec_gap({self.gap_hours:g}h)"
        return self.kind


def make_transitions(seq: Sequence[Visit | int], task: Task | str = "next") -> list[tuple[int, int]]:
    """Index pairs (i, j) of the evaluation/training transitions of one sequence.

    ``next`` gives consecutive pairs, ``timespec`` every ordered pair i < j and
    ``timespec_gap`` the ordered pairs at least ``gap_hours`` apart. Items of
    ``seq`` may be :class:`Visit` or raw UTC seconds.
    """
    if isinstance(task, str):
        task = Task(task)
    n = len(seq)
    if task.kind == "next":
        return [(i, i + 1) for i in range(n - 1)]
    if task.kind == "timespec":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    stamps = [v.timestamp if isinstance(v, Visit) else v for v in seq]
    gap = task.gap_hours * 3600.0
    return [(i, j) for i in range(n) for j in range(i + 1, n) if stamps[j] - stamps[i] >= gap]


PATTERNS = ("time_dependent", "time_blind")
SYNTHETIC_EPOCH = 1334188800  # 2012-04-12T00:00:00Z


def synthetic_successor(poi: int, hour: int, n_pois: int) -> int:
    """Deterministic successor rule of the ``time_dependent`` pattern.

    POIs pair up as (2k, 2k+1): from either member, a visit at a day hour
    (6..14) goes to ``2k`` and a visit at an evening hour (15..23) to
    ``2k+1``. With an odd count the last POI joins the last pair.
    """
    pair = min(poi // 2, n_pois // 2 - 1)
    return 2 * pair if hour in DAY_HOURS else 2 * pair + 1


def generate_synthetic(
    n_users: int,
    n_pois: int,
    pattern: str = "time_dependent",
    seed: int = 0,
    n_records: int = 100,
) -> Corpus:
    """Generate a seeded check-in corpus with a known temporal structure.

    Check-ins fall in the slots of ``SYNTHETIC_HOURS`` (uniformly, with a
    random minute), so day and evening successors are equally likely.
    ``time_dependent`` follows :func:`synthetic_successor`; ``time_blind``
    draws every next POI uniformly, independent of the hour.
    """
    if n_users < 1:
        raise InvalidArgument(f"n_users must be >= 1, got {n_users}")
    if n_pois < 4:
        raise InvalidArgument(f"n_pois must be >= 4, got {n_pois}")
    if n_records < 2:
        raise InvalidArgument(f"n_records must be >= 2, got {n_records}")
    if pattern not in PATTERNS:
        raise InvalidArgument(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")

    rng = np.random.default_rng(seed)
    width = len(str(n_pois - 1))
    uwidth = len(str(n_users - 1))
    records: list[CheckInRecord] = []
    for u in range(n_users):
        user = f"u{u:0{uwidth}d}"
        day = int(rng.integers(0, 60))
        hour = int(rng.choice(SYNTHETIC_HOURS))
        poi = int(rng.integers(0, n_pois))
        for _ in range(n_records):
            ts = SYNTHETIC_EPOCH + day * 86400 + hour * 3600 + int(rng.integers(0, 3600))
            records.append(CheckInRecord(user, f"p{poi:0{width}d}", ts, 0))
            nxt_hour = int(rng.choice(SYNTHETIC_HOURS))
            day += int(nxt_hour <= hour) + int(rng.integers(0, 2))
            hour = nxt_hour
            if pattern == "time_dependent":
                poi = synthetic_successor(poi, hour, n_pois)
            else:
                poi = int(rng.integers(0, n_pois))
    return Corpus.from_records(records)
