"""Top@k evaluation over a chronological split.

Top@k is the fraction of test transitions whose ground-truth POI ranks
within the first k positions of a full-vocabulary ranking, pooled over all
users (each transition counts once).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Corpus, Split, Task, TimeKey, make_transitions
from .errors import EmptyTestSet, InvalidArgument, MismatchedConfig, VocabMismatch
from .model import Batch, ModelParams, candidate_scores, context, ranks_of

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10, 20, 50)
CHUNK = 512


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = DEFAULT_KS
    task: Task = Task("next")
    rank_mode: str = "inner"
    candidate_scope: str = "all_pois"
    baseline_mode: bool = False

    def __post_init__(self):
        if not self.ks or any(k < 1 for k in self.ks):
            raise InvalidArgument(f"ks must be positive integers, got {self.ks}")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise InvalidArgument(f"ks must be strictly increasing, got {self.ks}")
        if self.candidate_scope != "all_pois":
            raise InvalidArgument(f"unsupported candidate scope {self.candidate_scope!r}")


@dataclass(frozen=True)
class EvalReport:
    task: str
    ks: tuple[int, ...]
    hits: tuple[int, ...]
    n_samples: int
    per_user: dict[str, tuple[int, ...]] | None = field(default=None, compare=False)
    skipped: int = 0

    @property
    def top(self) -> dict[int, float]:
        return {k: h / self.n_samples for k, h in zip(self.ks, self.hits)}

    def to_text(self, name: str | None = None) -> str:
        lines = []
        if name is not None:
            lines.append(f"name: {name}")
        lines.append(f"task: {self.task}")
        lines.append(f"n_samples: {self.n_samples}")
        if self.skipped:
            lines.append(f"skipped_unknown: {self.skipped}")
        for k, r in self.top.items():
            lines.append(f"top@{k}: {r:.6f}")
        return "\n".join(lines)


@dataclass(frozen=True)
class TestTransitions:
    """Flattened test transitions in model index space."""

    user: np.ndarray
    prev_poi: np.ndarray
    prev_time: np.ndarray
    next_poi: np.ndarray
    next_time: np.ndarray

    def __len__(self) -> int:
        return len(self.user)

    def batch(self, sl: slice = slice(None)) -> Batch:
        return Batch(self.user[sl], self.prev_poi[sl], self.prev_time[sl], self.next_time[sl])


def test_transitions(split: Split, task: Task) -> TestTransitions:
    """Transitions of each full sequence whose target lies in the test region.

    The source visit may sit in the training region (the first test visit
    is predicted from the last training one).
    """
    cols: list[list] = [[], [], [], [], []]
    for u, (seq, cut) in enumerate(zip(split.corpus.sequences, split.cut)):
        for i, j in make_transitions(seq, task):
            if j < cut:
                continue
            a, b = seq[i], seq[j]
            for col, val in zip(cols, (u, a.poi, tuple(a.time), b.poi, tuple(b.time))):
                col.append(val)
    return TestTransitions(
        np.array(cols[0], dtype=np.int64),
        np.array(cols[1], dtype=np.int64),
        np.array(cols[2], dtype=np.int64).reshape(-1, 3),
        np.array(cols[3], dtype=np.int64),
        np.array(cols[4], dtype=np.int64).reshape(-1, 3),
    )


test_transitions.__test__ = False  # not a pytest test despite the name
TestTransitions.__test__ = False


def target_ranks(params: ModelParams, trans: TestTransitions, rank_mode: str, baseline_mode: bool = False) -> np.ndarray:
    """1-based full-vocabulary rank of each transition's ground-truth POI."""
    out = np.empty(len(trans), dtype=np.int64)
    for lo in range(0, len(trans), CHUNK):
        sl = slice(lo, lo + CHUNK)
        batch = trans.batch(sl)
        ctx = context(params, batch, baseline_mode)
        scores = candidate_scores(params, ctx, batch.prev_poi, rank_mode)
        out[sl] = ranks_of(scores, trans.next_poi[sl])
    return out


def _check_vocab(params: ModelParams, split: Split) -> None:
    if split.corpus.n_users > params.n_users:
        raise VocabMismatch(f"split has {split.corpus.n_users} users, model knows {params.n_users}")
    if split.corpus.n_pois > params.n_pois:
        raise VocabMismatch(f"split has {split.corpus.n_pois} POIs, model knows {params.n_pois}")


def evaluate(params: ModelParams, split: Split, config: EvalConfig = EvalConfig(), per_user: bool = False) -> EvalReport:
    """Top@k of ``params`` on the test region of ``split``.

    ``split`` must already be expressed in the model's index space (see
    :func:`align_split`).
    """
    _check_vocab(params, split)
    if config.ks[-1] > params.n_pois:
        raise InvalidArgument(f"largest k ({config.ks[-1]}) exceeds the number of POIs ({params.n_pois})")
    trans = test_transitions(split, config.task)
    if len(trans) == 0:
        raise EmptyTestSet(f"no test transitions for task {config.task}")
    ranks = target_ranks(params, trans, config.rank_mode, config.baseline_mode)
    hits = tuple(int(np.sum(ranks <= k)) for k in config.ks)
    breakdown = None
    if per_user:
        breakdown = {}
        for u, name in enumerate(split.corpus.users):
            r = ranks[trans.user == u]
            if r.size:
                breakdown[name] = tuple(int(np.sum(r <= k)) for k in config.ks) + (int(r.size),)
    skipped = getattr(split, "skipped", 0)
    return EvalReport(str(config.task), tuple(config.ks), hits, len(trans), breakdown, skipped)


@dataclass(frozen=True)
class AlignedSplit(Split):
    skipped: int = 0


def align_split(split: Split, users: Sequence[str], pois: Sequence[str], skip_unknown: bool = False) -> AlignedSplit:
    """Re-index ``split`` into a model's vocabularies.

    Unknown ids raise :class:`VocabMismatch`, or with ``skip_unknown`` the
    offending visits are dropped and counted in ``skipped``.
    """
    uidx = {u: i for i, u in enumerate(users)}
    pidx = {p: i for i, p in enumerate(pois)}
    seqs: list[tuple] = [() for _ in users]
    cuts = [0] * len(users)
    skipped = 0
    for name, seq, cut in zip(split.corpus.users, split.corpus.sequences, split.cut):
        if name not in uidx:
            if not skip_unknown:
                raise VocabMismatch(f"unknown user {name!r}")
            skipped += len(seq)
            continue
        kept = []
        new_cut = 0
        for pos, v in enumerate(seq):
            poi = split.corpus.pois[v.poi]
            if poi not in pidx:
                if not skip_unknown:
                    raise VocabMismatch(f"unknown POI {poi!r} (user {name!r})")
                skipped += 1
                continue
            kept.append(v._replace(poi=pidx[poi]))
            if pos < cut:
                new_cut += 1
        seqs[uidx[name]] = tuple(kept)
        cuts[uidx[name]] = new_cut
    corpus = Corpus(tuple(users), tuple(pois), tuple(seqs))
    if skipped:
        log.warning("skipped %d visit(s) with ids unknown to the model", skipped)
    return AlignedSplit(corpus, tuple(cuts), split.dropped_users, skipped)


@dataclass(frozen=True)
class Comparison:
    names: tuple[str, ...]
    ks: tuple[int, ...]
    task: str
    values: tuple[tuple[float, ...], ...]  # per report, per k
    improvement: tuple[tuple[float, ...], ...]  # first vs each other report, per k

    def to_text(self) -> str:
        width = max(len(n) for n in self.names) + 2
        head = "model".ljust(width) + "".join(f"top@{k}".rjust(10) for k in self.ks)
        lines = [f"task: {self.task}", head]
        for name, row in zip(self.names, self.values):
            lines.append(name.ljust(width) + "".join(f"{x:10.4f}" for x in row))
        for name, row in zip(self.names[1:], self.improvement):
            label = f"{self.names[0]} vs {name}"
            lines.append(label.ljust(width) + "".join(f"{x * 100:+9.2f}%" for x in row))
        return "\n".join(lines)


def compare(reports: Sequence[tuple[str, EvalReport]]) -> Comparison:
    """Side-by-side Top@k table with relative improvement ``(a - b) / b`` of
    the first report over each of the others."""
    if not reports:
        raise InvalidArgument("nothing to compare")
    first = reports[0][1]
    for name, rep in reports[1:]:
        if rep.ks != first.ks or rep.task != first.task:
            raise MismatchedConfig(f"report {name!r} differs in ks or task from {reports[0][0]!r}")
    values = tuple(tuple(rep.top[k] for k in first.ks) for _, rep in reports)
    base = values[0]

    def rel(a: float, b: float) -> float:
        if b == 0:
            return 0.0 if a == 0 else float("inf")
        return (a - b) / b

    improvement = tuple(tuple(rel(a, b) for a, b in zip(base, row)) for row in values[1:])
    return Comparison(tuple(n for n, _ in reports), first.ks, first.task, values, improvement)


@dataclass(frozen=True)
class CaseQuery:
    prev_time: TimeKey
    prev_poi: int
    next_time: TimeKey


def case_study(
    params: ModelParams,
    user: int,
    queries: Iterable[CaseQuery],
    watch: Sequence[int],
    rank_mode: str = "inner",
    baseline_mode: bool = False,
) -> list[dict[int, int]]:
    """Rank of each watched POI under each query, in query order."""
    queries = list(queries)
    if not 0 <= user < params.n_users:
        raise VocabMismatch(f"user index {user} outside model vocabulary")
    for p in list(watch) + [q.prev_poi for q in queries]:
        if not 0 <= p < params.n_pois:
            raise VocabMismatch(f"POI index {p} outside model vocabulary")
    out = []
    for q in queries:
        batch = Batch(
            np.array([user]), np.array([q.prev_poi]), np.array([tuple(q.prev_time)]), np.array([tuple(q.next_time)])
        )
        scores = candidate_scores(params, context(params, batch, baseline_mode), batch.prev_poi, rank_mode)
        watch_arr = np.array(list(watch), dtype=np.int64)
        ranks = ranks_of(np.repeat(scores, len(watch_arr), axis=0), watch_arr)
        out.append({int(p): int(r) for p, r in zip(watch_arr, ranks)})
    return out


def write_report_csv(path: str | Path, named: Sequence[tuple[str, EvalReport]]) -> None:
    """One row per (model, task, k): name, task, k, ratio, hits, n_samples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "task", "k", "ratio", "hits", "n_samples"])
        for name, rep in named:
            for k, h in zip(rep.ks, rep.hits):
                writer.writerow([name, rep.task, k, repr(h / rep.n_samples), h, rep.n_samples])
