import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_params
from transtarec.data import CheckInRecord, Corpus, Task, TimeKey, chronological_split, generate_synthetic, make_transitions, synthetic_successor
from transtarec.errors import EmptyTestSet, InvalidArgument, MismatchedConfig, VocabMismatch
from transtarec.evaluation import (
    CaseQuery,
    EvalConfig,
    EvalReport,
    align_split,
    case_study,
    compare,
    evaluate,
    target_ranks,
    test_transitions,
    write_report_csv,
)
from transtarec.model import HyperParams
from transtarec.training import TrainConfig, train


def two_visit_split(targets, prev=12, n_pois=13):
    """One user per target, each visiting ``prev`` then the target; the target is the only test record."""
    recs = []
    for u, tgt in enumerate(targets):
        recs.append(CheckInRecord(f"u{u}", f"p{prev:02d}", 1_334_244_600 + 7200 * u))
        recs.append(CheckInRecord(f"u{u}", f"p{tgt:02d}", 1_334_244_600 + 7200 * u + 3600))
    # make sure every POI is in the vocabulary so indices equal the numeric ids
    recs += [CheckInRecord("pad", f"p{p:02d}", 1_000_000 + p) for p in range(n_pois)]
    split = chronological_split(Corpus.from_records(recs))
    # drop the padding user's visits but keep its vocabulary slot
    seqs = tuple(s if name != "pad" else () for name, s in zip(split.corpus.users, split.corpus.sequences))
    return type(split)(Corpus(split.corpus.users, split.corpus.pois, seqs), split.cut, 0)


def linear_ranker(n_users, n_pois, prev):
    """d=1 baseline model whose query is always 1 and POI ``k`` scores ``-k``, so POI k ranks k+1."""
    p = random_params(np.random.default_rng(0), n_users, n_pois, 1)
    p.poi_emb[:, 0] = -np.arange(n_pois, dtype=float)
    p.user_emb[:, 0] = 1.0 - p.poi_emb[prev, 0]
    return p


BASELINE = dict(baseline_mode=True, rank_mode="inner")


class TestEvaluate:
    def test_hand_counted_ranks(self):
        split = two_visit_split([0, 2, 6, 11])
        params = linear_ranker(split.corpus.n_users, 13, 12)
        trans = test_transitions(split, Task("next"))
        assert list(target_ranks(params, trans, "inner", True)) == [1, 3, 7, 12]
        report = evaluate(params, split, EvalConfig(ks=(1, 5, 10), **BASELINE))
        assert report.n_samples == 4
        assert report.top == {1: 0.25, 5: 0.5, 10: 0.75}

    def test_perfect_ranker(self):
        split = two_visit_split([0, 0, 0])
        params = linear_ranker(split.corpus.n_users, 13, 12)
        report = evaluate(params, split, EvalConfig(ks=(1, 5, 13), **BASELINE))
        assert report.top == {1: 1.0, 5: 1.0, 13: 1.0}

    def test_exhaustive_k(self, rng):
        corpus = generate_synthetic(6, 7, "time_blind", seed=1, n_records=10)
        split = chronological_split(corpus)
        report = evaluate(random_params(rng, 6, 7, 3), split, EvalConfig(ks=(7,)))
        assert report.top == {7: 1.0}

    def test_counts_match_transitions(self, rng):
        corpus = generate_synthetic(5, 6, "time_blind", seed=2, n_records=9)
        split = chronological_split(corpus)
        params = random_params(rng, 5, 6, 3)
        for task in (Task("next"), Task("timespec"), Task("timespec_gap", 5.0)):
            want = sum(
                1
                for seq, cut in zip(split.corpus.sequences, split.cut)
                for _, j in make_transitions(seq, task)
                if j >= cut
            )
            assert evaluate(params, split, EvalConfig(ks=(1, 2), task=task)).n_samples == want

    @pytest.mark.parametrize("mode", ["inner", "neg_l2"])
    def test_hits_match_brute_force(self, rng, mode):
        corpus = generate_synthetic(4, 9, "time_blind", seed=6, n_records=8)
        split = chronological_split(corpus)
        params = random_params(rng, 4, 9, 4)
        trans = test_transitions(split, Task("next"))
        ranks = target_ranks(params, trans, mode)
        for i in range(len(trans)):
            want = oracles.brute_force_rank(
                params, int(trans.user[i]), int(trans.prev_poi[i]), tuple(trans.prev_time[i]),
                tuple(trans.next_time[i]), int(trans.next_poi[i]), mode,
            )
            assert ranks[i] == want

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["inner", "neg_l2"]))
    def test_monotone_and_exact_ratios(self, seed, mode):
        rng = np.random.default_rng(seed)
        corpus = generate_synthetic(4, 8, "time_blind", seed=seed % 1000, n_records=6)
        report = evaluate(random_params(rng, 4, 8, 3), chronological_split(corpus), EvalConfig(ks=(1, 2, 4, 8), rank_mode=mode))
        ratios = [report.top[k] for k in report.ks]
        assert ratios == sorted(ratios)
        assert all(report.top[k] == h / report.n_samples for k, h in zip(report.ks, report.hits))

    def test_k_above_vocabulary(self, rng):
        split = chronological_split(generate_synthetic(3, 5, seed=1, n_records=5))
        with pytest.raises(InvalidArgument):
            evaluate(random_params(rng, 3, 5, 2), split, EvalConfig(ks=(1, 6)))

    def test_model_too_small(self, rng):
        split = chronological_split(generate_synthetic(3, 5, "time_blind", seed=1, n_records=30))
        assert split.corpus.n_pois == 5
        with pytest.raises(VocabMismatch):
            evaluate(random_params(rng, 3, 4, 2), split, EvalConfig(ks=(1,)))

    def test_empty_test_set(self, rng):
        corpus = Corpus.from_records([CheckInRecord("a", "x", 0), CheckInRecord("a", "y", 3600)])
        split = chronological_split(corpus)
        with pytest.raises(EmptyTestSet):
            evaluate(random_params(rng, 1, 2, 2), split, EvalConfig(ks=(1,), task=Task("timespec_gap", 5.0)))

    def test_per_user_breakdown(self, rng):
        split = chronological_split(generate_synthetic(3, 6, "time_blind", seed=4, n_records=10))
        report = evaluate(random_params(rng, 3, 6, 2), split, EvalConfig(ks=(1, 3)), per_user=True)
        assert sum(v[-1] for v in report.per_user.values()) == report.n_samples
        assert tuple(sum(v[i] for v in report.per_user.values()) for i in range(2)) == report.hits

    def test_unsorted_ks(self):
        with pytest.raises(InvalidArgument):
            EvalConfig(ks=(10, 5))


class TestAlign:
    def corpus(self):
        return Corpus.from_records(
            [CheckInRecord("a", "x", 0), CheckInRecord("a", "y", 10), CheckInRecord("a", "z", 20),
             CheckInRecord("b", "x", 5), CheckInRecord("b", "y", 15)]
        )

    def test_unknown_poi_is_an_error(self):
        split = chronological_split(self.corpus())
        with pytest.raises(VocabMismatch, match="'z'"):
            align_split(split, ["a", "b"], ["x", "y"])

    def test_skip_unknown_counts(self):
        split = chronological_split(self.corpus())
        aligned = align_split(split, ["b", "a"], ["y", "x"], skip_unknown=True)
        assert aligned.skipped == 1
        assert aligned.corpus.users == ("b", "a")
        assert [v.poi for v in aligned.corpus.sequences[1]] == [1, 0]

    def test_unknown_user_skipped(self):
        split = chronological_split(self.corpus())
        aligned = align_split(split, ["a"], ["x", "y", "z"], skip_unknown=True)
        assert aligned.skipped == 2


def report(hits, ks=(1, 5, 10), n=100, task="next"):
    return EvalReport(task, ks, hits, n)


class TestCompare:
    def test_identical(self):
        c = compare([("a", report((10, 20, 30))), ("b", report((10, 20, 30)))])
        assert c.improvement == ((0.0, 0.0, 0.0),)

    def test_ten_percent(self):
        c = compare([("a", report((55,), ks=(10,))), ("b", report((50,), ks=(10,)))])
        assert c.improvement[0][0] == pytest.approx(0.10, abs=1e-12)
        assert "+10.00%" in c.to_text()

    def test_mismatched_ks(self):
        with pytest.raises(MismatchedConfig):
            compare([("a", report((1, 2, 3))), ("b", report((1, 2), ks=(1, 5)))])

    def test_mismatched_task(self):
        with pytest.raises(MismatchedConfig):
            compare([("a", report((1, 2, 3))), ("b", report((1, 2, 3), task="timespec"))])


@pytest.fixture(scope="module")
def trained():
    corpus = generate_synthetic(20, 10, "time_dependent", seed=3)
    split = chronological_split(corpus)
    vocab = split.train.compact()
    result = train(vocab, HyperParams(dim=16), TrainConfig(epochs=100))
    return result.params, vocab, align_split(split, vocab.users, vocab.pois)


class TestCaseStudy:
    def test_all_pois_is_permutation(self, rng):
        p = random_params(rng, 2, 9, 3)
        q = CaseQuery(TimeKey(4, 3, 8), 2, TimeKey(4, 3, 12))
        (ranks,) = case_study(p, 1, [q], list(range(9)))
        assert sorted(ranks.values()) == list(range(1, 10))

    def test_deterministic(self, rng):
        p = random_params(rng, 2, 9, 3)
        q = CaseQuery(TimeKey(4, 3, 8), 2, TimeKey(4, 3, 12))
        assert case_study(p, 0, [q, q], [0, 4, 8]) == case_study(p, 0, [q, q], [0, 4, 8])
        a, b = case_study(p, 0, [q, q], [0, 4, 8])
        assert a == b

    def test_bad_indices(self, rng):
        p = random_params(rng, 2, 4, 3)
        with pytest.raises(VocabMismatch):
            case_study(p, 2, [], [0])
        with pytest.raises(VocabMismatch):
            case_study(p, 0, [CaseQuery(TimeKey(1, 0, 0), 0, TimeKey(1, 0, 1))], [4])

    def test_month_does_not_change_the_preferred_successor(self, trained):
        params, vocab, split = trained
        months = sorted({v.time.month for s in vocab.sequences for v in s})
        trans = test_transitions(split, Task("next"))
        index = {p: i for i, p in enumerate(vocab.pois)}
        stable = 0
        for i in range(len(trans)):
            prev = int(trans.prev_poi[i])
            raw = int(vocab.pois[prev][1:])
            watch = sorted({index[f"p{synthetic_successor(raw, h, 10)}"] for h in (9, 20)})
            t_i, t_j = TimeKey(*trans.prev_time[i]), TimeKey(*trans.next_time[i])
            queries = [CaseQuery(t_i._replace(month=m), prev, t_j._replace(month=m)) for m in months]
            out = case_study(params, int(trans.user[i]), queries, watch)
            assert all(min(r.values()) == 1 for r in out)
            stable += len({min(r, key=r.get) for r in out}) == 1
        assert stable / len(trans) >= 0.9

    def test_trained_model_is_accurate(self, trained):
        params, _, split = trained
        assert evaluate(params, split, EvalConfig(ks=(1, 2))).top[1] >= 0.9


def test_report_csv(tmp_path):
    path = tmp_path / "r.csv"
    write_report_csv(path, [("m", report((10, 40, 50)))])
    rows = list(csv.DictReader(path.open()))
    assert [r["k"] for r in rows] == ["1", "5", "10"]
    assert float(rows[1]["ratio"]) == 0.4
    assert rows[2]["n_samples"] == "100"
