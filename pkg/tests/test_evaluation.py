import itertools

import numpy as np
import pytest

from gimspot.core import GroundTruthInstance, interval_iou
from gimspot.evaluation import Counts, apex_errors, evaluate_dataset, format_report, match_proposals, nmae
from gimspot.inference import Proposal


def _g(s, e, cls=0, apex=None):
    return GroundTruthInstance(s, (s + e) // 2 if apex is None else apex, e, cls)


def _p(s, e, cls=0, oic=0.5, apex=None):
    return Proposal(s, e, cls, oic, (s + e) // 2 if apex is None else apex)


def max_matching(props, truths, thr):
    """Largest number of disjoint (proposal, truth) pairs with IoU >= thr, by exhaustion."""
    ok = [[interval_iou(p.interval, g.interval) >= thr and p.cls == g.cls for g in truths] for p in props]
    best = 0
    n = len(truths)
    for perm in itertools.permutations(range(n), min(n, len(props))) if props else [()]:
        for chosen in itertools.combinations(range(len(props)), len(perm)):
            best = max(best, sum(ok[i][j] for i, j in zip(chosen, perm)))
    return best


class TestCounts:
    def test_scores(self):
        c = Counts(3, 1, 2)
        assert c.precision == 0.75 and c.recall == 0.6
        assert c.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)

    def test_empty(self):
        assert Counts().f1 == 0.0

    def test_add(self):
        assert Counts(1, 2, 3) + Counts(1, 1, 1) == Counts(2, 3, 4)


class TestMatching:
    def test_exact_match(self):
        m = match_proposals([_p(10, 20)], [_g(10, 20)])
        assert m.overall == Counts(1, 0, 0)

    def test_below_threshold(self):
        m = match_proposals([_p(10, 20)], [_g(15, 25)])
        assert m.overall == Counts(0, 1, 1)

    def test_class_mismatch(self):
        m = match_proposals([_p(10, 20, cls=1)], [_g(10, 20, cls=0)])
        assert m.overall == Counts(0, 1, 1)

    def test_duplicate_is_fp(self):
        m = match_proposals([_p(10, 20, oic=0.9), _p(10, 21, oic=0.5)], [_g(10, 20)])
        assert m.overall == Counts(1, 1, 0)
        assert m.pairs[0][0].oic == 0.9

    def test_higher_oic_claims_first(self):
        # both proposals overlap the single truth; only the higher-OIC one counts
        m = match_proposals([_p(10, 19, oic=0.3), _p(11, 20, oic=0.8)], [_g(10, 20)])
        assert m.pairs[0][0].oic == 0.8

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            match_proposals([], [], iou_threshold=0.0)

    def test_random_against_exhaustive_assignment(self, rng):
        done = 0
        while done < 300:
            truths = []
            pos = 0
            for _ in range(int(rng.integers(0, 4))):
                s = pos + int(rng.integers(0, 6))
                e = s + int(rng.integers(2, 10))
                truths.append(_g(s, e, int(rng.integers(0, 2))))
                pos = e + 1
            props = []
            for _ in range(int(rng.integers(0, 4))):
                s = int(rng.integers(0, max(pos, 1) + 3))
                props.append(_p(s, s + int(rng.integers(1, 10)), int(rng.integers(0, 2)), float(rng.random())))
            ious = [interval_iou(p.interval, g.interval) for p in props for g in truths]
            if any(v == 0.5 for v in ious) or len({p.oic for p in props}) < len(props):
                continue
            m = match_proposals(props, truths, 0.5)
            assert m.overall.tp == max_matching(props, truths, 0.5)
            assert m.overall.tp + m.overall.fp == len(props)
            assert m.overall.tp + m.overall.fn == len(truths)
            done += 1


class TestNmae:
    def test_value(self):
        m = match_proposals([_p(10, 19, apex=14)], [_g(10, 19, apex=12)])
        assert nmae(m) == pytest.approx(2 / 10)

    def test_none_without_tp(self):
        assert nmae(match_proposals([], [_g(0, 5)])) is None

    def test_per_class(self):
        m = match_proposals([_p(0, 9, 0, apex=3), _p(20, 24, 1, apex=22)], [_g(0, 9, 0, apex=4), _g(20, 24, 1, apex=20)])
        assert apex_errors(m, 0).errors == [0.1] and apex_errors(m, 1).errors == [0.4]
        assert nmae(m) == pytest.approx(0.25)


class TestDataset:
    def test_pooled_counts(self):
        preds = {"a": [_p(0, 9)], "b": [_p(50, 59), _p(80, 89)]}
        truths = {"a": [_g(0, 9)], "b": [_g(50, 59)]}
        r = evaluate_dataset(preds, truths)
        assert (r["overall"]["tp"], r["overall"]["fp"], r["overall"]["fn"]) == (2, 1, 0)
        assert r["counts"] == {"videos": 2, "proposals": 3, "truths": 2}
        assert r["nmae"]["overall"] == 0.0 and r["nmae"]["ME"] is None

    def test_per_video_mode(self):
        preds = {"a": [_p(0, 9)], "b": []}
        truths = {"a": [_g(0, 9)], "b": [_g(50, 59)]}
        r = evaluate_dataset(preds, truths, mode="per_video")
        assert r["per_video"]["a"]["f1"] == 1.0 and r["per_video"]["b"]["f1"] == 0.0
        assert r["per_video_mean_f1"] == 0.5

    def test_mismatched_ids(self):
        with pytest.raises(ValueError):
            evaluate_dataset({"a": []}, {"b": []})

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            evaluate_dataset({}, {}, mode="macro")

    def test_report_format(self):
        r = evaluate_dataset({"a": [_p(0, 9)]}, {"a": [_g(0, 9)]})
        text = format_report(r)
        assert "overall" in text and "n/a" in text
