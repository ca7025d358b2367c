import itertools
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bftcn.metrics import (Segment, accuracy, competitive_ratio, edit_score, evaluate, f1_at_k,
                           f1_macro, frames_to_segments, levenshtein, local_competitive_ratio,
                           match_segments, segments_to_frames, summarize, validate_segments)

A, B, C = "A", "B", "C"


class TestSegments:
    def test_run_length(self):
        assert frames_to_segments([A, A, B, B, A]) == [(A, 0, 2), (B, 2, 4), (A, 4, 5)]

    def test_single_frame(self):
        assert frames_to_segments([A]) == [(A, 0, 1)]

    def test_constant(self):
        assert frames_to_segments([B] * 5) == [(B, 0, 5)]

    def test_empty(self):
        with pytest.raises(ValueError):
            frames_to_segments([])

    @given(st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=40))
    def test_round_trip(self, labels):
        segs = frames_to_segments(labels)
        assert segments_to_frames(segs) == labels
        assert all(a.label != b.label for a, b in zip(segs, segs[1:]))

    @pytest.mark.parametrize("segs", [[(A, 0, 2), (B, 1, 3)], [(A, 0, 2), (B, 3, 4)],
                                      [(A, 1, 2)], [(A, 0, 0)]])
    def test_invalid(self, segs):
        with pytest.raises(ValueError):
            validate_segments([Segment(*s) for s in segs])


class TestFrameMetrics:
    def test_identical(self):
        y = [0, 0, 1, 1]
        assert accuracy(y, y) == 100.0
        assert f1_macro(y, y, 2) == 100.0

    def test_hand_example(self):
        gt, pred = [0, 0, 1, 1], [0, 1, 1, 1]
        assert accuracy(pred, gt) == 75.0
        # A: P=1, R=1/2 -> 2/3; B: P=2/3, R=1 -> 4/5
        assert f1_macro(pred, gt, 2) == pytest.approx(100 * (2 / 3 + 0.8) / 2)
        assert round(f1_macro(pred, gt, 2), 2) == 73.33

    def test_absent_class_scores_zero(self):
        y = [0, 0, 1, 1]
        assert f1_macro(y, y, 4) == 50.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([0, 1], [0])
        with pytest.raises(ValueError):
            f1_macro([0, 1], [0], 2)


@lru_cache(maxsize=None)
def lev_oracle(a: tuple, b: tuple) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(lev_oracle(a[1:], b) + 1, lev_oracle(a, b[1:]) + 1,
               lev_oracle(a[1:], b[1:]) + (a[0] != b[0]))


def all_strings(max_len, alphabet="abc"):
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)


class TestEdit:
    def test_identical(self):
        s = frames_to_segments([A, B, A])
        assert edit_score(s, s) == 100.0

    def test_one_deletion(self):
        gt = frames_to_segments([A, B, A])
        pred = frames_to_segments([A, B])
        assert edit_score(pred, gt) == pytest.approx(100 * 2 / 3)

    def test_disjoint(self):
        pred = [Segment(C, 0, 1), Segment(C, 1, 2)]
        assert edit_score(pred, [Segment(A, 0, 1), Segment(B, 1, 2)]) == 0.0

    def test_both_empty(self):
        assert edit_score([], []) == 100.0

    def test_levenshtein_exhaustive(self):
        # all 1093**2 pairs of strings of length <= 6 over three symbols
        strings = list(all_strings(6))
        mismatches = [(a, b) for a in strings for b in strings if levenshtein(a, b) != lev_oracle(a, b)]
        assert not mismatches


def greedy_oracle(pred, gt, k):
    """Greedy matching by explicit IoU table, exact rational arithmetic."""
    available = set(range(len(gt)))
    tp = 0
    for p in sorted(pred, key=lambda s: s.start):
        cands = []
        for j in sorted(available):
            g = gt[j]
            if g.label != p.label:
                continue
            inter = len(set(range(p.start, p.end)) & set(range(g.start, g.end)))
            union = len(set(range(p.start, p.end)) | set(range(g.start, g.end)))
            cands.append((Fraction(inter, union), -j))
        if cands:
            iou, negj = max(cands)
            if iou > Fraction(k, 100):
                available.discard(-negj)
                tp += 1
    return tp, len(pred) - tp, len(gt) - tp


def optimal_tp(pred, gt, k):
    """Best true-positive count over every one-to-one partial assignment."""
    def ok(p, g):
        inter = max(0, min(p.end, g.end) - max(p.start, g.start))
        union = max(p.end, g.end) - min(p.start, g.start)
        return g.label == p.label and inter / union > k / 100

    best = 0
    for choice in itertools.product([None, *range(len(gt))], repeat=len(pred)):
        used = [j for j in choice if j is not None]
        if len(used) != len(set(used)):
            continue
        best = max(best, sum(ok(p, gt[j]) for p, j in zip(pred, choice) if j is not None))
    return best


def random_segmentation(rng, T, n_labels=2, max_segs=4):
    n = int(rng.integers(1, min(max_segs, T) + 1))
    cuts = sorted(rng.choice(np.arange(1, T), size=n - 1, replace=False).tolist())
    bounds = [0] + cuts + [T]
    labels = rng.integers(0, n_labels, size=n)
    return [Segment(int(labels[i]), bounds[i], bounds[i + 1]) for i in range(n)]


class TestF1AtK:
    def test_overlap_sixty(self):
        assert f1_at_k([Segment(A, 0, 60)], [Segment(A, 0, 100)], 50) == 100.0

    def test_overlap_forty(self):
        assert f1_at_k([Segment(A, 0, 40)], [Segment(A, 0, 100)], 50) == 0.0

    def test_threshold_is_strict(self):
        assert f1_at_k([Segment(A, 0, 50)], [Segment(A, 0, 100)], 50) == 0.0

    def test_perfect(self):
        s = frames_to_segments([A, A, B, C, C, A])
        assert all(f1_at_k(s, s, k) == 100.0 for k in (10, 25, 50))

    def test_empty_empty(self):
        assert f1_at_k([], [], 50) == 100.0

    def test_gt_consumed_once(self):
        gt = [Segment(A, 0, 10)]
        pred = [Segment(A, 0, 8), Segment(A, 2, 10)]
        assert match_segments(pred, gt, 50) == (1, 1, 0)

    def test_malformed(self):
        with pytest.raises(ValueError):
            f1_at_k([Segment(A, 3, 3)], [Segment(A, 0, 4)], 10)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([10, 25, 50]))
    @settings(max_examples=300, deadline=None)
    def test_matches_greedy_oracle(self, seed, k):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(4, 30))
        pred = random_segmentation(rng, T)
        gt = random_segmentation(rng, T)
        tp, fp, fn = match_segments(pred, gt, k)
        assert (tp, fp, fn) == greedy_oracle(pred, gt, k)
        assert tp <= optimal_tp(pred, gt, k)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_non_increasing_in_k(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(4, 40))
        pred, gt = random_segmentation(rng, T, 3, 6), random_segmentation(rng, T, 3, 6)
        scores = [f1_at_k(pred, gt, k) for k in range(0, 100, 5)]
        assert all(b <= a for a, b in zip(scores, scores[1:]))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_relabel_equivariance(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(2, 50))
    gt = rng.integers(0, 4, size=T)
    pred = rng.integers(0, 4, size=T)
    perm = rng.permutation(4)
    a = evaluate(pred, gt, 4).to_dict()
    b = evaluate(perm[pred], perm[gt], 4).to_dict()
    assert a == pytest.approx(b, rel=1e-12)


class TestRatios:
    def test_simple(self):
        assert competitive_ratio(72, 80) == pytest.approx(0.9)

    def test_equal(self):
        assert competitive_ratio(55.5, 55.5) == 1.0
        assert local_competitive_ratio(55.5, 55.5) == 1.0

    def test_causal_vs_acausal(self):
        assert round(competitive_ratio(64.96, 80.01), 3) == 0.812

    def test_zero_denominator(self):
        with pytest.raises(ZeroDivisionError):
            competitive_ratio(1, 0)
        with pytest.raises(ZeroDivisionError):
            local_competitive_ratio(1, 0)


def test_summary_uniform_over_videos():
    r1 = evaluate([0, 0, 1, 1], [0, 0, 1, 1], 2, 3, 0.1)
    r2 = evaluate([0, 1, 1, 1], [0, 0, 1, 1], 2, 3, 0.1)
    s = summarize([r1, r2])
    assert s["n_videos"] == 2
    assert s["mean"]["accuracy"] == pytest.approx(87.5)
    assert s["std"]["accuracy"] == pytest.approx(12.5)
    assert r1.to_dict()["fw_frames"] == 3
    with pytest.raises(ValueError):
        summarize([])
