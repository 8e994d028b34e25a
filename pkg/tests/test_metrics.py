import warnings
from fractions import Fraction

import numpy as np
import pytest

from ampseg.metrics import (ConfusionCounts, EpisodeResult, binary_iou, episode_result, iou,
                            miou_background, miou_fg_bg, miou_foreground, read_jsonl,
                            write_jsonl)


def recount_iou(pred, gt, c):
    inter = union = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if g == 255:
            continue
        inter += (p == c) and (g == c)
        union += (p == c) or (g == c)
    return 1.0 if union == 0 else inter / union


def test_three_sevenths():
    # 5 predicted, 5 true, 3 shared: 3 / (5 + 5 - 3)
    pred = np.array([[1, 1, 1, 1, 1, 0, 0, 0]])
    gt = np.array([[0, 0, 1, 1, 1, 1, 1, 0]])
    assert iou(pred, gt, 1) == 3 / 7
    assert Fraction(iou(pred, gt, 1)).limit_denominator(100) == Fraction(3, 7)


def test_ignore_pixels_excluded():
    pred = np.array([[1, 1, 0, 0]])
    gt = np.array([[1, 255, 255, 0]])
    assert iou(pred, gt, 1) == 1.0
    assert iou(pred, gt, 0) == 1.0


def test_absent_class_counts_as_perfect():
    assert iou(np.zeros((2, 2)), np.zeros((2, 2)), 4) == 1.0
    assert binary_iou(np.zeros(3, bool), np.zeros(3, bool)) == 1.0


def test_recount_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pred = rng.integers(0, 4, (5, 6))
        gt = rng.integers(0, 4, (5, 6))
        gt[rng.uniform(size=gt.shape) < 0.2] = 255
        for c in range(4):
            assert abs(iou(pred, gt, c) - recount_iou(pred, gt, c)) <= 1e-12


def test_episode_result_counts():
    pred = np.array([[3, 3, 0], [1, 0, 0]])  # class 1 is a wrong base class, not foreground
    gt = np.array([[1, 0, 0], [1, 0, 0]])
    r = episode_result(pred, gt, 3)
    assert (r.fg_intersection, r.fg_union) == (1, 3)
    assert (r.bg_intersection, r.bg_union) == (3, 5)
    rec = r.to_record()
    assert rec["fg_iou"] == 1 / 3 and rec["fg_bg_iou"] == 0.5 * (1 / 3 + 3 / 5)


def test_miou_pools_counts_then_averages_classes():
    results = [EpisodeResult(1, 1, 2, 5, 6), EpisodeResult(1, 3, 8, 2, 4),
               EpisodeResult(2, 1, 4, 1, 1)]
    # class 1: 4/10, class 2: 1/4
    assert miou_foreground(results) == pytest.approx((Fraction(4, 10) + Fraction(1, 4)) / 2,
                                                     abs=1e-15)
    # background: class 1: 7/10, class 2: 1
    assert miou_background(results) == pytest.approx((0.7 + 1.0) / 2, abs=1e-15)
    assert miou_fg_bg(results) == pytest.approx(0.5 * (0.325 + 0.85), abs=1e-15)


def test_missing_class_warns_and_is_excluded():
    results = [EpisodeResult(1, 1, 2, 1, 1)]
    with pytest.warns(UserWarning):
        assert miou_foreground(results, classes=(1, 2)) == 0.5
    with pytest.raises(ValueError):
        miou_foreground([])


def test_confusion_counts_match_recount():
    rng = np.random.default_rng(1)
    counts = ConfusionCounts((0, 1, 2))
    preds, gts = [], []
    for _ in range(5):
        p, g = rng.integers(0, 3, (4, 4)), rng.integers(0, 3, (4, 4))
        g[0, 0] = 255
        counts.update(p, g)
        preds.append(p)
        gts.append(g)
    P, G = np.concatenate(preds), np.concatenate(gts)
    for c, v in counts.per_class().items():
        assert abs(v - recount_iou(P, G, c)) <= 1e-12
    assert counts.miou() == pytest.approx(np.mean([recount_iou(P, G, c) for c in range(3)]))


def test_jsonl_round_trip(tmp_path):
    recs = [{"b": 1, "a": [1, 2]}, {"x": 0.5}]
    path = tmp_path / "r.jsonl"
    write_jsonl(path, recs)
    assert read_jsonl(path) == recs
    assert path.read_text().splitlines()[0] == '{"a": [1, 2], "b": 1}'


def test_four_by_four_hand_count():
    pred = np.zeros((4, 4), int)
    gt = np.zeros((4, 4), int)
    pred[0, :4] = 2
    pred[1, :2] = 2   # 6 predicted
    gt[0, 1:4] = 2
    gt[2, 0] = 2      # 4 true, 3 shared
    assert iou(pred, gt, 2) == 3 / 7
    r = episode_result(pred == 2, gt == 2, 1)
    assert miou_foreground([r]) == pytest.approx(0.428571, abs=1e-6)


def test_identical_and_disjoint():
    m = np.array([[1, 0], [0, 1]])
    assert iou(m, m, 1) == 1.0
    assert iou(m, 1 - m, 1) == 0.0


def test_two_class_mean_and_conventions():
    results = [EpisodeResult(1, 1, 5, 4, 5), EpisodeResult(2, 3, 5, 4, 5)]
    assert miou_foreground(results) == pytest.approx(0.4, abs=1e-15)
    assert miou_background(results) == pytest.approx(0.8, abs=1e-15)
    assert miou_fg_bg(results) == pytest.approx(0.6, abs=1e-15)
    perfect = [EpisodeResult(c, 7, 7, 9, 9) for c in (1, 2, 3)]
    assert miou_foreground(perfect) == 1.0 and miou_fg_bg(perfect) == 1.0


def test_random_bundle_recount():
    rng = np.random.default_rng(2)
    results, preds, gts = [], [], []
    for c in (1, 2, 1):
        p, g = rng.uniform(size=(6, 6)) < 0.4, rng.uniform(size=(6, 6)) < 0.4
        results.append(episode_result(np.where(p, c, 0), g, c))
        preds.append(p)
        gts.append(g)
    fg = {}
    bg = {}
    for c, p, g in zip((1, 2, 1), preds, gts):
        i, u = fg.get(c, (0, 0))
        fg[c] = (i + int((p & g).sum()), u + int((p | g).sum()))
        i, u = bg.get(c, (0, 0))
        bg[c] = (i + int((~p & ~g).sum()), u + int((~p | ~g).sum()))
    want_fg = np.mean([i / u for i, u in fg.values()])
    want_bg = np.mean([i / u for i, u in bg.values()])
    assert abs(miou_fg_bg(results) - 0.5 * (want_fg + want_bg)) <= 1e-12


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = rng.integers(0, 3, (4, 5)), rng.integers(0, 3, (4, 5))
        for c in range(3):
            v = iou(a, b, c)
            assert 0.0 <= v <= 1.0 and v == iou(b, a, c)


def test_aggregation_order_invariant():
    rng = np.random.default_rng(4)
    results = [EpisodeResult(int(c), int(i), int(i + u), 5, 9) for c, i, u in
               zip(rng.integers(1, 4, 30), rng.integers(0, 10, 30), rng.integers(1, 10, 30))]
    base = miou_fg_bg(results)
    for _ in range(5):
        assert miou_fg_bg([results[j] for j in rng.permutation(30)]) == base
