import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spot.config import EvalConfig
from spot.data import ActionSegment
from spot.decode import ActionInstance
from spot.evaluation import average_precision, dump_report, format_report, map_report, tiou


def brute_ap(preds, gts, thr):
    """Quadratic matcher: every prediction scans every ground truth."""
    if not gts:
        return 0.0, []
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][3], preds[i][1]))
    used = [False] * len(gts)
    hits = []
    for i in order:
        vid, s, e, _ = preds[i]
        best, best_j = -1.0, None
        for j, (gv, gs, ge) in enumerate(gts):
            if gv != vid or used[j]:
                continue
            inter = max(0.0, min(e, ge) - max(s, gs))
            ov = inter / ((e - s) + (ge - gs) - inter)
            if ov >= thr and ov > best:
                best, best_j = ov, j
        if best_j is not None:
            used[best_j] = True
        hits.append(best_j is not None)
    ap, tp, prev_recall = 0.0, 0, 0.0
    precisions = []
    for k, h in enumerate(hits, 1):
        tp += h
        precisions.append(tp / k)
    tp = 0
    for k, h in enumerate(hits, 1):
        tp += h
        if h:
            recall = tp / len(gts)
            ap += (recall - prev_recall) * max(precisions[k - 1 :])
            prev_recall = recall
    return ap, hits


def test_tiou_examples():
    assert tiou((0, 10), (5, 15)) == pytest.approx(1 / 3)
    assert tiou((2, 4), (2, 4)) == 1.0
    assert tiou((0, 1), (2, 3)) == 0.0


@given(st.floats(0, 100), st.floats(0.01, 50), st.floats(0, 100), st.floats(0.01, 50))
def test_tiou_properties(s1, l1, s2, l2):
    a, b = (s1, s1 + l1), (s2, s2 + l2)
    v = tiou(a, b)
    assert v == tiou(b, a)
    assert 0.0 <= v <= 1.0
    if a == b:
        assert v == 1.0


def test_ap_examples():
    assert average_precision([("v", 0, 10, 0.5)], [("v", 0, 10)], 0.5) == 1.0
    assert average_precision([], [("v", 0, 10)], 0.5) == 0.0
    # the hit (tIoU 0.6) is ranked first, the miss second
    preds = [("v", 0, 6, 0.9), ("v", 20, 30, 0.8)]
    assert tiou((0, 6), (0, 10)) == pytest.approx(0.6)
    assert average_precision(preds, [("v", 0, 10)], 0.5) == 1.0


def test_ap_each_gt_matched_once():
    preds = [("v", 0, 10, 0.9), ("v", 0, 10, 0.8)]
    assert average_precision(preds, [("v", 0, 10)], 0.5) == 1.0
    assert average_precision(preds, [("v", 0, 10), ("v", 0, 9)], 0.5) == 1.0


@st.composite
def ap_instances(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n_gt, n_pred = draw(st.integers(0, 25)), draw(st.integers(0, 25))
    vids = ["a", "b", "c"]
    gts = []
    for _ in range(n_gt):
        s = float(rng.integers(0, 40))
        gts.append((vids[rng.integers(0, 3)], s, s + float(rng.integers(1, 15))))
    preds = []
    for _ in range(n_pred):
        if gts and rng.random() < 0.6:
            v, gs, ge = gts[rng.integers(0, len(gts))]
            s, e = gs + float(rng.integers(-3, 4)), ge + float(rng.integers(-3, 4))
            if e <= s:
                e = s + 1
        else:
            v, s = vids[rng.integers(0, 3)], float(rng.integers(0, 40))
            e = s + float(rng.integers(1, 15))
        preds.append((v, s, e, float(rng.integers(0, 6)) / 5))  # coarse scores force ties
    return preds, gts


@settings(max_examples=300, deadline=None)
@given(ap_instances(), st.sampled_from([0.3, 0.5, 0.7, 0.95]))
def test_ap_matches_quadratic_matcher(inst, thr):
    preds, gts = inst
    ref, _ = brute_ap(preds, gts, thr)
    assert average_precision(preds, gts, thr) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(ap_instances(), st.floats(0.1, 10), st.floats(0, 5))
def test_ap_invariant_to_monotone_rescaling(inst, a, b):
    preds, gts = inst
    scaled = [(v, s, e, a * sc**3 + b) for v, s, e, sc in preds]
    assert average_precision(scaled, gts, 0.5) == pytest.approx(average_precision(preds, gts, 0.5), abs=1e-12)


def _gt():
    return {"v1": [ActionSegment(0, 10, 0), ActionSegment(20, 30, 1)], "v2": [ActionSegment(5, 8, 0)]}


def test_map_perfect_and_empty():
    gt = _gt()
    perfect = {v: [ActionInstance(s.start, s.end, s.label, 1.0) for s in segs] for v, segs in gt.items()}
    rep = map_report(perfect, gt, EvalConfig())
    assert rep["average"] == 1.0 and all(v == 1.0 for v in rep["per_threshold"].values())
    empty = map_report({}, gt, EvalConfig())
    assert empty["average"] == 0.0


def test_map_spurious_class_warns_and_scores_zero():
    gt = _gt()
    dets = {v: [ActionInstance(s.start, s.end, s.label, 1.0) for s in segs] for v, segs in gt.items()}
    dets["v1"].append(ActionInstance(40, 50, 7, 0.5))
    with pytest.warns(UserWarning, match="7"):
        rep = map_report(dets, gt, EvalConfig(tiou_grid=(0.5,)))
    assert rep["per_class"][0.5][7] == 0.0
    assert rep["average"] == pytest.approx(2 / 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_map_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    gt, dets = {}, {}
    for v in ("a", "b", "c"):
        gt[v] = []
        for _ in range(rng.integers(0, 6)):
            s = float(rng.integers(0, 50))
            gt[v].append(ActionSegment(s, s + float(rng.integers(1, 12)), int(rng.integers(0, 3))))
        dets[v] = []
        for _ in range(rng.integers(0, 8)):
            s = float(rng.integers(0, 50))
            dets[v].append(ActionInstance(s, s + float(rng.integers(1, 12)), int(rng.integers(0, 3)), float(rng.random())))
    cfg = EvalConfig(tiou_grid=(0.3, 0.5, 0.7))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = map_report(dets, gt, cfg)
    classes = sorted({s.label for segs in gt.values() for s in segs} | {d.label for ds in dets.values() for d in ds})
    for thr in cfg.tiou_grid:
        aps = []
        for c in classes:
            p = [(v, d.start, d.end, d.score) for v, ds in dets.items() for d in ds if d.label == c]
            g = [(v, s.start, s.end) for v, segs in gt.items() for s in segs if s.label == c]
            aps.append(brute_ap(p, g, thr)[0])
        expected = float(np.mean(aps)) if aps else 0.0
        assert rep["per_threshold"][thr] == pytest.approx(expected, abs=1e-12)


def test_report_outputs(tmp_path):
    gt = _gt()
    rep = map_report({}, gt, EvalConfig(tiou_grid=(0.5, 0.75)))
    text = format_report(rep)
    assert "0.50" in text and "0.75" in text and "Avg" in text
    dump_report(rep, tmp_path / "r.json")
    assert (tmp_path / "r.json").read_text().startswith("{")
