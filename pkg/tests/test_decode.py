import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spot.config import DecodeConfig
from spot.decode import (
    ActionInstance,
    decode_instances,
    detect,
    dump_detections,
    load_detections,
    pick_run,
    runs,
    soft_nms,
)


def brute_soft_nms(cands, sigma, thr, max_out):
    """List-based Gaussian SoftNMS; a candidate is pruned once a decay pushes it below ``thr``."""
    pool = [[c.start, c.end, c.label, c.score, i] for i, c in enumerate(cands)]
    kept = []
    while pool:
        best = min(pool, key=lambda c: (-c[3], c[0], c[4]))
        pool.remove(best)
        kept.append(best)
        survivors = []
        for c in pool:
            if c[2] == best[2]:
                inter = max(0.0, min(c[1], best[1]) - max(c[0], best[0]))
                union = (c[1] - c[0]) + (best[1] - best[0]) - inter
                iou = inter / union if union > 0 else 0.0
                f = math.exp(-(iou**2) / sigma)
                c[3] *= f
                if f < 1.0 and c[3] < thr:
                    continue
            survivors.append(c)
        pool = survivors
    kept.sort(key=lambda c: (-c[3], c[0]))
    return [(c[0], c[1], c[2], c[3]) for c in kept[:max_out]]


def test_runs_and_pick_run():
    col = np.array([0, 1, 1, 0, 1, 1, 1, 0, 1])
    assert runs(col) == [(1, 2), (4, 6), (8, 8)]
    assert pick_run(col, 5) == (4, 6)
    assert pick_run(col, 0) == (4, 6)  # longest run when the anchor is outside all runs
    assert pick_run(np.array([1, 0, 1]), 1) == (0, 0)  # ties: earliest
    assert pick_run(np.zeros(4), 2) is None


def test_decode_hand_example():
    T = 5
    P = np.zeros((3, T))
    P[2] = 1.0
    P[:, 2] = [0.9, 0.05, 0.05]
    M = np.zeros((T, T))
    M[:, 2] = [0.1, 0.8, 0.9, 0.8, 0.1]
    out = decode_instances(P, M, duration=5.0, cfg=DecodeConfig(mask_thresholds=(0.5,)))
    assert len(out) == 1
    c = out[0]
    assert (c.start, c.end, c.label) == (1.0, 4.0, 0)
    assert c.score == pytest.approx(0.81, abs=1e-12)


def test_decode_no_confident_snippets():
    P = np.full((3, 6), 0.3)  # action probs 0.3, not above 0.3
    assert decode_instances(P, np.ones((6, 6)), 6.0, DecodeConfig()) == []


def test_decode_dedupes_identical_runs():
    T = 6
    P = np.zeros((2, T))
    P[0] = 1.0
    M = np.zeros((T, T))
    M[1:4, :] = 0.95  # every threshold gives the same run
    out = decode_instances(P, M, 6.0, DecodeConfig())
    assert len(out) == 1


@st.composite
def decode_inputs(draw):
    T = draw(st.integers(2, 12))
    K = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**16))
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(K + 1, T)) * 2
    P = np.exp(logits) / np.exp(logits).sum(0)
    M = rng.random((T, T))
    return P, M, draw(st.floats(1.0, 300.0))


@settings(max_examples=100, deadline=None)
@given(decode_inputs(), st.floats(0.05, 0.9), st.floats(0.0, 0.5))
def test_decode_properties(inp, thr, bump):
    P, M, duration = inp
    lo = decode_instances(P, M, duration, DecodeConfig(class_threshold=thr))
    hi = decode_instances(P, M, duration, DecodeConfig(class_threshold=min(thr + bump, 0.99)))
    for c in lo:
        assert 0.0 <= c.start < c.end <= duration
        assert 0.0 <= c.score <= 1.0
    assert {(c.start, c.end, c.label) for c in hi} <= {(c.start, c.end, c.label) for c in lo}


def test_soft_nms_examples():
    cfg = DecodeConfig(nms_threshold=0.6, nms_sigma=0.5)
    one = [ActionInstance(0, 1, 0, 0.3)]
    assert soft_nms(one, cfg) == one
    disjoint = [ActionInstance(0, 1, 0, 0.9), ActionInstance(2, 3, 0, 0.2)]
    assert [c.score for c in soft_nms(disjoint, cfg)] == [0.9, 0.2]
    same = [ActionInstance(0, 1, 0, 0.9), ActionInstance(0, 1, 0, 0.8)]
    assert 0.8 * math.exp(-1 / 0.5) == pytest.approx(0.108, abs=1e-3)
    assert soft_nms(same, cfg) == [same[0]]
    kept = soft_nms(same, DecodeConfig(nms_threshold=0.1))
    assert kept[1].score == pytest.approx(0.8 * math.exp(-2), abs=1e-15)


def test_soft_nms_is_per_class():
    cfg = DecodeConfig()
    out = soft_nms([ActionInstance(0, 1, 0, 0.9), ActionInstance(0, 1, 1, 0.8)], cfg)
    assert [c.score for c in out] == [0.9, 0.8]


@st.composite
def candidate_sets(draw):
    n = draw(st.integers(0, 25))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    starts = rng.uniform(0, 50, n).round(draw(st.sampled_from([0, 1, 3])))
    lengths = rng.uniform(0.5, 20, n).round(1)
    return [ActionInstance(float(s), float(s + l), int(rng.integers(0, 3)), float(rng.random())) for s, l in zip(starts, lengths)]


@settings(max_examples=300, deadline=None)
@given(candidate_sets(), st.floats(0.0, 0.9), st.floats(0.1, 2.0), st.integers(1, 30))
def test_soft_nms_matches_brute_force(cands, thr, sigma, max_out):
    cfg = DecodeConfig(nms_threshold=thr, nms_sigma=sigma, max_outputs=max_out)
    got = [(c.start, c.end, c.label, c.score) for c in soft_nms(cands, cfg)]
    ref = brute_soft_nms(cands, sigma, thr, max_out)
    assert [g[:3] for g in got] == [r[:3] for r in ref]
    assert max((abs(g[3] - r[3]) for g, r in zip(got, ref)), default=0.0) < 1e-9


def test_detections_json_roundtrip(tmp_path):
    dets = {"v1": [ActionInstance(1.0, 2.5, 1, 0.7)], "v2": []}
    dump_detections(dets, ["a", "b"], tmp_path / "d.json")
    raw = json.loads((tmp_path / "d.json").read_text())
    assert raw["results"]["v1"] == [{"segment": [1.0, 2.5], "label": "b", "score": 0.7}]
    assert load_detections(tmp_path / "d.json", ["a", "b"]) == dets


def test_load_unwrapped_detections(tmp_path):
    (tmp_path / "d.json").write_text(json.dumps({"v": [{"segment": [0, 1], "label": "a", "score": 0.5}]}))
    assert load_detections(tmp_path / "d.json", ["a"]) == {"v": [ActionInstance(0.0, 1.0, 0, 0.5)]}


def test_detect_oracle_recovers_segment():
    T = 10
    P = np.zeros((2, T))
    P[1] = 1.0
    P[:, 3:7] = [[1.0], [0.0]]
    M = np.zeros((T, T))
    M[3:7, 3:7] = 1.0
    out = detect(P, M, 20.0, DecodeConfig())
    assert out == [ActionInstance(6.0, 14.0, 0, 1.0)]
