import numpy as np
import pytest
from hypothesis import given, strategies as st

from drci import evaluation as E
from drci.boxes import BBox, center_error, iou
from drci.tracker import TrackResult
from oracles import AUC_PERFECT, box_iou_ref, ope_recount


def _random_boxes(rng, n):
    xy = rng.uniform(0, 100, size=(n, 2))
    wh = rng.uniform(2, 40, size=(n, 2))
    return [BBox(x, y, x + w, y + h) for (x, y), (w, h) in zip(xy, wh)]


def test_center_error_345():
    assert center_error((0, 0, 2, 2), (3, 4, 5, 6)) == 5.0


def test_iou_one_third():
    assert iou((0, 0, 2, 1), (1, 0, 3, 1)) == pytest.approx(1 / 3)
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0


@given(seed=st.integers(0, 2**16))
def test_iou_matches_oracle_and_is_symmetric(seed):
    a, b = _random_boxes(np.random.default_rng(seed), 2)
    assert iou(a, b) == pytest.approx(box_iou_ref(a, b), abs=1e-12)
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_perfect_tracking():
    gts = [_random_boxes(np.random.default_rng(k), 10) for k in range(3)]
    res = E.ope_evaluate([TrackResult(g, [1.0] * len(g)) for g in gts], gts)
    assert res.precision20 == 1.0
    assert np.all(res.precision_curve == 1.0)
    assert res.auc == pytest.approx(AUC_PERFECT, abs=1e-12)
    assert res.n_frames == 30
    assert res.fps == pytest.approx(1000.0)


def test_disjoint_tracking():
    gts = [[BBox(0, 0, 10, 10)] * 5]
    preds = [[BBox(100, 100, 110, 110)] * 5]
    res = E.ope_evaluate(preds, gts)
    assert res.precision20 == 0.0 and res.auc == 0.0
    assert res.fps == 0.0  # no timings


@given(seed=st.integers(0, 2**16), n_seq=st.integers(1, 3))
def test_curves_match_recount(seed, n_seq):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(1, 8, size=n_seq)
    gts = [_random_boxes(rng, n) for n in lengths]
    # predictions near the truth so the curves are non-trivial
    preds = [[BBox(*(np.array(b) + rng.normal(0, 8, size=4))) for b in g] for g in gts]
    preds = [[BBox(b.x1, b.y1, max(b.x2, b.x1 + 1), max(b.y2, b.y1 + 1)) for b in p] for p in preds]
    res = E.ope_evaluate(preds, gts)
    precision, success = ope_recount(preds, gts)
    np.testing.assert_allclose(res.precision_curve, precision, atol=1e-12)
    np.testing.assert_allclose(res.success_curve, success, atol=1e-12)


def test_pooling_weights_sequences_by_length():
    rng = np.random.default_rng(1)
    gts = [_random_boxes(rng, 3), _random_boxes(rng, 9)]
    preds = [_random_boxes(rng, 3), _random_boxes(rng, 9)]
    pooled = E.ope_evaluate(preds, gts)
    parts = [E.ope_evaluate([p], [g]) for p, g in zip(preds, gts)]
    for curve in ("precision_curve", "success_curve"):
        mixed = (3 * getattr(parts[0], curve) + 9 * getattr(parts[1], curve)) / 12
        np.testing.assert_allclose(getattr(pooled, curve), mixed, atol=1e-12)


def test_length_mismatch_names_sequence():
    gts = [[BBox(0, 0, 1, 1)] * 3, [BBox(0, 0, 1, 1)] * 3]
    preds = [gts[0], gts[1][:2]]
    with pytest.raises(ValueError, match="sequence seq_b: 2 predictions for 3 frames"):
        E.ope_evaluate(preds, gts, names=["seq_a", "seq_b"])
    with pytest.raises(ValueError, match="1 results for 2"):
        E.ope_evaluate(preds[:1], gts)
    with pytest.raises(ValueError, match="nothing"):
        E.ope_evaluate([], [])


def test_thresholds():
    assert E.PRECISION_THRESHOLDS[20] == 20.0 and len(E.PRECISION_THRESHOLDS) == 51
    assert len(E.SUCCESS_THRESHOLDS) == 21 and E.SUCCESS_THRESHOLDS[-1] == 1.0


def test_center_error_at_threshold_counts():
    gts = [[BBox(0, 0, 10, 10)]]
    preds = [[BBox(20, 0, 30, 10)]]  # exactly 20 px away
    assert E.ope_evaluate(preds, gts).precision20 == 1.0


def test_metrics_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    gts = [_random_boxes(rng, 6)]
    res = E.ope_evaluate([TrackResult(_random_boxes(rng, 6), [5.0] * 6)], gts)
    paths = E.write_metrics(tmp_path, res)
    assert paths["metrics"].read_text().startswith("precision20=")
    back = E.read_metrics(tmp_path)
    np.testing.assert_array_equal(back.precision_curve, res.precision_curve)
    np.testing.assert_array_equal(back.success_curve, res.success_curve)
    assert back.fps == res.fps and back.n_frames == 6


def test_first_frame_switch():
    gts = [[BBox(0, 0, 10, 10)] * 4]
    preds = [TrackResult([BBox(0, 0, 10, 10)] + [BBox(100, 100, 110, 110)] * 3, [10.0] * 4)]
    with_first = E.ope_evaluate(preds, gts)
    without = E.ope_evaluate(preds, gts, include_first=False)
    assert with_first.precision20 == 0.25 and with_first.n_frames == 4
    assert without.precision20 == 0.0 and without.n_frames == 3
    assert with_first.fps == without.fps == pytest.approx(100.0)
