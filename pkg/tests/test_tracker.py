import numpy as np
import pytest

from drci import model as M
from drci import tracker as TK
from drci.boxes import BBox
from drci.data import GenConfig, Sequence, generate_sequence
from drci.tensor import Tensor

NET = M.NetConfig(template_size=32, search_size=64, total_stride=8, channels=(4, 6, 8), embed_dim=16)
GEN = GenConfig(frame_size=96, target_min=12.0, target_max=24.0)


@pytest.fixture(scope="module")
def seq():
    return generate_sequence(5, 6, GEN)


@pytest.fixture(scope="module")
def params():
    return M.init_params(NET, seed=0)


def _flat_regression(params):
    """Every cell predicts the same box centred on itself."""
    p = params.copy()
    p["head.reg.weight"].data[:] = 0.0
    return p


def test_first_box_is_ground_truth(params, seq):
    res = TK.track_sequence(params, seq)
    assert len(res) == len(seq)
    assert res.boxes[0] == seq.gt_boxes[0]
    for box in res.boxes:
        assert box.is_valid()
        assert 0 <= box.x1 and box.x2 <= 96 and 0 <= box.y1 and box.y2 <= 96


def test_tracking_is_deterministic(params, seq):
    assert TK.track_sequence(params, seq).boxes == TK.track_sequence(params, seq).boxes


def test_single_frame_sequence(params, seq):
    one = Sequence(seq.seq_id, seq.frames[:1], seq.gt_boxes[:1])
    res = TK.track_sequence(params, one)
    assert res.boxes == [seq.gt_boxes[0]] and len(res.times_ms) == 1


def test_full_window_weight_keeps_the_centre(params, seq):
    p = _flat_regression(params)
    cfg = TK.TrackConfig(window_weight=1.0)
    state = TK.init(p, seq.frames[0], seq.gt_boxes[0], cfg)
    prev = state.current_box
    box = TK.update(state, seq.frames[1])
    assert box.center == pytest.approx(prev.center, abs=1e-9)


def test_no_smoothing_keeps_the_size(params, seq):
    cfg = TK.TrackConfig(smoothing=0.0)
    state = TK.init(params, seq.frames[0], seq.gt_boxes[0], cfg)
    prev = state.current_box
    box = TK.update(state, seq.frames[1])
    assert (box.width, box.height) == pytest.approx((prev.width, prev.height), rel=1e-12)


def test_box_is_clamped_to_the_frame(params):
    frame = np.full((96, 96, 3), 0.5, dtype=np.float32)
    state = TK.init(params, frame, (0.0, 0.0, 20.0, 20.0))
    for _ in range(3):
        box = TK.update(state, frame)
        assert 0 <= box.x1 and box.x2 <= 96 and 0 <= box.y1 and box.y2 <= 96
        assert box.width >= 4.0 and box.height >= 4.0


def test_decode_boxes_identity():
    coords = np.array([10.0, 20.0, 30.0])
    reg = np.full((3, 3, 4), 5.0)
    boxes = TK.decode_boxes(reg, coords)
    assert tuple(boxes[1, 2]) == (25.0, 15.0, 35.0, 25.0)  # row 1 -> y 20, col 2 -> x 30
    reg = np.random.default_rng(0).uniform(1, 9, size=(3, 3, 4))
    boxes = TK.decode_boxes(reg, coords)
    xs, ys = np.meshgrid(coords, coords)
    np.testing.assert_allclose(xs - boxes[..., 0], reg[..., 0])
    np.testing.assert_allclose(boxes[..., 3] - ys, reg[..., 3])


def test_score_is_monotone_in_quality():
    cls = np.zeros((1, 5, 2))
    qs = np.linspace(-4, 4, 5).reshape(1, 5, 1)
    heads = M.HeadOutputs(Tensor(cls), Tensor(np.ones((1, 5, 4))), Tensor(qs))
    s = TK.score_map(heads)[0]
    assert np.all(np.diff(s) > 0)
    assert s[2] == pytest.approx(0.25)


def test_hanning_window_peaks_at_centre():
    w = TK.hanning_window(9)
    assert w.shape == (9, 9) and np.unravel_index(np.argmax(w), w.shape) == (4, 4)
    assert w[4, 4] == 1.0 and w[0, 0] == 0.0
    assert TK.hanning_window(1).tolist() == [[1.0]]


def test_fps_is_frames_over_time():
    res = TK.TrackResult([BBox(0, 0, 1, 1)] * 4, [10.0, 20.0, 30.0, 40.0])
    assert res.fps == pytest.approx(4 / 0.1)
    assert TK.TrackResult([BBox(0, 0, 1, 1)], [0.0]).fps == float("inf")


def test_result_csv_roundtrip(tmp_path, params, seq):
    res = TK.track_sequence(params, seq)
    back = TK.TrackResult.read_csv(res.write_csv(tmp_path / "r.csv"))
    assert back.boxes == res.boxes and back.times_ms == res.times_ms


@pytest.mark.parametrize("kwargs", [dict(window_weight=1.5), dict(smoothing=-0.1)])
def test_track_config_validation(kwargs):
    with pytest.raises(ValueError):
        TK.TrackConfig(**kwargs)
