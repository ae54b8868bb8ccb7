import math

import numpy as np
import pytest

from rvos.config import Config
from rvos.errors import ShapeError
from rvos.losses import GroundTruthTrajectory
from rvos.serialize import load_checkpoint
from rvos.synthdata import boxes_from_masks, load_samples, make_dataset
from rvos.tensor import new_tape, no_grad
from rvos.train import (Prepared, TrainingDiverged, build_model, default_vocabulary, evaluate_model, forward_loss,
                        flip_item, load_model, num_threads, predict, predict_all, prepare, train)

SMALL = dict(d_model=16, text_dim=16, heads=2, num_queries=5, num_frames=3, height=32, width=32,
             num_encoder_layers=1, num_decoder_layers=1, num_voc_layers=1, text_layers=1)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    make_dataset(root, 10, 4, 0.5, seed=3, num_frames=3, height=32, width=32)
    vocab = default_vocabulary()
    return root, [prepare(s, vocab) for s in load_samples(root, "train")], \
        [prepare(s, vocab) for s in load_samples(root, "val")]


def test_prepare_downsamples_targets(small_data):
    _, items, _ = small_data
    it = items[0]
    assert it.gt.masks.shape == (3, 8, 8)
    assert it.full_masks.shape == (3, 32, 32)
    assert it.gt.boxes.shape == (3, 4)


@pytest.mark.parametrize("h,v", [(True, False), (False, True), (True, True)])
def test_flip_is_consistent_and_involutive(small_data, h, v):
    _, items, _ = small_data
    vocab = default_vocabulary()
    for it in items:
        flipped = flip_item(it, h, v, vocab)
        boxes, flags = boxes_from_masks(flipped.full_masks)
        vis = flags > 0
        np.testing.assert_allclose(flipped.gt.boxes[vis], boxes[vis], atol=1e-12)
        back = flip_item(flipped, h, v, vocab)
        np.testing.assert_array_equal(back.frames, it.frames)
        np.testing.assert_array_equal(back.gt.masks, it.gt.masks)
        np.testing.assert_allclose(back.gt.boxes, it.gt.boxes, atol=1e-12)
        assert back.token_ids == it.token_ids


def test_flip_swaps_direction_words():
    vocab = default_vocabulary()
    frames = np.zeros((1, 3, 16, 16))
    gt_masks = np.zeros((1, 4, 4))
    item = Prepared("x", frames, vocab.encode("the red circle rising toward the top moving to the left"),
                    GroundTruthTrajectory(np.zeros(1), np.zeros((1, 4)), gt_masks), np.zeros((1, 16, 16)))
    assert vocab.decode(flip_item(item, True, False, vocab).token_ids) == \
        "the red circle rising toward the top moving to the right"
    assert vocab.decode(flip_item(item, False, True, vocab).token_ids) == \
        "the red circle falling toward the bottom moving to the left"
    assert flip_item(item, False, False, vocab) is item


def test_flip_augmented_training_is_deterministic(small_data):
    _, items, _ = small_data
    cfg = Config(**SMALL, epochs=2, augment="flip")
    a, b = train(cfg, items), train(cfg, items)
    plain = train(cfg.replace(augment="none"), items)
    assert a.totals == b.totals and all(math.isfinite(t) for t in a.totals)
    assert a.totals != plain.totals


def test_untrained_contrastive_near_log_nq(small_data):
    _, items, _ = small_data
    cfg = Config(**{**SMALL, "num_queries": 20})
    model = build_model(cfg)
    with no_grad():
        values = [forward_loss(model, it)[1].parts["con"] for it in items]
    assert abs(np.mean(values) - math.log(20)) < 0.05


def test_loss_decreases_over_five_epochs(small_data):
    _, items, _ = small_data
    result = train(Config(**SMALL, epochs=5, lr=1e-3), items)
    assert all(b < a for a, b in zip(result.totals, result.totals[1:]))


def test_training_writes_log_and_checkpoint(small_data, tmp_path):
    _, items, _ = small_data
    cfg = Config(**SMALL, epochs=1)
    result = train(cfg, items, tmp_path / "log.csv", tmp_path / "m.ckpt")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,total,dice,focal,l1,giou,cls,con"
    assert len(lines) == 2
    state = load_checkpoint(tmp_path / "m.ckpt")
    assert set(state) == set(result.model.state_dict())
    reloaded = load_model(cfg, tmp_path / "m.ckpt")
    for k, v in result.model.state_dict().items():
        np.testing.assert_array_equal(reloaded.state_dict()[k], v)


def test_nan_aborts_with_location(small_data):
    _, items, _ = small_data
    cfg = Config(**SMALL, epochs=1)
    model = build_model(cfg)
    model.class_head.mlp.layers[-1].bias.data[:] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, items, model=model)
    assert info.value.epoch == 1 and info.value.step == 1
    new_tape()


def test_geometry_mismatch_rejected(small_data):
    _, items, _ = small_data
    with pytest.raises(ShapeError, match="num_frames"):
        train(Config(**{**SMALL, "num_frames": 4}, epochs=1), items)


def test_checkpoint_shape_mismatch_names_key(small_data, tmp_path):
    _, items, _ = small_data
    cfg = Config(**SMALL, epochs=1)
    train(cfg, items[:1], checkpoint_path=tmp_path / "m.ckpt")
    with pytest.raises(ShapeError, match="query_content"):
        load_model(cfg.replace(num_queries=6), tmp_path / "m.ckpt")


def test_prediction_shapes_and_thread_invariance(small_data, monkeypatch):
    _, items, val = small_data
    model = build_model(Config(**SMALL))
    p = predict(model, val[0])
    assert p.masks.shape == (3, 32, 32) and p.masks.dtype == np.uint8
    assert p.query == int(np.argmax(p.scores))
    one = predict_all(model, val, threads=1)
    many = predict_all(model, val, threads=3)
    assert all(np.array_equal(a.masks, b.masks) for a, b in zip(one, many))
    monkeypatch.setenv("SOC_NUM_THREADS", "2")
    assert num_threads() == 2
    monkeypatch.setenv("SOC_NUM_THREADS", "x")
    assert num_threads() >= 1


def test_same_seed_same_model(small_data):
    _, items, val = small_data
    cfg = Config(**SMALL, epochs=1)
    a, b = train(cfg, items).model, train(cfg, items).model
    for k, v in a.state_dict().items():
        assert v.tobytes() == b.state_dict()[k].tobytes()
    ra, _ = evaluate_model(a, val, threads=1)
    rb, _ = evaluate_model(b, val, threads=2)
    assert ra.to_json() == rb.to_json()
