import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rvos import metrics as M
from rvos.errors import ContractError, ShapeError
from rvos.verify import (brute_boundary_f, brute_iou, brute_map, brute_variance, metric_oracles, random_mask)

masks32 = arrays(np.uint8, (12, 12), elements=st.integers(0, 1))


def square(size, y0, x0, side):
    m = np.zeros((size, size), dtype=np.uint8)
    m[y0:y0 + side, x0:x0 + side] = 1
    return m


def test_iou_examples():
    a = square(8, 1, 1, 4)
    assert M.iou(a, a) == 1.0
    assert M.iou(a, square(8, 5, 5, 3)) == 0.0
    half = a.copy()
    half[1:3] = 0
    assert M.iou(half, a) == 0.5


def test_iou_both_empty_is_one():
    z = np.zeros((5, 5))
    assert M.iou(z, z) == 1.0


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        M.iou(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        M.boundary_f(np.zeros((3, 3)), np.zeros((4, 3)))


def test_boundary_shifted_square_within_tolerance():
    g = square(16, 3, 3, 10)
    p = square(16, 3, 4, 10)
    assert M.boundary_f(p, g, tol=1) == 1.0


def test_boundary_far_apart_is_zero():
    assert M.boundary_f(square(32, 0, 0, 4), square(32, 20, 20, 4), tol=2) == 0.0


def test_boundary_identical_and_empty():
    a = square(10, 2, 2, 5)
    assert M.boundary_f(a, a) == 1.0
    z = np.zeros((10, 10))
    assert M.boundary_f(z, z) == 1.0
    assert M.boundary_f(a, z) == 0.0


def test_default_tolerance_64():
    assert M.default_tolerance(64, 64) == 1
    assert M.default_tolerance(480, 854) == 8


def test_boundary_of_full_frame_is_its_rim():
    b = M.boundary(np.ones((5, 5)))
    assert b.sum() == 16


def test_precision_and_map_examples():
    assert M.precision_at_k([0.55, 0.45], 0.5) == 0.5
    assert M.map_50_95([0.72]) == 0.5
    assert M.map_50_95([1.0, 1.0]) == 1.0
    assert all(M.precision_at_k([1.0], k) == 1.0 for k in M.PRECISION_THRESHOLDS)


def test_precision_uses_strict_threshold():
    assert M.precision_at_k([0.5], 0.5) == 0.0


def test_empty_ious_rejected():
    with pytest.raises(ContractError):
        M.precision_at_k([], 0.5)
    with pytest.raises(ContractError):
        M.stability_variance([])


def test_stability_examples():
    assert M.stability_variance([0.7, 0.7, 0.7]) == 0.0
    assert M.stability_variance([0.0, 1.0]) == 0.25


@settings(max_examples=60, deadline=None)
@given(masks32, masks32)
def test_iou_and_f_symmetric(a, b):
    assert M.iou(a, b) == M.iou(b, a)
    assert M.boundary_f(a, b, 1) == M.boundary_f(b, a, 1)


@settings(max_examples=40, deadline=None)
@given(masks32, masks32, st.integers(0, 5), st.integers(0, 5))
def test_iou_translation_invariant(a, b, dy, dx):
    pa = np.zeros((20, 20), dtype=np.uint8)
    pb = np.zeros((20, 20), dtype=np.uint8)
    pa[dy:dy + 12, dx:dx + 12] = a
    pb[dy:dy + 12, dx:dx + 12] = b
    assert M.iou(pa, pb) == M.iou(a, b)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_precision_monotone_and_map_bounded(ious):
    ps = [M.precision_at_k(ious, k) for k in M.PRECISION_THRESHOLDS]
    assert all(a >= b for a, b in zip(ps, ps[1:]))
    assert M.map_50_95(ious) <= ps[0] + 1e-12
    assert M.map_50_95(ious) == pytest.approx(brute_map(ious), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_variance_matches_direct_sum(xs):
    assert M.stability_variance(xs) == pytest.approx(brute_variance(xs), abs=1e-12)


def test_brute_force_agreement_random_pairs(rng):
    for _ in range(30):
        a, b = random_mask(rng, 24), random_mask(rng, 24)
        assert M.iou(a, b) == brute_iou(a, b)
        assert abs(M.boundary_f(a, b, 2) - brute_boundary_f(a, b, 2)) <= 1e-12


def test_metric_oracle_suite_passes():
    assert all(r.passed for r in metric_oracles(20))


def test_evaluate_ground_truth_against_itself(rng):
    gts = [M.MaskSequence(np.stack([random_mask(rng, 16) for _ in range(4)]), f"v{i}") for i in range(3)]
    rep = M.evaluate(gts, gts)
    assert rep.j_mean == rep.f_mean == rep.jf_mean == 1.0
    assert rep.iou_variance == 0.0
    assert rep.map_50_95 == 1.0


def test_report_outputs_parse(rng):
    gts = [M.MaskSequence(np.stack([random_mask(rng, 16) for _ in range(3)]), "a")]
    preds = [M.MaskSequence(np.stack([random_mask(rng, 16) for _ in range(3)]), "a")]
    rep = M.evaluate(preds, gts)
    data = json.loads(rep.to_json())
    assert data["num_videos"] == 1
    rows = dict(line.split("\t") for line in rep.to_tsv().splitlines())
    assert float(rows["boundary_tolerance"]) == 1.0
    assert float(rows["j_mean"]) == rep.j_mean
    for key in ("j_mean", "f_mean", "jf_mean", "overall_iou", "mean_iou", "map_50_95"):
        assert 0.0 <= data[key] <= 1.0


def test_mask_sequence_rejects_non_binary():
    with pytest.raises(ContractError):
        M.MaskSequence(np.full((1, 2, 2), 2))
