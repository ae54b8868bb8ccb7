import numpy as np
import pytest

from rvos import nn
from rvos.errors import ConfigError, ShapeError
from rvos.tensor import Tensor, new_tape


def test_attention_shapes_and_row_stochastic(rng):
    attn = nn.MultiheadAttention(16, 4, rng)
    out, w = attn(Tensor(rng.normal(size=(3, 16))), Tensor(rng.normal(size=(7, 16))), return_weights=True)
    assert out.shape == (3, 16)
    assert w.shape == (4, 3, 7)
    np.testing.assert_allclose(w.data.sum(-1), 1.0)


def test_attention_rejects_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        nn.MultiheadAttention(10, 4, rng)


def test_attention_width_mismatch(rng):
    attn = nn.MultiheadAttention(8, 2, rng)
    with pytest.raises(ShapeError):
        attn(Tensor(np.ones((2, 8))), Tensor(np.ones((2, 6))))


def test_state_dict_round_trip(rng):
    a, b = nn.MLP(4, 8, 2, 3, rng), nn.MLP(4, 8, 2, 3, np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    x = Tensor(rng.normal(size=(5, 4)))
    np.testing.assert_array_equal(a(x).data, b(x).data)


def test_load_state_dict_names_mismatched_key(rng):
    m = nn.Linear(4, 3, rng)
    state = m.state_dict()
    state["weight"] = np.zeros((5, 3))
    with pytest.raises(ShapeError, match="weight"):
        m.load_state_dict(state)


def test_load_state_dict_missing_key(rng):
    m = nn.Linear(4, 3, rng)
    with pytest.raises(Exception, match="bias"):
        m.load_state_dict({"weight": m.weight.data})


def test_adam_minimises_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = nn.Adam([x], lr=0.1)
    for _ in range(300):
        new_tape()
        opt.zero_grad()
        ((x * x).sum()).backward()
        opt.step()
    assert np.abs(x.data).max() < 0.05


def test_adam_clipping_reports_raw_norm():
    x = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    opt = nn.Adam([x], lr=0.1, clip_norm=1.0)
    new_tape()
    (x * x).sum().backward()
    assert opt.step() == pytest.approx(10.0)


def test_sine_encoding_2d_shape():
    assert nn.sine_encoding_2d(3, 5, 16).shape == (15, 16)
