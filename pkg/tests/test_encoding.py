import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from nerfedit.encoding import EncodingConfig, deformed_encode, positional_encode


def test_zero_input_alternates_sin_cos():
    enc = positional_encode(torch.tensor([0.0]), m=2)
    assert torch.equal(enc, torch.tensor([[0.0, 1.0, 0.0, 1.0]]))


def test_half_input_single_band():
    enc = positional_encode(torch.tensor([0.5]), m=1)
    assert torch.allclose(enc, torch.tensor([[1.0, -1.0]]), atol=1e-7)


def test_scalar_output_length_is_2m():
    assert positional_encode(torch.tensor(0.37), m=8).shape == (16,)


def test_band_frequencies_double_per_entry():
    p = torch.tensor([0.123])
    enc = positional_encode(p, m=3)
    for k in range(6):
        angle = (2.0**k) * math.pi * 0.123
        expected = math.sin(angle) if k % 2 == 0 else math.cos(angle)
        assert enc[0, k].item() == pytest.approx(expected, abs=1e-6)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        positional_encode(torch.tensor([float("nan")]), m=2)
    with pytest.raises(ValueError):
        positional_encode(torch.tensor([float("inf")]), m=2)


def test_rejects_bad_band_count():
    with pytest.raises(ValueError):
        positional_encode(torch.tensor([0.0]), m=0)
    with pytest.raises(ValueError):
        EncodingConfig(m_pos=0)


@given(st.floats(-100, 100), st.integers(1, 10))
@settings(max_examples=200, deadline=None)
def test_encoding_values_bounded(p, m):
    enc = positional_encode(torch.tensor([p]), m=m)
    assert torch.all(enc <= 1.0) and torch.all(enc >= -1.0)


def test_encoding_config_dims():
    cfg = EncodingConfig(m_pos=8, m_view=4)
    assert cfg.pos_dim == 48
    assert cfg.view_dim == 24


def test_zero_displacement_is_identity():
    p = torch.randn(5, 3)
    base = positional_encode(p, m=3)
    out = deformed_encode(p, torch.zeros(5, 3, 6), m=3)
    assert torch.equal(out, base)


def test_saturated_displacement_adds_one():
    p = torch.tensor([0.25])
    base = positional_encode(p, m=2)
    out = deformed_encode(p, torch.full((1, 4), 1e9), m=2)
    assert torch.allclose(out, base + 1.0, atol=1e-6)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_displacement_bounded_by_one(seed):
    g = torch.Generator().manual_seed(seed)
    p = torch.rand(4, 3, generator=g) * 4.0 - 2.0
    dp = torch.randn(4, 3, 6, generator=g) * 50.0
    base = positional_encode(p, m=3)
    out = deformed_encode(p, dp, m=3)
    assert torch.all((out - base).abs() <= 1.0)


def test_displacement_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        deformed_encode(torch.randn(4, 3), torch.zeros(4, 3, 8), m=3)
