from __future__ import annotations

import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from femagents.lora import (
    AdapterPair,
    LoraError,
    QUANT_LEVELS,
    QuantSpec,
    ShapeMismatchError,
    forward_two_path,
    mean_token_accuracy,
    merge_adapter,
    naive_matmul,
    quantize_dequantize_4bit,
    trainable_param_count,
    verify_properties,
)


def make_adapter(d=6, k=5, r=2, alpha=16.0, seed=0):
    rng = np.random.default_rng(seed)
    return AdapterPair(B=rng.standard_normal((d, r)),
                       A=rng.standard_normal((r, k)), alpha=alpha, r=r)


# --- adapter construction ---

def test_adapter_shape_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeMismatchError):
        AdapterPair(B=rng.standard_normal((6, 3)),
                    A=rng.standard_normal((2, 5)), alpha=16.0, r=2)
    with pytest.raises(ShapeMismatchError):
        AdapterPair(B=rng.standard_normal((4, 5)),
                    A=rng.standard_normal((5, 4)), alpha=16.0, r=5)
    with pytest.raises(ValueError):
        make_adapter(alpha=0.0)


def test_adapter_large_rank_warns():
    with pytest.warns(UserWarning, match="not small"):
        make_adapter(d=4, k=4, r=3)


# --- merge and two-path forward ---

def test_merge_matches_naive_oracle():
    rng = np.random.default_rng(1)
    W0 = rng.standard_normal((6, 5))
    adapter = make_adapter(seed=1)
    merged = merge_adapter(W0, adapter)
    oracle = W0 + adapter.scaling * naive_matmul(adapter.B, adapter.A)
    assert np.allclose(merged, oracle, rtol=1e-12, atol=0)


def test_two_path_agrees_with_merged_matrix():
    rng = np.random.default_rng(2)
    W0 = rng.standard_normal((6, 5))
    x = rng.standard_normal(5)
    adapter = make_adapter(seed=2)
    h_two = forward_two_path(W0, adapter, x)
    h_merged = merge_adapter(W0, adapter) @ x
    scale = np.max(np.abs(h_merged))
    assert np.max(np.abs(h_two - h_merged)) <= 1e-12 * scale


def test_update_rank_bounded_by_r():
    rng = np.random.default_rng(3)
    W0 = rng.standard_normal((8, 7))
    adapter = make_adapter(d=8, k=7, r=2, seed=3)
    update = merge_adapter(W0, adapter) - W0
    assert np.linalg.matrix_rank(update) <= 2


def test_merge_shape_mismatch_raises():
    with pytest.raises(ShapeMismatchError):
        merge_adapter(np.zeros((4, 4)), make_adapter(d=6, k=5))
    with pytest.raises(ShapeMismatchError):
        forward_two_path(np.zeros((6, 5)), make_adapter(), np.zeros(4))


def test_alpha_over_r_scaling():
    a1 = make_adapter(r=2, alpha=16.0)
    assert a1.scaling == 8.0


# --- parameter accounting ---

def test_param_count_paper_shape():
    adapter, full, ratio = trainable_param_count(4096, 4096, 8)
    assert adapter == 65_536
    assert full == 16_777_216
    assert ratio == Fraction(65_536, 16_777_216) == Fraction(1, 256)


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 16))
def test_param_count_formula_property(d, k, r):
    adapter, full, ratio = trainable_param_count(d, k, r)
    assert adapter == d * r + r * k
    assert full == d * k
    assert ratio == Fraction(adapter, full)


def test_param_count_rejects_nonpositive():
    with pytest.raises(ValueError):
        trainable_param_count(0, 4, 1)


# --- quantization ---

def test_quant_round_trip_error_bound():
    rng = np.random.default_rng(4)
    W = rng.standard_normal(256)
    spec = QuantSpec(block_size=32)
    deq, errs = quantize_dequantize_4bit(W, spec)
    assert deq.shape == W.shape
    for b in range(errs.size):
        block = W[b * 32:(b + 1) * 32]
        absmax = np.max(np.abs(block))
        assert errs[b] <= absmax / (2 * QUANT_LEVELS) + 1e-15


def test_quant_zero_block_is_exact():
    deq, errs = quantize_dequantize_4bit(np.zeros(32))
    assert np.all(deq == 0.0)
    assert np.all(errs == 0.0)


def test_quant_codes_within_range():
    W = np.array([1.0, -1.0, 0.5, -0.5] * 8)
    spec = QuantSpec(block_size=32)
    deq, _ = quantize_dequantize_4bit(W, spec)
    scale = 1.0 / QUANT_LEVELS
    codes = np.rint(deq / scale)
    assert np.all(np.abs(codes) <= QUANT_LEVELS)


def test_quant_preserves_matrix_shape():
    W = np.arange(12.0).reshape(3, 4)
    deq, errs = quantize_dequantize_4bit(W, QuantSpec(block_size=5))
    assert deq.shape == (3, 4)
    assert errs.size == 3  # ceil(12 / 5)


def test_quant_spec_validation():
    with pytest.raises(ValueError):
        QuantSpec(block_size=0)
    with pytest.raises(ValueError):
        QuantSpec(bits=8)


@settings(max_examples=50)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=96))
def test_quant_error_bound_property(values):
    W = np.array(values)
    spec = QuantSpec(block_size=32)
    _deq, errs = quantize_dequantize_4bit(W, spec)
    for b in range(errs.size):
        block = W[b * 32:(b + 1) * 32]
        absmax = np.max(np.abs(block))
        assert errs[b] <= absmax / (2 * QUANT_LEVELS) + 1e-9 * max(absmax, 1.0)


# --- token accuracy ---

def test_mean_token_accuracy_basic():
    pred = np.array([1, 2, 3, 4])
    ref = np.array([1, 9, 3, 9])
    mask = np.array([1, 1, 1, 0])
    assert mean_token_accuracy(pred, ref, mask) == pytest.approx(2 / 3)


def test_mean_token_accuracy_ignores_unmasked():
    pred = np.array([1, 2])
    ref = np.array([9, 2])
    mask = np.array([0, 1])
    assert mean_token_accuracy(pred, ref, mask) == 1.0


def test_mean_token_accuracy_empty_mask_warns():
    with pytest.warns(UserWarning, match="empty mask"):
        value = mean_token_accuracy(np.array([1]), np.array([2]), np.array([0]))
    assert value == 1.0


def test_mean_token_accuracy_shape_mismatch():
    with pytest.raises(LoraError):
        mean_token_accuracy(np.array([1, 2]), np.array([1]), np.array([1]))


# --- oracle and property table ---

def test_naive_matmul_matches_numpy():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((4, 6))
    Y = rng.standard_normal((6, 3))
    assert np.allclose(naive_matmul(X, Y), X @ Y, rtol=1e-13)


def test_verify_properties_all_pass():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = verify_properties(d=16, k=12, r=4, alpha=16.0, trials=25,
                                    rng_seed=0)
    assert results == {
        "two_path_matches_merge": True,
        "update_rank_bounded": True,
        "alpha_over_r_invariance": True,
        "quantization_error_bound": True,
        "param_count_formula": True,
    }
