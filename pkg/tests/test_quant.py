import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hybridfb.quant import QuantizerConfig, TernaryMatrix, ste_ternary, ternary_quantize
from hybridfb.tensor import parameter
import hybridfb.functional as F


def test_threshold_and_scale():
    w = np.array([0.1, -0.2, 1.0, -2.0])
    q = ternary_quantize(w)
    # delta = 0.7 * 0.825 = 0.5775
    assert q.entries.tolist() == [0, 0, 1, -1]
    assert q.scale == pytest.approx(1.5)


def test_all_zero_is_degenerate():
    q = ternary_quantize(np.zeros((2, 3)))
    assert q.degenerate and q.scale == 1.0 and not q.entries.any()


def test_constant_magnitude_keeps_everything():
    q = ternary_quantize(np.array([[0.3, -0.3], [0.3, 0.3]]))
    assert q.entries.tolist() == [[1, -1], [1, 1]] and q.scale == pytest.approx(0.3)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        TernaryMatrix(np.array([2, 0]))
    with pytest.raises(ValueError):
        TernaryMatrix(np.array([1, 0]), scale=0.0)
    with pytest.raises(ValueError):
        QuantizerConfig(1.5)
    with pytest.raises(ValueError):
        ternary_quantize(np.array([]))


def test_ste_passes_gradient_unchanged():
    w = parameter(np.array([0.05, -0.9, 0.4]), dtype=np.float64)
    out = ste_ternary(w)
    F.sum(F.mul(out, np.array([1.0, 2.0, 3.0]))).backward()
    np.testing.assert_array_equal(w.grad, [1.0, 2.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-5, 5, allow_nan=False)))
def test_quantize_properties(w):
    q = ternary_quantize(w)
    assert set(np.unique(q.entries)) <= {-1, 0, 1}
    if not q.degenerate:
        kept = np.abs(w) > 0.7 * np.abs(w).mean()
        assert np.array_equal(q.entries != 0, kept)
        assert np.all(np.sign(w[kept]) == q.entries[kept])
        assert q.scale == pytest.approx(np.abs(w[kept]).mean())
