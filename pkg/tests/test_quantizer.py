import numpy as np
import pytest

from sbcodec.quantizer import (
    FEATURE_MAX,
    QuantIndices,
    QuantizerConfig,
    dequantize,
    hard_bit,
    hard_bits,
    quantize,
)


def _tensor(value):
    return np.full((1, 1, 1), value, dtype=np.float64)


class TestQuantize:
    def test_running_example(self):
        # 0.81 at 4 bits -> index 12 (binary 1100).
        q = quantize(_tensor(0.81), QuantizerConfig(4))
        assert q.indices[0, 0, 0] == 12

    def test_zero(self):
        for b in (1, 4, 16):
            assert quantize(_tensor(0.0), QuantizerConfig(b)).indices[0, 0, 0] == 0

    def test_threshold_semantics(self):
        cfg = QuantizerConfig(1)
        assert quantize(_tensor(0.49999), cfg).indices[0, 0, 0] == 0
        assert quantize(_tensor(0.5), cfg).indices[0, 0, 0] == 1

    def test_clamp_keeps_index_in_range(self):
        for b in (1, 4, 8, 16):
            q = quantize(_tensor(1.0), QuantizerConfig(b))
            assert q.indices[0, 0, 0] == (1 << b) - 1

    def test_monotone(self):
        rng = np.random.default_rng(0)
        f = np.sort(rng.random(1000)).reshape(1, -1, 1)
        q = quantize(f, QuantizerConfig(5))
        assert np.all(np.diff(q.indices[0, :, 0]) >= 0)


class TestDequantize:
    def test_lower_cell_edge(self):
        q = QuantIndices(np.full((1, 1, 1), 12, np.int32), 4)
        assert dequantize(q)[0, 0, 0] == 0.75

    def test_zero(self):
        q = QuantIndices(np.zeros((2, 2, 1), np.int32), 3)
        assert np.all(dequantize(q) == 0.0)

    def test_residual_bound(self):
        rng = np.random.default_rng(1)
        f = rng.random((4, 5, 3))
        for b in range(1, 9):
            resid = f - dequantize(quantize(f, QuantizerConfig(b)))
            assert np.all(resid >= 0.0)
            assert np.all(resid < 2.0**-b)

    def test_strictly_increasing(self):
        q = QuantIndices(np.arange(16, dtype=np.int32).reshape(1, 16, 1), 4)
        assert np.all(np.diff(dequantize(q)[0, :, 0]) > 0)


class TestHardBits:
    def test_running_example_bits(self):
        assert [hard_bit(12, k, 4) for k in range(4)] == [1, 1, 0, 0]

    def test_all_zero_and_all_one(self):
        for b in (1, 5, 8):
            assert all(hard_bit(0, k, b) == 0 for k in range(b))
            assert all(hard_bit((1 << b) - 1, k, b) == 1 for k in range(b))

    def test_position_out_of_range(self):
        with pytest.raises(ValueError):
            hard_bit(3, 4, 4)
        with pytest.raises(ValueError):
            hard_bit(3, -1, 4)

    def test_reassembly_identity(self):
        # sum_k bit_k * 2^-(k+1) reproduces the dequantized value exactly.
        rng = np.random.default_rng(2)
        for b in (1, 4, 7):
            q = QuantIndices(
                rng.integers(0, 1 << b, size=(3, 4, 2), dtype=np.int32), b
            )
            bits = hard_bits(q)
            weights = 2.0 ** -(np.arange(b) + 1.0)
            np.testing.assert_array_equal(bits @ weights, dequantize(q))


class TestValidation:
    def test_bad_bit_depth(self):
        with pytest.raises(ValueError):
            QuantizerConfig(0)
        with pytest.raises(ValueError):
            QuantizerConfig(17)

    def test_indices_out_of_range(self):
        with pytest.raises(ValueError):
            QuantIndices(np.full((1, 1, 1), 16, np.int32), 4)

    def test_feature_max_quantizes_below_limit(self):
        assert FEATURE_MAX < 1.0
        q = quantize(_tensor(FEATURE_MAX), QuantizerConfig(16))
        assert q.indices[0, 0, 0] == (1 << 16) - 1
