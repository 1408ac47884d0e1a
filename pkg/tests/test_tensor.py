import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikedrive import (
    QuantParams,
    Scheme,
    apply_params,
    dequantize,
    quant_cost,
    quant_error,
    quantize,
    real_matrix,
)
from spikedrive.errors import DegenerateRangeError, EmptyInputError, OutOfRangeError


def scalar_quantize_asym(x, bits):
    """Independent per-element reference: round, shift, clamp."""
    x = np.asarray(x, dtype=float)
    delta = (x.max() - x.min()) / (2**bits - 1)
    z = int(-np.rint(x.min() / delta))
    out = np.empty(x.size, dtype=np.int64)
    for i, v in enumerate(x.reshape(-1)):
        q = int(np.rint(v / delta)) + z
        out[i] = min(max(q, 0), 2**bits - 1)
    return out.reshape(x.shape), delta, z


class TestQuantize:
    def test_ramp_forces_unit_delta(self):
        ints, p = quantize([0.0, 7.5, 15.0], 4, Scheme.ASYMMETRIC)
        assert p.delta == 1.0 and p.zero_point == 0
        assert ints.tolist() == [[0, 8, 15]]  # 7.5 rounds half-to-even

    def test_symmetric_ramp(self):
        ints, p = quantize([-7.0, 0.0, 7.0], 4, Scheme.SYMMETRIC)
        assert p.delta == 1.0 and p.zero_point == 0
        assert ints.tolist() == [[-7, 0, 7]]
        assert (p.lo, p.hi) == (-8, 7)

    def test_matches_scalar_reference(self):
        x = np.random.default_rng(101).standard_normal(256)
        ints, p = quantize(x, 4, Scheme.ASYMMETRIC)
        ref, delta, z = scalar_quantize_asym(x, 4)
        assert math.isclose(p.delta, delta)
        assert p.zero_point == z
        assert np.array_equal(ints.reshape(-1), ref)

    def test_symmetric_matches_scalar_reference(self):
        x = np.random.default_rng(11).standard_normal((1, 256))
        ints, p = quantize(x, 4, Scheme.SYMMETRIC)
        delta = np.abs(x).max() / 7
        ref = np.clip(np.rint(x / delta), -8, 7).astype(np.int64)
        assert np.array_equal(ints, ref)

    def test_constant_matrix_rejected(self):
        with pytest.raises(DegenerateRangeError):
            quantize(np.full((3, 3), 2.5), 4, Scheme.ASYMMETRIC)
        with pytest.raises(DegenerateRangeError):
            quantize(np.zeros((3, 3)), 4, Scheme.SYMMETRIC)

    def test_bits_bounds(self):
        with pytest.raises(ValueError):
            quantize([0.0, 1.0], 17, Scheme.ASYMMETRIC)
        with pytest.raises(ValueError):
            quantize([0.0, 1.0], 1, Scheme.SYMMETRIC)

    def test_nan_rejected(self):
        with pytest.raises(EmptyInputError):
            real_matrix([1.0, float("nan")])


class TestDequantize:
    def test_identity_grid(self):
        p = QuantParams(bits=4, scheme=Scheme.ASYMMETRIC, delta=1.0, zero_point=0)
        assert dequantize([0, 8, 15], p).tolist() == [[0.0, 8.0, 15.0]]

    def test_scaling(self):
        p = QuantParams(bits=4, scheme=Scheme.SYMMETRIC, delta=0.5, zero_point=0)
        assert dequantize([-7, 0, 7], p).tolist() == [[-3.5, 0.0, 3.5]]

    def test_out_of_range_rejected(self):
        p = QuantParams(bits=4, scheme=Scheme.ASYMMETRIC, delta=1.0, zero_point=0)
        with pytest.raises(OutOfRangeError):
            dequantize([0, 16], p)

    def test_roundtrip_bound_seeded(self):
        x = np.random.default_rng(5).standard_normal((16, 16))
        ints, p = quantize(x, 4, Scheme.ASYMMETRIC)
        err = np.abs(x - dequantize(ints, p))
        assert err.max() <= p.delta / 2 + 1e-12


class TestQuantCost:
    def test_definition(self):
        assert quant_cost([1.0, -2.0, 3.0]).tolist() == [[1.0, 4.0, 9.0]]

    def test_zero(self):
        assert not quant_cost(np.zeros((2, 3))).any()

    def test_row_sums_are_squared_norms(self):
        x = np.random.default_rng(3).standard_normal((6, 9))
        rows = quant_cost(x).sum(axis=1)
        norms = np.array([np.linalg.norm(r) ** 2 for r in x])
        assert np.allclose(rows, norms)

    def test_sign_invariance(self):
        x = np.random.default_rng(9).standard_normal((4, 4))
        assert np.array_equal(quant_cost(x), quant_cost(-x))


class TestQuantError:
    def test_on_grid_is_zero(self):
        x = np.arange(16.0).reshape(2, 8)
        assert quant_error(x, 8, Scheme.ASYMMETRIC) == 0.0

    def test_hand_case_b1(self):
        # delta 1, half-to-even rounds 0.5 down to 0, residual 0.5^2
        assert math.isclose(quant_error([0.0, 0.5, 1.0], 1, Scheme.ASYMMETRIC), 0.25)

    def test_monotone_in_bits(self):
        x = np.random.default_rng(17).standard_normal((16, 16))
        errs = [quant_error(x, b, Scheme.ASYMMETRIC) for b in range(2, 9)]
        assert all(a >= b for a, b in zip(errs, errs[1:]))


class TestSharedGrid:
    def test_symmetric_count_shift(self):
        # Same step size, grids offset by 2^(B-1): the symmetric count is the
        # asymmetric count minus 8 at B=4, element-wise.
        x = np.random.default_rng(23).uniform(-7.4, 7.4, size=(8, 8))
        asym = QuantParams(bits=4, scheme=Scheme.ASYMMETRIC, delta=1.0, zero_point=8)
        sym = QuantParams(bits=4, scheme=Scheme.SYMMETRIC, delta=1.0, zero_point=0)
        k_asym = apply_params(x, asym)
        k_sym = apply_params(x, sym)
        assert np.array_equal(k_sym, k_asym - 8)

    def test_count_seven_becomes_minus_one(self):
        asym = QuantParams(bits=4, scheme=Scheme.ASYMMETRIC, delta=1.0, zero_point=8)
        sym = QuantParams(bits=4, scheme=Scheme.SYMMETRIC, delta=1.0, zero_point=0)
        u = np.array([[-1.1]])
        assert apply_params(u, asym)[0, 0] == 7
        assert apply_params(u, sym)[0, 0] == -1


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=64),
    st.integers(2, 8),
)
def test_roundtrip_bound_property(values, bits):
    x = np.array(values)
    if x.max() <= x.min():
        return
    ints, p = quantize(x, bits, Scheme.ASYMMETRIC)
    back = dequantize(ints, p)
    inside = (x >= (0 - p.zero_point) * p.delta) & (x <= (p.hi - p.zero_point) * p.delta)
    err = np.abs(x.reshape(1, -1) - back)
    assert err[inside.reshape(1, -1)].max(initial=0.0) <= p.delta / 2 * (1 + 1e-9)
