import numpy as np
import pytest

from neurosoc.errors import ContractViolation
from neurosoc.services.numerics import (
    FixedPoint,
    bounds,
    quantize,
    quantize_array,
    round_half_away,
    sat_add,
    scale_toward_zero,
)


def test_quantize_examples():
    assert quantize(1.0, 7, 16).raw == 128
    assert quantize(0.0, 7, 8).raw == 0
    assert quantize(2.0, 7, 8).raw == 127
    assert quantize(-2.0, 7, 8).raw == -128


def test_quantize_rounds_half_away_from_zero():
    lsb = 1 / 128
    assert quantize(0.5 * lsb, 7, 8).raw == 1
    assert quantize(-0.5 * lsb, 7, 8).raw == -1
    assert quantize(1.5 * lsb, 7, 8).raw == 2
    assert round_half_away(2.5) == 3
    assert round_half_away(-2.5) == -3


def test_quantize_error_bound(rng):
    for frac in (3, 5, 7, 12):
        xs = rng.uniform(-0.9, 0.9, size=500)
        for x in xs:
            q = quantize(float(x), frac, 16)
            assert abs(q.value - x) <= 2 ** (-frac - 1) + 1e-12


def test_quantize_array_matches_scalar(rng):
    xs = rng.uniform(-3, 3, size=1000)
    expected = [quantize(float(x), 7, 8).raw for x in xs]
    assert quantize_array(xs, 7, 8).tolist() == expected


def test_sat_add_examples():
    assert sat_add(FixedPoint(100), FixedPoint(-100)).raw == 0
    assert sat_add(FixedPoint(120), FixedPoint(120)).raw == 127
    assert sat_add(FixedPoint(5), FixedPoint(7)).raw == 12
    assert sat_add(FixedPoint(-120), FixedPoint(-120)).raw == -128


def test_sat_add_uses_wider_width():
    out = sat_add(FixedPoint(120, 7, 8), FixedPoint(120, 7, 24))
    assert out.total_bits == 24
    assert out.raw == 240


def test_sat_add_commutes_and_saturates(rng):
    lo, hi = bounds(8)
    for a, b in rng.integers(lo, hi + 1, size=(1000, 2)):
        x, y = FixedPoint(int(a)), FixedPoint(int(b))
        assert sat_add(x, y) == sat_add(y, x)
        assert sat_add(x, y).raw == max(lo, min(hi, int(a) + int(b)))
    top = FixedPoint(hi)
    assert sat_add(top, FixedPoint(1)) == top


def test_mismatched_frac_bits_rejected():
    with pytest.raises(ContractViolation):
        sat_add(FixedPoint(1, 7), FixedPoint(1, 5))
    with pytest.raises(ContractViolation):
        FixedPoint(1, 7) < FixedPoint(1, 6)


def test_fixed_point_range_checked():
    with pytest.raises(ContractViolation):
        FixedPoint(128, 7, 8)
    with pytest.raises(ContractViolation):
        FixedPoint(0, 8, 8)
    with pytest.raises(ContractViolation):
        quantize(0.5, 8, 8)


def test_scale_toward_zero_truncates():
    assert scale_toward_zero(FixedPoint(-5, 7, 24), 0.5).raw == -2
    assert scale_toward_zero(FixedPoint(5, 7, 24), 0.5).raw == 2
    assert scale_toward_zero(FixedPoint(9, 7, 24), 1.0).raw == 9


def test_widen_and_value():
    x = FixedPoint(-64, 7, 8).widen(24)
    assert x.total_bits == 24 and x.raw == -64
    assert x.value == pytest.approx(-0.5)
    assert (-FixedPoint(-128, 7, 8)).raw == 127
    assert np.isclose(FixedPoint.zero().value, 0.0)
