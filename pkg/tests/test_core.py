import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reclab.core import (Hyperrectangle, InvalidArgumentError, RadiusSchedule, ThinnedSchedule,
                         contains, geometric_checkpoints, normalizer_series, partial_normalizer,
                         rect_from_center, schedule_values, thin)


def test_rect_from_center_basic():
    R = rect_from_center((0.5,), (0.1,))
    assert R.bounds[0] == pytest.approx((0.4, 0.6))


def test_rect_clipped_at_boundary():
    R = rect_from_center((0.0,), (0.2,), clip=True)
    assert R.bounds[0] == pytest.approx((0.0, 0.2))


def test_rect_zero_radius_is_a_point():
    R = rect_from_center((0.5, 0.5), (0.0, 0.0))
    assert R.volume() == 0.0
    assert contains(R, (0.5, 0.5))
    assert not contains(R, (0.5, 0.5000001))


def test_rect_negative_radius_rejected():
    with pytest.raises(InvalidArgumentError):
        rect_from_center((0.5,), (-0.1,))


def test_contains_closed_boundary():
    R = Hyperrectangle.from_bounds([(0.4, 0.6)])
    assert contains(R, 0.6)
    assert contains(R, 0.4)
    assert not contains(R, 0.61)


def test_contains_one_coordinate_out():
    R = Hyperrectangle.from_bounds([(0.4, 0.6), (0.4, 0.6)])
    assert not contains(R, (0.5, 0.7))
    assert contains(R, (0.5, 0.6))


def test_contains_dimension_mismatch():
    R = Hyperrectangle.from_bounds([(0.4, 0.6)])
    with pytest.raises(InvalidArgumentError):
        contains(R, (0.5, 0.5))


def test_clipped_volume():
    R = rect_from_center((0.9, 0.1), (0.2, 0.2))
    assert R.volume(clip=False) == pytest.approx(0.16)
    assert R.volume() == pytest.approx(0.3 * 0.3)


def test_schedule_values_examples():
    r, g = schedule_values(RadiusSchedule.power([0.5]), 4)
    assert r == pytest.approx((0.5,)) and g == pytest.approx(0.5)
    s = RadiusSchedule.power([0.2, 0.3])
    r, g = schedule_values(s, 1)
    assert r == (1.0, 1.0) and g == 1.0
    assert schedule_values(s, 10**4)[1] == pytest.approx(1e-2, rel=1e-14)


def test_schedule_index_zero_rejected():
    with pytest.raises(InvalidArgumentError):
        schedule_values(RadiusSchedule.power([0.5]), 0)


def test_divergence_flag_is_analytic():
    assert RadiusSchedule.power([0.5]).divergent
    assert RadiusSchedule.power([1.0]).divergent
    assert RadiusSchedule.power([0.2, 0.3]).divergent
    assert not RadiusSchedule.power([0.6, 0.5]).divergent
    assert not RadiusSchedule.power([2.0]).divergent
    assert not RadiusSchedule.power([0.5], [0.0]).divergent
    assert not RadiusSchedule.explicit([[0.1], [0.2]]).divergent


def test_explicit_schedule_padded_with_zeros():
    s = RadiusSchedule.explicit([[0.1, 0.2], [0.3, 0.4]])
    assert s.radii(2) == (0.3, 0.4)
    assert s.radii(3) == (0.0, 0.0)
    assert s.radii_array(3)[2].tolist() == [0.0, 0.0]


def test_schedule_dict_round_trip():
    for s in (RadiusSchedule.power([0.2, 0.3], [1.0, 0.5]), RadiusSchedule.explicit([[0.1]])):
        assert RadiusSchedule.from_dict(s.to_dict()) == s


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=3), st.integers(1, 10**9))
def test_gamma_is_product_of_radii(exps, n):
    s = RadiusSchedule.power(exps)
    r, g = schedule_values(s, n)
    assert g == pytest.approx(math.prod(r), rel=1e-14, abs=0)


def test_partial_normalizer_constant():
    assert partial_normalizer(RadiusSchedule.constant([1.0]), 10) == 20.0


def test_partial_normalizer_basel():
    # 4 * sum_{k<=N} k^-2; oracle: mpmath Hurwitz zeta, 4 (zeta(2) - zeta(2, N+1))
    phi = partial_normalizer(RadiusSchedule.power([1.0, 1.0]), 10**6)
    assert phi == pytest.approx(6.57973226739490574, abs=1e-12)
    assert 4 * math.pi ** 2 / 6 - phi < 4e-6


def test_partial_normalizer_sqrt():
    # oracle: 2 (zeta(1/2) - zeta(1/2, N+1)) in mpmath at 30 digits
    phi = partial_normalizer(RadiusSchedule.power([0.5]), 10**6)
    assert phi == pytest.approx(3997.08029098229749, rel=1e-13)


def test_partial_normalizer_increments():
    s = RadiusSchedule.power([0.3, 0.4])
    prev = partial_normalizer(s, 999)
    cur = partial_normalizer(s, 1000)
    assert cur - prev == pytest.approx(4 * s.gamma(1000), rel=1e-9)
    assert cur >= prev


def test_normalizer_series_matches_partial_sums():
    s = RadiusSchedule.power([0.5])
    cps = [1, 10, 1000, 5000]
    series = normalizer_series(s, cps, 2.0)
    assert series == pytest.approx([partial_normalizer(s, c) for c in cps], rel=1e-15)


def test_thin_strict_at_one():
    t = thin(RadiusSchedule.power([0.5]))
    assert not t.is_active(1)
    assert all(t.is_active(n) for n in range(2, 200))


def test_thin_wholly_convergent():
    t = thin(RadiusSchedule.power([3.0]))
    assert t.active_set(1000) == []
    assert not t.gamma_array(1000).any()


def test_thin_mixed_list():
    # direct comparison per index: 1 > 1 fails, 0.2 > 1/4 fails, 1e-9 > 1/9 fails
    t = thin(RadiusSchedule.explicit([[1.0], [0.2], [1e-9]]))
    assert t.active_set(3) == [n for n, g in enumerate([1.0, 0.2, 1e-9], 1) if g > n ** -2]
    assert t.active_set(3) == []
    t = thin(RadiusSchedule.explicit([[1.0], [0.3], [1e-9]]))
    assert t.active_set(3) == [2]


def test_thin_keeps_active_values_and_is_idempotent():
    base = RadiusSchedule.power([0.7, 0.8])
    t = thin(base)
    assert thin(t) is t
    for n in range(1, 50):
        if t.is_active(n):
            assert t.radii(n) == base.radii(n) and t.gamma(n) == base.gamma(n)
        else:
            assert t.gamma(n) == 0.0


@pytest.mark.parametrize("exps", [[0.5], [0.2, 0.3], [1.0], [1.5], [3.0], [0.9, 0.9]])
def test_thin_removed_mass_bounded(exps):
    t = ThinnedSchedule(RadiusSchedule.power(exps))
    assert t.removed_mass(10**5) <= math.pi ** 2 / 6


def test_geometric_checkpoints():
    cps = geometric_checkpoints(10**6)
    assert cps[0] == 1 and cps[-1] == 10**6
    assert cps == sorted(set(cps))
    assert 100 in cps and 1000 in cps and 10**5 in cps
    assert geometric_checkpoints(7)[-1] == 7
    ratios = np.diff(np.log10(cps[10:]))
    assert np.allclose(ratios, 1 / 8, atol=0.02)
