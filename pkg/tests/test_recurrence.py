import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import brentq

from reclab.core import (InvalidArgumentError, RadiusSchedule, normalizer_series, rect_from_center,
                         thin)
from reclab.measure import mu_rect
from reclab.recurrence import (HitSeries, UnreachableTargetError, hat_frequency, hat_hit_series,
                               hat_membership, hit_series, sandwich_check, scale_to_measure)
from reclab.systems import SYSTEMS, orbit, random_modulus, sample_mu

ALL = sorted(SYSTEMS)
GOLD = (math.sqrt(5) - 1) / 2


def test_gauss_fixed_point_always_recurs():
    # the seed must be the exact fixed point; a rounded float drifts off it
    s = hit_series("gauss", lambda c: (c.sqrt(5) - 1) / 2, RadiusSchedule.constant([0.1]), 50,
                   "high_precision")
    assert s.final_hits == 50
    assert s.x0[0] == pytest.approx(GOLD)


def test_doubling_one_third():
    s = hit_series("doubling", "1/3", RadiusSchedule.constant([0.1]), 100, "exact_modular")
    assert s.final_hits == 50
    assert s.hit_log[:3] == [2, 4, 6]
    s = hit_series("doubling", "1/3", RadiusSchedule.constant([0.4]), 100, "exact_modular")
    assert s.final_hits == 100
    assert s.x0_exact == ("1/3",)


def test_full_cube_hits_every_step():
    rng = np.random.default_rng(0)
    for name in ALL:
        x0 = sample_mu(name, rng, 1)[0]
        s = hit_series(name, tuple(x0), RadiusSchedule.constant([1.0] * SYSTEMS[name].dim),
                       2000, "float64")
        assert s.final_hits == 2000


def test_series_invariants():
    s = hit_series("gauss", 0.3141, RadiusSchedule.power([0.5]), 10**4, "float64")
    assert all(a <= b for a, b in zip(s.hits, s.hits[1:]))
    assert all(h <= n for h, n in zip(s.hits, s.checkpoints))
    assert s.normalizers == normalizer_series(RadiusSchedule.power([0.5]), s.checkpoints, 2.0)
    assert s.density == pytest.approx(1 / (1.3141 * math.log(2)))


def test_monotone_in_schedule():
    rng = np.random.default_rng(1)
    for x0 in sample_mu("gauss", rng, 10)[:, 0]:
        small = hit_series("gauss", float(x0), RadiusSchedule.power([0.6]), 10**4, "float64")
        big = hit_series("gauss", float(x0), RadiusSchedule.power([0.5]), 10**4, "float64")
        assert all(a <= b for a, b in zip(small.hits, big.hits))


def test_invalid_arguments():
    with pytest.raises(InvalidArgumentError):
        hit_series("gauss", 0.3, RadiusSchedule.power([0.5]), 0)
    with pytest.raises(InvalidArgumentError):
        hit_series("gauss", 0.3, RadiusSchedule.power([0.5, 0.5]), 10)
    with pytest.raises(InvalidArgumentError):
        hit_series("gauss", 0.3, RadiusSchedule.power([0.5]), 10, checkpoints=[20])


def _reference_hits(name, x0, schedule, N, hat=False):
    # direct loop over the library orbit, independent of the compiled kernels
    x0 = tuple(x0)
    pts = orbit(name, x0, N, "float64")
    hits = []
    count = 0
    for k, y in enumerate(pts, 1):
        if hat:
            hit = schedule.gamma(k) > 0 and hat_membership(name, x0, k, schedule, y)
        else:
            hit = all(abs(a - b) <= r for a, b, r in zip(y, x0, schedule.radii(k)))
        count += hit
        hits.append(count)
    return hits


@pytest.mark.parametrize("name", ALL)
def test_float_kernel_matches_reference(name):
    rng = np.random.default_rng(7)
    d = SYSTEMS[name].dim
    sched = RadiusSchedule.power([0.3] * d, [0.5] * d)
    for x0 in sample_mu(name, rng, 3):
        ref = _reference_hits(name, x0, sched, 3000)
        s = hit_series(name, tuple(x0), sched, 3000, "float64", checkpoints=range(1, 3001))
        assert s.hits == ref


@pytest.mark.parametrize("name", ALL)
def test_hat_kernel_matches_bisection(name):
    rng = np.random.default_rng(8)
    d = SYSTEMS[name].dim
    sched = thin(RadiusSchedule.power([0.3] * d, [0.5] * d))
    for x0 in sample_mu(name, rng, 2):
        ref = _reference_hits(name, x0, sched, 400, hat=True)
        s = hit_series(name, tuple(x0), sched, 400, "float64", checkpoints=range(1, 401), hat=True)
        assert s.hits == ref


def test_modular_kernel_matches_fraction_loop():
    q = random_modulus(61, 4)
    sched = RadiusSchedule.power([0.2, 0.3])
    a = (q // 3, q // 7)
    s = hit_series("toral_diag23", (f"{a[0]}/{q}", f"{a[1]}/{q}"), sched, 5000, "exact_modular",
                   checkpoints=[5000])
    x = [Fraction(v, q) for v in a]
    y = list(x)
    count = 0
    for k in range(1, 5001):
        y = [(2 * y[0]) % 1, (3 * y[1]) % 1]
        r = sched.radii(k)
        count += all(abs(float(yi - xi)) <= ri for yi, xi, ri in zip(y, x, r))
    assert s.final_hits == count


def test_generic_path_for_large_modulus():
    # a modulus beyond the fast kernel range falls back to Python integers
    q = (1 << 70) + 1
    s = hit_series("doubling", f"1/{q}", RadiusSchedule.constant([1e-3]), 200, "exact_modular")
    x = Fraction(1, q)
    y, count = x, 0
    for _ in range(200):
        y = (2 * y) % 1
        count += abs(y - x) <= 1e-3
    assert s.final_hits == count


def test_hit_series_round_trip():
    s = hit_series("beta_golden", 0.2, RadiusSchedule.power([0.5]), 1000, "float64")
    assert HitSeries.from_dict(s.to_dict()) == s


def test_scale_to_measure_examples():
    assert scale_to_measure("gauss", 0.5, 1.0, 0.0).scale == 0.0
    t = scale_to_measure("toral_diag23", (0.5, 0.5), (0.1, 0.1), 0.01)
    assert t.scale == pytest.approx(0.5, abs=1e-10)


def test_scale_to_measure_gauss_oracle():
    # independent oracle: Brent's method on log2((1.5 + l) / (1.5 - l)) = 0.2
    root = brentq(lambda l: math.log2((1.5 + l) / (1.5 - l)) - 0.2, 0, 0.5, xtol=1e-15)
    assert root == pytest.approx(0.10380588414229061, abs=1e-14)
    t = scale_to_measure("gauss", 0.5, 1.0, 0.2)
    assert abs(t.scale - root) < 1e-6
    assert t.residual <= 1e-12


def test_scale_to_measure_unreachable():
    with pytest.raises(UnreachableTargetError):
        scale_to_measure("gauss", 0.5, 1.0, 1.5)
    with pytest.raises(UnreachableTargetError):
        scale_to_measure("toral_diag23", (0.5, 0.5), (0.0, 0.1), 0.1)


@pytest.mark.parametrize("name", ALL)
def test_scale_to_measure_residuals(name):
    rng = np.random.default_rng(3)
    d = SYSTEMS[name].dim
    for _ in range(500):
        x = tuple(rng.uniform(0, 1, d))
        r = tuple(rng.uniform(1e-6, 1, d))
        gamma = float(rng.uniform(0, 1))
        t = scale_to_measure(name, x, r, gamma)
        assert t.residual <= 1e-12
        assert abs(mu_rect(name, rect_from_center(x, t.radii)).value - gamma) <= 1e-12


def test_scale_monotone_in_gamma():
    scales = [scale_to_measure("beta_golden", 0.55, 1.0, g).scale for g in np.linspace(0, 1, 50)]
    assert all(a <= b for a, b in zip(scales, scales[1:]))


def test_hat_membership_examples():
    sched = RadiusSchedule.explicit([[0.2]])
    assert not hat_membership("gauss", 0.5, 1, sched, 0.62)
    assert hat_membership("gauss", 0.5, 1, sched, 0.6)
    toral = RadiusSchedule.power([0.2, 0.3])
    assert hat_membership("toral_diag23", (0.5, 0.5), 7, toral, (0.5, 0.5))
    zero = RadiusSchedule.constant([0.0])
    assert hat_membership("doubling", 0.25, 1, zero, 0.25)
    assert not hat_membership("doubling", 0.25, 1, zero, 0.2500001)


def test_hat_normalizer_is_sum_of_gamma():
    sched = RadiusSchedule.power([0.5])
    s = hat_hit_series("gauss", 0.3, sched, 10**4, "float64")
    assert s.hat
    assert s.normalizers == normalizer_series(thin(sched), s.checkpoints, 1.0)


def test_hat_all_zero_schedule():
    s = hat_hit_series("doubling", 0.3, RadiusSchedule.constant([0.0]), 100, "float64")
    assert s.final_hits == 0
    assert s.final_ratio is None


def test_hat_toral_matches_plain_with_halved_radii():
    # h = 1 and an interior target: the scaled rectangle is R(x, r/2) up to bisection resolution
    sched = RadiusSchedule.power([0.2, 0.3])
    x0 = (0.4123, 0.5871)
    hat = hat_hit_series("toral_diag23", x0, sched, 10**4, "float64")
    plain = hit_series("toral_diag23", x0, RadiusSchedule.power([0.2, 0.3], [0.5, 0.5]), 10**4,
                       "float64")
    assert hat.final_hits == pytest.approx(plain.final_hits, abs=2)


def test_sandwich_trivial_radius():
    sched = RadiusSchedule.power([0.5])
    r = sandwich_check("gauss", 0.37, 0.0, 3, sched, [[0.37]])
    assert r.passed and r.samples == 1


def test_sandwich_rejects_zero_gamma_and_far_points():
    with pytest.raises(InvalidArgumentError):
        sandwich_check("gauss", 0.37, 1e-6, 1, RadiusSchedule.constant([0.0]), [[0.37]])
    with pytest.raises(InvalidArgumentError):
        sandwich_check("gauss", 0.37, 1e-6, 1, RadiusSchedule.power([0.5]), [[0.5]])


def _sandwich(name, r, n, sched, seed, count=1000):
    rng = np.random.default_rng(seed)
    d = SYSTEMS[name].dim
    x = tuple(rng.uniform(0.05, 0.95, d))
    pts = np.asarray(x) + rng.uniform(-r, r, (count, d))
    return sandwich_check(name, x, r, n, sched, pts)


def test_sandwich_toral():
    rep = _sandwich("toral_diag23", 1e-4, 1, RadiusSchedule.power([0.2, 0.3]), 0)
    assert rep.passed


@pytest.mark.parametrize("n", range(1, 6))
def test_sandwich_gauss(n):
    rep = _sandwich("gauss", 1e-6, n, RadiusSchedule.power([0.5]), n)
    assert rep.passed and rep.guaranteed == (n > 1)


def test_hat_frequency_lower_bound():
    res = hat_frequency("gauss", 3, RadiusSchedule.power([0.5]), 2000, np.random.default_rng(1))
    assert res["frequency"] >= 0.95 * res["gamma"] - 3 * math.sqrt(res["gamma"] / 2000)


def test_toral_hits_track_clipped_target_volume():
    # h = 1, so each step hits with probability lambda(R(x, r_k) & cube); near the
    # edges this is below 4 gamma_k, which is what the plain normaliser assumes
    from reclab.harness import ExperimentConfig, run_experiment

    N = 10**5
    cfg = ExperimentConfig.from_dict({
        "system": "toral_diag23", "schedule": {"family": "power", "exponents": [0.2, 0.3]},
        "N": N, "ensemble": 100, "seed": 11})
    rep = run_experiment(cfg)
    radii = RadiusSchedule.power([0.2, 0.3]).radii_array(N)
    z = []
    for row in rep.per_seed:
        x = np.asarray(row["x0"])
        lo = np.maximum(x - radii, 0.0)
        hi = np.minimum(x + radii, 1.0)
        expected = float(np.sum(np.prod(hi - lo, axis=1)))
        z.append((row["final_hits"] - expected) / math.sqrt(expected))
    z = np.asarray(z)
    assert abs(z.mean()) < 0.35
    assert 0.7 < z.std() < 1.4
