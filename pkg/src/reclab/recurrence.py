"""Hit counting for ``T^k x in R(x, r_k)`` and the measure-scaled targets.

``hit_series`` streams one orbit and counts returns into the shrinking
rectangles around the starting point.  The "hat" variant replaces
``R(x, r_k)`` by ``R(x, l_k(x) r_k)``, where the scale ``l_k(x)`` makes the
target's invariant measure exactly ``gamma_k``; its hit count is normalised
by ``sum gamma_k`` and should tend to 1 instead of ``h(x)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .core import (InvalidArgumentError, ThinnedSchedule, as_point,
                   contains, geometric_checkpoints, normalizer_series, rect_from_center, thin)
from .measure import mu_rect
from .systems import (GaussMap, GoldenBeta, exact_state, get_system, make_engine)

HIT_LOG_CAP = 100_000
_FAST_MODULUS = 1 << 61


class UnreachableTargetError(ValueError):
    """No scale of the rectangle reaches the requested measure."""


@dataclass
class HitSeries:
    x0: tuple
    mode: str
    checkpoints: list
    hits: list
    normalizers: list
    density: float
    hat: bool = False
    x0_exact: tuple | None = None
    hit_log: list = field(default_factory=list)

    @property
    def ratios(self) -> list:
        return [s / p if p > 0 else None for s, p in zip(self.hits, self.normalizers)]

    @property
    def final_hits(self) -> int:
        return self.hits[-1] if self.hits else 0

    @property
    def final_normalizer(self) -> float:
        return self.normalizers[-1] if self.normalizers else 0.0

    @property
    def final_ratio(self):
        return self.ratios[-1] if self.hits else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HitSeries":
        data = dict(data)
        data["x0"] = tuple(data["x0"])
        if data.get("x0_exact") is not None:
            data["x0_exact"] = tuple(data["x0_exact"])
        return cls(**data)


@dataclass(frozen=True)
class ScaledTarget:
    scale: float
    radii: tuple
    achieved: float
    residual: float


def _schedule_args(schedule):
    base = schedule.base if isinstance(schedule, ThinnedSchedule) else schedule
    thinned = isinstance(schedule, ThinnedSchedule)
    d = base.dim
    if base.family == "power":
        return (0, np.asarray(base.exponents, dtype=np.float64),
                np.asarray(base.scales, dtype=np.float64), np.zeros((0, d)), thinned)
    return (1, np.zeros(d), np.zeros(d), np.asarray(base.values, dtype=np.float64), thinned)


def _measure_kind(sys):
    if isinstance(sys, GaussMap):
        return _kernels.GAUSS_MEASURE
    if isinstance(sys, GoldenBeta):
        return _kernels.BETA_MEASURE
    return _kernels.LEBESGUE_MEASURE


def _map_kind(sys):
    if isinstance(sys, GaussMap):
        return _kernels.GAUSS
    if isinstance(sys, GoldenBeta):
        return _kernels.BETA
    return _kernels.LINEAR


def _float_x0(x0):
    if isinstance(x0, (str, Fraction, int, float)):
        x0 = (x0,)
    return tuple(float(Fraction(v)) if isinstance(v, str) else float(v) for v in x0)


def hit_series(sys, x0, schedule, N: int, mode: str | None = None, checkpoints=None,
               hat: bool = False, precision_bits: int = 512,
               log_cap: int = HIT_LOG_CAP) -> HitSeries:
    """Count ``k <= N`` with ``T^k x0`` in ``R(x0, r_k)`` (or the scaled target if ``hat``).

    In exact-modular mode ``x0`` is a rational (``Fraction`` or ``"a/q"``) per coordinate.
    """
    sys = get_system(sys)
    if N < 1:
        raise InvalidArgumentError("N must be at least 1")
    if schedule.dim != sys.dim:
        raise InvalidArgumentError(f"schedule of dimension {schedule.dim} for {sys.name}")
    mode = sys.default_mode if mode is None else mode
    if hat:
        schedule = thin(schedule)
    checkpoints = geometric_checkpoints(N) if checkpoints is None else sorted(set(checkpoints))
    if not checkpoints or checkpoints[0] < 1 or checkpoints[-1] > N:
        raise InvalidArgumentError("checkpoints must lie in [1, N]")

    exact = None
    if mode == "exact_modular":
        state = exact_state(sys, x0)
        exact = tuple(f"{a}/{q}" for a, q in state)
        xf = tuple(a / q for a, q in state)
    elif mode == "float64":
        xf = sys.check_point(_float_x0(x0))
    else:
        xf = None

    cps = np.asarray(checkpoints, dtype=np.int64)
    args = _schedule_args(schedule)
    if mode == "float64":
        counts, log = _kernels.float_hits(
            _map_kind(sys), np.asarray(sys.multipliers or (1,) * sys.dim, dtype=np.float64),
            np.asarray(xf, dtype=np.float64), N, *args, hat, _measure_kind(sys), cps, log_cap)
    elif mode == "exact_modular" and all(q < _FAST_MODULUS for _, q in state):
        counts, log = _kernels.modular_hits(
            np.asarray(sys.multipliers, dtype=np.int64),
            np.asarray([a for a, _ in state], dtype=np.int64),
            np.asarray([q for _, q in state], dtype=np.int64), N, *args, hat, cps, log_cap)
    else:
        counts, log, xf = _generic_hits(sys, x0, schedule, N, mode, hat, precision_bits,
                                        checkpoints, log_cap)

    if hat:
        norms = normalizer_series(schedule, checkpoints, 1.0)
    else:
        norms = normalizer_series(schedule, checkpoints, 2.0 ** sys.dim)
    return HitSeries(
        x0=tuple(float(v) for v in xf), mode=mode, checkpoints=[int(c) for c in checkpoints],
        hits=[int(c) for c in counts], normalizers=norms, density=sys.density(xf),
        hat=hat, x0_exact=exact, hit_log=[int(k) for k in log])


def _generic_hits(sys, x0, schedule, N, mode, hat, precision_bits, checkpoints, log_cap):
    engine = make_engine(sys, x0, mode, precision_bits, N)
    if mode == "high_precision":
        center = engine.state
    else:
        center = tuple(Fraction(a, q) for a, q in zip(engine.a, engine.q))
    xf = tuple(float(c) for c in center)
    counts, log, hits, j = [], [], 0, 0
    for k in range(1, N + 1):
        y = next(engine)
        r = schedule.radii(k)
        if hat:
            lstar = _scale_reaching(center, y, r)
            hit = lstar is not None and _scaled_measure(sys, xf, r, lstar) <= schedule.gamma(k)
        else:
            hit = all(abs(yi - ci) <= ri for yi, ci, ri in zip(y, center, r))
        if hit:
            hits += 1
            if len(log) < log_cap:
                log.append(k)
        while j < len(checkpoints) and checkpoints[j] == k:
            counts.append(hits)
            j += 1
    return counts, log, xf


def _scale_reaching(center, y, r):
    """Smallest ``l`` with ``y`` in ``R(center, l r)``; None if no scale works."""
    lstar = 0.0
    for yi, ci, ri in zip(y, center, r):
        diff = float(abs(yi - ci))
        if diff > 0:
            if ri == 0:
                return None
            lstar = max(lstar, diff / ri)
    return lstar


def _scaled_measure(sys, x, r, scale):
    return mu_rect(sys, rect_from_center(x, [scale * ri for ri in r])).value


def scale_to_measure(sys, x, r, gamma: float, tol: float = 1e-12,
                     max_steps: int = 200) -> ScaledTarget:
    """Find ``l >= 0`` with ``mu(R(x, l r) & [0,1]^d) = gamma`` by bisection."""
    sys = get_system(sys)
    x = sys.check_point(x)
    r = as_point(r, sys.dim)
    if not 0 <= gamma:
        raise InvalidArgumentError("gamma must be non-negative")
    if gamma == 0:
        return ScaledTarget(0.0, (0.0,) * sys.dim, 0.0, 0.0)
    if gamma > 1 + 1e-15 or any(ri == 0 for ri in r):
        raise UnreachableTargetError(f"measure {gamma} cannot be reached with radii {r}")

    def f(scale):
        return _scaled_measure(sys, x, r, scale)

    lo, hi = 0.0, 1.0
    doublings = 0
    while f(hi) < gamma - tol:
        lo, hi = hi, hi * 2
        doublings += 1
        if doublings > 2100:
            raise UnreachableTargetError(f"no bracket found for measure {gamma}")
    best, best_res = hi, abs(f(hi) - gamma)
    for _ in range(max_steps):
        mid = (lo + hi) / 2
        val = f(mid)
        res = abs(val - gamma)
        if res < best_res:
            best, best_res = mid, res
        if res <= tol or mid in (lo, hi):
            break
        if val < gamma:
            lo = mid
        else:
            hi = mid
    achieved = f(best)
    return ScaledTarget(best, tuple(best * ri for ri in r), achieved, abs(achieved - gamma))


def hat_membership(sys, x, n: int, schedule, y) -> bool:
    """Whether ``y`` (the orbit point ``T^n x``) lies in ``R(x, xi_n(x))``."""
    sys = get_system(sys)
    x = sys.check_point(x)
    gamma = schedule.gamma(n)
    if gamma == 0:
        return tuple(as_point(y)) == x
    target = scale_to_measure(sys, x, schedule.radii(n), gamma)
    return contains(rect_from_center(x, target.radii), y)


def hat_hit_series(sys, x0, schedule, N: int, mode: str | None = None, checkpoints=None,
                   precision_bits: int = 512, log_cap: int = HIT_LOG_CAP) -> HitSeries:
    """Hit series for the measure-scaled targets, normalised by ``sum gamma_k``."""
    return hit_series(sys, x0, thin(schedule), N, mode, checkpoints, True,
                      precision_bits, log_cap)


@dataclass(frozen=True)
class SandwichReport:
    samples: int
    inner_hits: int
    hat_hits: int
    inner_violations: int
    outer_violations: int
    vacuous_inner: bool
    guaranteed: bool

    @property
    def passed(self) -> bool:
        return self.inner_violations == 0 and self.outer_violations == 0


def sandwich_check(sys, x, r: float, n: int, schedule, samples) -> SandwichReport:
    """Test ``T^{-n} R(x, xi_n(x) - 2 r n^2 r_n) <= E_hat_n <= T^{-n} R(x, xi_n(x) + 2 r n^2 r_n)``
    on sample points within max-distance ``r`` of ``x``.

    The inclusions are only guaranteed when ``gamma_n > n^{-2}``; below that
    the shrink ``2 r n^2 r_n`` can be smaller than ``r``.  The report records
    which case applies and counts violations either way.
    """
    sys = get_system(sys)
    x = sys.check_point(x)
    gamma = schedule.gamma(n)
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma_{n} must be positive")
    rn = schedule.radii(n)
    xi = scale_to_measure(sys, x, rn, gamma).radii
    shrink = [2 * r * n * n * ri for ri in rn]
    inner = [a - b for a, b in zip(xi, shrink)]
    vacuous = any(v < 0 for v in inner)
    outer = rect_from_center(x, [a + b for a, b in zip(xi, shrink)])
    inner_rect = None if vacuous else rect_from_center(x, inner)

    pts = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if sys.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    if np.any(np.max(np.abs(pts - np.asarray(x)), axis=1) > r):
        raise InvalidArgumentError(f"sample points must lie within {r} of x")
    images = pts.copy()
    for _ in range(n):
        images = sys.step_array(images)
    inner_hits = hat_hits = v_in = v_out = 0
    for y, ty in zip(pts, images):
        in_hat = hat_membership(sys, tuple(y), n, schedule, tuple(ty))
        hat_hits += in_hat
        if inner_rect is not None and contains(inner_rect, ty):
            inner_hits += 1
            v_in += not in_hat
        if in_hat and not contains(outer, ty):
            v_out += 1
    return SandwichReport(len(pts), inner_hits, hat_hits, v_in, v_out, vacuous,
                          gamma > float(n) ** -2)


def hat_frequency(sys, n: int, schedule, M: int, rng) -> dict:
    """Fraction of ``M`` mu-distributed seeds lying in ``E_hat_n``."""
    sys = get_system(sys)
    pts = sys.sample(rng, M)
    images = pts.copy()
    for _ in range(n):
        images = sys.step_array(images)
    hits = sum(hat_membership(sys, tuple(p), n, schedule, tuple(t)) for p, t in zip(pts, images))
    gamma = schedule.gamma(n)
    return {"n": n, "gamma": gamma, "frequency": hits / M, "samples": M,
            "lower_bound": 0.95 * gamma - 3 * math.sqrt(gamma / M)}
