"""Measures of rectangles, density norms and the inequalities built on them.

Closed forms are used wherever they exist; an adaptive midpoint quadrature
is kept alongside as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Hyperrectangle, InvalidArgumentError, as_point, rect_from_center
from .systems import GOLDEN, LN2, PARRY_C, GaussMap, GoldenBeta, System, get_system


@dataclass(frozen=True)
class MeasureValue:
    value: float
    method: str
    error: float = 0.0


@dataclass(frozen=True)
class DensityNorm:
    q: float
    s: float
    value: float


class QuadratureError(RuntimeError):
    pass


def adaptive_midpoint(func: Callable, a: float, b: float, tol: float = 1e-10,
                      max_intervals: int = 10**6, breakpoints: Sequence[float] = ()):
    """Integrate a vectorised ``func`` over ``[a, b]``.

    Each panel is compared against its two halves; panels whose estimated
    error exceeds their share of ``tol`` are bisected.  Accepted panels carry
    the Richardson-corrected midpoint value.  Returns ``(value, error)``.
    """
    if b <= a:
        return 0.0, 0.0
    cuts = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    lo = np.array(cuts[:-1], dtype=np.float64)
    hi = np.array(cuts[1:], dtype=np.float64)
    total, err_total, used = [], [], len(lo)
    width = b - a
    while len(lo):
        w = hi - lo
        c = (lo + hi) / 2
        m1 = w * func(c)
        m2 = w / 2 * (func(c - w / 4) + func(c + w / 4))
        err = np.abs(m2 - m1) / 3
        ok = err <= tol * w / width
        total.append(m2[ok] + (m2[ok] - m1[ok]) / 3)
        err_total.append(err[ok])
        lo, hi = lo[~ok], hi[~ok]
        if len(lo):
            mid = (lo + hi) / 2
            lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
            used += len(lo) // 2
            if used > max_intervals:
                raise QuadratureError(f"more than {max_intervals} panels needed")
    return math.fsum(np.concatenate(total)), float(np.sum(np.concatenate(err_total)))


def integrate_box(func: Callable, bounds, tol: float = 1e-10, breakpoints=None):
    """Iterated adaptive quadrature of ``func((n, d) array)`` over a box."""
    d = len(bounds)
    breakpoints = breakpoints or [()] * d
    (a, b) = bounds[0]
    if d == 1:
        return adaptive_midpoint(lambda x: func(x[:, None]), a, b, tol,
                                 breakpoints=breakpoints[0])
    if d != 2:
        raise InvalidArgumentError("quadrature supports d <= 2")
    # tensor Gauss-Legendre on 48 x 48 panels (aligned with breaks at 1/2 and
    # 1/3); the error estimate compares against a 24 x 24 panel grid
    fine = _tensor_gauss(func, bounds, 48)
    coarse = _tensor_gauss(func, bounds, 24)
    err = abs(fine - coarse)
    if err > tol:
        raise QuadratureError(f"2-d quadrature error {err:.2e} exceeds {tol:.2e}")
    return fine, err


def _tensor_gauss(func, bounds, panels: int, order: int = 12) -> float:
    t, w = np.polynomial.legendre.leggauss(order)
    axes = []
    for a, b in bounds:
        h = (b - a) / panels
        left = a + h * np.arange(panels)
        axes.append(((left[:, None] + h * (t + 1) / 2).ravel(),
                     np.tile(w * h / 2, panels)))
    (x1, w1), (x2, w2) = axes
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    vals = func(np.column_stack([X1.ravel(), X2.ravel()])).reshape(X1.shape)
    return float(w1 @ vals @ w2)


def _as_rect(R) -> Hyperrectangle:
    if isinstance(R, Hyperrectangle):
        return R
    return Hyperrectangle.from_bounds(R)


def mu_rect(sys, R) -> MeasureValue:
    """Closed-form ``mu(R & [0,1]^d)``."""
    sys = get_system(sys)
    R = _as_rect(R)
    if R.dim != sys.dim:
        raise InvalidArgumentError(f"{R.dim}-dimensional rectangle for {sys.name}")
    value = 1.0
    for axis, (a, b) in enumerate(R.clipped_bounds()):
        value *= sys.interval_measure(a, b, axis)
    return MeasureValue(min(max(value, 0.0), 1.0), "closed-form", 4 * np.finfo(float).eps)


def mu_rect_quadrature(sys, R, tol: float = 1e-10) -> MeasureValue:
    sys = get_system(sys)
    R = _as_rect(R)
    bounds = R.clipped_bounds()
    bps = [sys.breakpoints] + [()] * (sys.dim - 1)
    value, err = integrate_box(sys.density_array, bounds, tol, bps)
    return MeasureValue(value, "quadrature", err)


def hq_norm(sys, q: float) -> DensityNorm:
    """``|h|_q = (int h^q)^{1/q}`` in closed form."""
    sys = get_system(sys)
    if not q > 1:
        raise InvalidArgumentError("q must exceed 1")
    if isinstance(sys, GaussMap):
        integral = (1 - 2.0 ** (1 - q)) / ((q - 1) * LN2 ** q)
    elif isinstance(sys, GoldenBeta):
        integral = (PARRY_C * GOLDEN) ** q / GOLDEN + PARRY_C ** q * (1 - 1 / GOLDEN)
    else:
        integral = 1.0
    return DensityNorm(q, 1 - 1 / q, integral ** (1 / q))


def hq_norm_quadrature(sys, q: float, tol: float = 1e-11) -> float:
    sys = get_system(sys)
    bounds = tuple((0.0, 1.0) for _ in range(sys.dim))
    bps = [sys.breakpoints] + [()] * (sys.dim - 1)
    integral, _ = integrate_box(lambda X: sys.density_array(X) ** q, bounds, tol, bps)
    return integral ** (1 / q)


@dataclass(frozen=True)
class HqCheck:
    measure: float
    bound: float
    passed: bool


def _overlap(r1: Hyperrectangle, r2: Hyperrectangle) -> bool:
    return all(max(a1, a2) < min(b1, b2)
               for (a1, b1), (a2, b2) in zip(r1.clipped_bounds(), r2.clipped_bounds()))


def check_hq_inequality(sys, q: float, F: Sequence) -> HqCheck:
    """``mu(F) <= |h|_q lambda(F)^s`` for a finite union of disjoint rectangles."""
    sys = get_system(sys)
    rects = [_as_rect(R) for R in F]
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            if _overlap(rects[i], rects[j]):
                raise InvalidArgumentError(f"rectangles {i} and {j} overlap")
    norm = hq_norm(sys, q)
    mu = math.fsum(mu_rect(sys, R).value for R in rects)
    lam = math.fsum(R.volume() for R in rects)
    bound = norm.value * lam ** norm.s
    return HqCheck(mu, bound, mu <= bound + 1e-12)


@dataclass(frozen=True)
class EnlargedBounds:
    gamma: float
    outer: float
    inner: float
    slack: float
    passed: bool


def enlarged_rect_bounds(sys, x, xi, delta, q: float = 2.0) -> EnlargedBounds:
    """Measures of ``R(x, xi + delta)`` and ``R(x, xi - delta)`` against
    ``gamma +- 2 d |h|_q |delta|^s`` where ``gamma = mu(R(x, xi))``."""
    sys = get_system(sys)
    x = as_point(x, sys.dim)
    xi = as_point(xi, sys.dim)
    delta = as_point(delta, sys.dim)
    if any(a - b < 0 for a, b in zip(xi, delta)):
        raise InvalidArgumentError("xi - delta has a negative coordinate")
    norm = hq_norm(sys, q)
    gamma = mu_rect(sys, rect_from_center(x, xi)).value
    outer = mu_rect(sys, rect_from_center(x, [a + b for a, b in zip(xi, delta)])).value
    inner = mu_rect(sys, rect_from_center(x, [a - b for a, b in zip(xi, delta)])).value
    slack = 2 * sys.dim * norm.value * max(delta) ** norm.s
    ok = outer <= gamma + slack + 1e-12 and inner >= gamma - slack - 1e-12
    return EnlargedBounds(gamma, outer, inner, slack, ok)


def local_density(sys, x, r: float) -> float:
    """``mu(R(x, r)) / lambda(R(x, r))`` with both sides clipped to the cube."""
    if not r > 0:
        raise InvalidArgumentError("r must be positive")
    sys = get_system(sys)
    R = rect_from_center(as_point(x, sys.dim), r)
    return mu_rect(sys, R).value / R.volume()


def transfer_density(sys: System, y: np.ndarray, limit: int = 1000) -> np.ndarray:
    """``(P h)(y) = sum over inverse branches of h(psi(y)) |psi'(y)|``."""
    y = np.atleast_2d(y)
    if isinstance(sys, GaussMap):
        return sys.preimage_sum(y[:, 0], limit) + sys.preimage_tail(y[:, 0], limit)
    total = np.zeros(len(y))
    for br in sys.inverse_branches(limit if sys.n_branches is None else None):
        inside = np.ones(len(y), dtype=bool)
        for axis, (a, b) in enumerate(br.image):
            inside &= (y[:, axis] >= a) & (y[:, axis] < b) if b < 1 else (y[:, axis] >= a)
        if not inside.any():
            continue
        yi = y[inside]
        xs = br.psi(yi if sys.dim > 1 else yi[:, 0])
        xs = xs if xs.ndim == 2 else xs[:, None]
        jac = br.jacobian(yi if sys.dim > 1 else yi[:, 0])
        total[inside] += sys.density_array(xs) * jac
    if sys.n_branches is None:
        total += sys.preimage_tail(y[:, 0], limit)
    return total


def invariance_defect(sys, f: Callable, limit: int = 1000, tol: float = 1e-10) -> dict:
    """Compare ``int f(T x) h(x) dx`` with ``int f h``.

    The left side is computed branch by branch through the change of
    variables ``x = psi(y)``, i.e. as ``int f (P h)``.
    """
    sys = get_system(sys)
    bounds = tuple((0.0, 1.0) for _ in range(sys.dim))
    bps = [sys.breakpoints] + [()] * (sys.dim - 1)
    pushed, e1 = integrate_box(lambda Y: f(Y) * transfer_density(sys, Y, limit), bounds, tol, bps)
    direct, e2 = integrate_box(lambda Y: f(Y) * sys.density_array(Y), bounds, tol, bps)
    return {"pushed": pushed, "direct": direct, "defect": abs(pushed - direct),
            "error": e1 + e2}


def density_integral(sys, tol: float = 1e-11) -> float:
    sys = get_system(sys)
    bounds = tuple((0.0, 1.0) for _ in range(sys.dim))
    bps = [sys.breakpoints] + [()] * (sys.dim - 1)
    return integrate_box(sys.density_array, bounds, tol, bps)[0]
