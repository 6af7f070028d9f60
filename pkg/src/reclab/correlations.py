"""Correlation estimates, cylinder sets and boundary-regularity checks.

Estimators take bounded observables ``f, g`` acting on ``(n, d)`` arrays and
returning ``(n,)`` arrays.  Linear maps are sampled and iterated in exact
modular arithmetic so that long lags do not collapse the float mantissa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Callable, Iterator, Sequence

import numpy as np

from . import _kernels
from .core import Hyperrectangle, InvalidArgumentError, as_point
from .measure import mu_rect
from .systems import GaussMap, GoldenBeta, GOLDEN, get_system, random_modulus

ESTIMATORS = ("monte-carlo", "birkhoff")
_EPS = np.finfo(float).eps


class InsufficientSignalError(ValueError):
    """Too few lags rise above the noise floor to fit a decay rate."""


def coordinate(i: int = 0) -> Callable:
    """The observable ``x -> x_i``."""
    return lambda X: np.asarray(X)[:, i]


def constant(c: float = 1.0) -> Callable:
    return lambda X: np.full(len(X), float(c))


def _max_dist_to_box(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    out = np.maximum(np.maximum(lo - X, X - hi), 0.0)
    return out.max(axis=1)


@dataclass(frozen=True)
class HolderBump:
    """Tent ``max(0, 1 - dist(x, E) / eps)`` around a rectangle ``E`` (max norm)."""

    E: Hyperrectangle
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidArgumentError("eps must be positive")

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.E.dim and X.shape[0] == self.E.dim == 1:
            X = X.T
        d = _max_dist_to_box(X, np.asarray(self.E.lower), np.asarray(self.E.upper))
        return np.maximum(0.0, 1.0 - d / self.eps)

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.eps

    def check_lipschitz(self, rng: np.random.Generator, pairs: int = 10_000) -> float:
        """Largest observed ``|f(x) - f(y)| * eps / |x - y|`` over random pairs."""
        d = self.E.dim
        X, Y = rng.random((pairs, d)), rng.random((pairs, d))
        # half the pairs are short, so the slope near the edge gets probed
        Y[: pairs // 2] = np.clip(X[: pairs // 2] + self.eps * (rng.random((pairs // 2, d)) - 0.5),
                                  0.0, 1.0)
        dist = np.max(np.abs(X - Y), axis=1)
        keep = dist > 0
        return float(np.max(np.abs(self(X) - self(Y))[keep] * self.eps / dist[keep]))


@dataclass
class CorrelationCurve:
    lags: list
    estimates: list
    stderr: list
    samples: int
    estimator: str

    def to_dict(self) -> dict:
        return {"lags": list(self.lags), "estimates": list(self.estimates),
                "stderr": list(self.stderr), "samples": self.samples,
                "estimator": self.estimator}


@dataclass(frozen=True)
class DecayFit:
    C: float
    tau: float
    lags: tuple


def _cov_jackknife(a: np.ndarray, b: np.ndarray) -> tuple:
    """``mean(ab) - mean(a) mean(b)`` and its delete-one jackknife error."""
    M = len(a)
    Sab, Sa, Sb = math.fsum(a * b), math.fsum(a), math.fsum(b)
    est = Sab / M - (Sa / M) * (Sb / M)
    loo = (Sab - a * b) / (M - 1) - (Sa - a) * (Sb - b) / (M - 1) ** 2
    se = math.sqrt((M - 1) / M * float(np.sum((loo - loo.mean()) ** 2)))
    return est, max(se, _floor(Sab / M, Sa / M, Sb / M))


def _cov_block_jackknife(a: np.ndarray, b: np.ndarray, blocks: int = 100) -> tuple:
    M = len(a)
    Sab, Sa, Sb = math.fsum(a * b), math.fsum(a), math.fsum(b)
    est = Sab / M - (Sa / M) * (Sb / M)
    edges = np.linspace(0, M, blocks + 1).astype(int)
    loo = np.empty(blocks)
    for j in range(blocks):
        s = slice(edges[j], edges[j + 1])
        m = M - (edges[j + 1] - edges[j])
        loo[j] = ((Sab - a[s] @ b[s]) / m
                  - (Sa - a[s].sum()) * (Sb - b[s].sum()) / m ** 2)
    se = math.sqrt((blocks - 1) / blocks * float(np.sum((loo - loo.mean()) ** 2)))
    return est, max(se, _floor(Sab / M, Sa / M, Sb / M))


def _floor(*terms) -> float:
    # rounding floor so that exactly-zero covariances still get a positive error
    return 64 * _EPS * max(1.0, *(abs(t) for t in terms))


def _sample_states(sys, rng, M: int):
    """Starting states: integer numerators over a prime modulus for linear
    maps, floats otherwise.  Returns ``(states, q)`` with ``q = None`` for floats."""
    if "exact_modular" in sys.modes:
        q = random_modulus(61, int(rng.integers(0, 2**31)))
        return sys.sample_modular(rng, M, q), q
    return sys.sample(rng, M), None


def _advance(sys, states, q):
    if q is None:
        return sys.step_array(states)
    return sys.step_modular_array(states, q)


def _as_float(states, q):
    return states if q is None else states / q


def estimate_correlation(sys, f: Callable, g: Callable, n_max: int, samples: int = 10**6,
                         estimator: str = "monte-carlo",
                         rng: np.random.Generator | None = None) -> CorrelationCurve:
    """``C(n) = int f . g o T^n dmu - int f dmu int g dmu`` for ``n = 0..n_max``."""
    if estimator not in ESTIMATORS:
        raise InvalidArgumentError(f"unsupported estimator {estimator!r}; use one of {ESTIMATORS}")
    if samples < 1000:
        raise InvalidArgumentError("at least 1000 samples are needed")
    if n_max < 0:
        raise InvalidArgumentError("n_max must be non-negative")
    sys = get_system(sys)
    rng = np.random.default_rng(0) if rng is None else rng
    lags, est, err = list(range(n_max + 1)), [], []

    if estimator == "monte-carlo":
        states, q = _sample_states(sys, rng, samples)
        a = np.asarray(f(_as_float(states, q)), dtype=np.float64)
        for n in lags:
            if n:
                states = _advance(sys, states, q)
            b = np.asarray(g(_as_float(states, q)), dtype=np.float64)
            c, s = _cov_jackknife(a, b)
            est.append(c)
            err.append(s)
    else:
        traj = _birkhoff_orbit(sys, rng, samples + n_max)
        a = np.asarray(f(traj[:samples]), dtype=np.float64)
        for n in lags:
            b = np.asarray(g(traj[n:n + samples]), dtype=np.float64)
            c, s = _cov_block_jackknife(a, b)
            est.append(c)
            err.append(s)
    return CorrelationCurve(lags, est, err, samples, estimator)


def _birkhoff_orbit(sys, rng, length: int) -> np.ndarray:
    states, q = _sample_states(sys, rng, 1)
    if q is not None:
        return _kernels.modular_orbit_floats(np.asarray(sys.multipliers, dtype=np.int64),
                                             states[0].astype(np.int64), q, length - 1)
    out = np.empty((length, sys.dim))
    x = states
    for k in range(length):
        out[k] = x[0]
        x = sys.step_array(x)
    return out


def fit_decay_rate(curve: CorrelationCurve) -> DecayFit:
    """Least-squares fit of ``log|C(n)| = log C - tau n`` over lags with ``|C(n)| > 3 se``."""
    lags = [n for n, c, s in zip(curve.lags, curve.estimates, curve.stderr) if abs(c) > 3 * s]
    if len(lags) < 3:
        raise InsufficientSignalError(f"only {len(lags)} lags exceed three standard errors")
    vals = {n: abs(c) for n, c in zip(curve.lags, curve.estimates)}
    x = np.asarray(lags, dtype=np.float64)
    y = np.log([vals[n] for n in lags])
    slope, intercept = np.polyfit(x, y, 1)
    return DecayFit(float(math.exp(intercept)), float(-slope), tuple(lags))


@dataclass
class SetCorrelationReport:
    lags: list
    deviations: list
    stderr: list
    mu_R: float
    mu_F: float
    envelope: DecayFit | None
    decays: bool
    note: str = ""


def set_correlation_check(sys, R, F, n_max: int, samples: int = 10**5,
                          rng: np.random.Generator | None = None) -> SetCorrelationReport:
    """Frequency estimate of ``|mu(R & T^-n F) - mu(R) mu(F)|`` for ``n = 0..n_max``."""
    sys = get_system(sys)
    R = R if isinstance(R, Hyperrectangle) else Hyperrectangle.from_bounds(R)
    F = F if isinstance(F, Hyperrectangle) else Hyperrectangle.from_bounds(F)
    mu_R, mu_F = mu_rect(sys, R).value, mu_rect(sys, F).value
    if not mu_F > 0:
        raise InvalidArgumentError("F must have positive measure")
    rng = np.random.default_rng(0) if rng is None else rng
    states, q = _sample_states(sys, rng, samples)
    X = _as_float(states, q)
    inR = _inside(X, R)
    devs, errs = [], []
    for n in range(n_max + 1):
        if n:
            states = _advance(sys, states, q)
        p = float(np.mean(inR & _inside(_as_float(states, q), F)))
        devs.append(abs(p - mu_R * mu_F))
        errs.append(max(math.sqrt(p * (1 - p) / samples), _floor(p)))
    curve = CorrelationCurve(list(range(n_max + 1)), devs, errs, samples, "monte-carlo")
    try:
        envelope, note = fit_decay_rate(curve), ""
        if envelope.tau <= 0:
            note = "fitted rate is not positive"
    except InsufficientSignalError as exc:
        envelope, note = None, str(exc)
    decays = devs[-1] <= devs[0] + 3 * math.hypot(errs[0], errs[-1])
    return SetCorrelationReport(curve.lags, devs, errs, mu_R, mu_F, envelope, decays, note)


def _inside(X: np.ndarray, R: Hyperrectangle) -> np.ndarray:
    lo, hi = np.asarray(R.lower), np.asarray(R.upper)
    return np.all((X >= lo) & (X <= hi), axis=1)


# -- cylinders ------------------------------------------------------------------

@dataclass(frozen=True)
class Cylinder:
    depth: int
    word: tuple
    bounds: tuple
    exact: tuple | None = field(default=None, compare=False)

    @property
    def rect(self) -> Hyperrectangle:
        return Hyperrectangle.from_bounds(self.bounds)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in self.bounds)


def gauss_cylinder(word: Sequence[int]) -> tuple:
    """Exact endpoints ``(lo, hi)`` of the points whose first partial quotients are ``word``."""
    p_prev, q_prev, p, q = 1, 0, 0, 1
    for a in word:
        if a < 1:
            raise InvalidArgumentError("partial quotients start at 1")
        p_prev, q_prev, p, q = p, q, a * p + p_prev, a * q + q_prev
    ends = (Fraction(p, q), Fraction(p + p_prev, q + q_prev))
    return min(ends), max(ends)


def _beta_cylinder(word) -> tuple | None:
    inv = 1 / GOLDEN
    lo, hi = (0.0, inv) if word[-1] == 0 else (inv, 1.0)
    for w in reversed(word[:-1]):
        if w == 1:
            # the right branch only reaches [0, 1/beta)
            hi = min(hi, inv)
            if hi <= lo:
                return None
            lo, hi = (lo + 1) / GOLDEN, (hi + 1) / GOLDEN
        else:
            lo, hi = lo / GOLDEN, hi / GOLDEN
    return lo, hi


def cylinders(sys, depth: int, cap: int | None = None) -> Iterator[Cylinder]:
    """Nonempty depth-``n`` cylinders; Gauss words use partial quotients ``<= cap``."""
    sys = get_system(sys)
    if depth < 1:
        raise InvalidArgumentError("depth must be at least 1")
    if isinstance(sys, GaussMap):
        if cap is None:
            raise InvalidArgumentError("the Gauss partition is infinite; pass cap")
        for word in product(range(1, cap + 1), repeat=depth):
            lo, hi = gauss_cylinder(word)
            yield Cylinder(depth, word, ((float(lo), float(hi)),), ((lo, hi),))
    elif isinstance(sys, GoldenBeta):
        for word in product((0, 1), repeat=depth):
            b = _beta_cylinder(word)
            if b is not None:
                yield Cylinder(depth, word, (b,))
    else:
        digits = list(sys._digits())
        for word in product(range(len(digits)), repeat=depth):
            exact = []
            for axis, m in enumerate(sys.multipliers):
                lo = sum(Fraction(digits[w][axis], m ** (j + 1)) for j, w in enumerate(word))
                exact.append((lo, lo + Fraction(1, m ** depth)))
            yield Cylinder(depth, word, tuple((float(a), float(b)) for a, b in exact),
                           tuple(exact))


def cylinder_mass(sys, depth: int, cap: int | None = None) -> dict:
    """Total Lebesgue mass of the enumerated cylinders and the uncovered tail."""
    total = math.fsum(c.volume for c in cylinders(sys, depth, cap))
    return {"mass": total, "tail": max(0.0, 1.0 - total)}


# -- boundary neighbourhoods ----------------------------------------------------

@dataclass(frozen=True)
class BoundaryMeasure:
    value: float
    grid: float
    rel_error: float


def _grid_count(lo: float, hi: float, h: float) -> int:
    # cells [k h, (k+1) h] of the unit interval whose centres lie in [lo, hi)
    lo, hi = max(lo, 0.0), min(hi, 1.0)
    if hi <= lo:
        return 0
    return max(0, math.ceil(hi / h - 0.5) - math.ceil(lo / h - 0.5))


def boundary_neighborhood_measure(E, eps: float, grid: float | None = None) -> BoundaryMeasure:
    """Grid estimate of ``lambda((dE)_eps)`` inside the unit cube for a box ``E``.

    The neighbourhood of a box's boundary is the enlarged box minus the
    shrunken one, so the count factors into one-dimensional grid counts.
    """
    if isinstance(E, Cylinder):
        E = E.rect
    elif not isinstance(E, Hyperrectangle):
        E = Hyperrectangle.from_bounds(E)
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    h = eps / 10 if grid is None else float(grid)
    if not 0 < h <= eps / 10 * (1 + 1e-12):
        raise InvalidArgumentError(f"grid {h} is coarser than eps/10 = {eps / 10}")
    outer = 1
    inner = 1
    for a, b in E.bounds:
        outer *= _grid_count(a - eps, b + eps, h)
        inner *= _grid_count(a + eps, b - eps, h) if b - a > 2 * eps else 0
    value = (outer - inner) * h ** E.dim
    return BoundaryMeasure(value, h, h / eps)


@dataclass
class BoundaryRegularityReport:
    descriptor: str
    eps: list
    measures: list
    alpha_hat: float
    K1_hat: float
    bound: float
    passed: bool


def condition_IV_check(sys, eps_grid: Sequence[float] = (1e-2, 1e-3, 1e-4),
                       branch_sample: int = 100, alpha: float = 1.0) -> BoundaryRegularityReport:
    """Largest ``lambda((dU_i)_eps) / eps^alpha`` over branches and ``eps``."""
    sys = get_system(sys)
    n = branch_sample if sys.n_branches is None else sys.n_branches
    first = 1 if isinstance(sys, GaussMap) else 0
    boxes = [sys.partition(i) for i in range(first, first + n)]
    eps_grid = sorted(float(e) for e in eps_grid)
    measures, ratio = [], 0.0
    for eps in eps_grid:
        vals = [boundary_neighborhood_measure(b, eps).value for b in boxes]
        measures.append(max(vals))
        ratio = max(ratio, max(vals) / eps ** alpha)
    if len(eps_grid) > 1:
        alpha_hat = float(np.polyfit(np.log(eps_grid), np.log(measures), 1)[0])
    else:
        alpha_hat = float("nan")
    return BoundaryRegularityReport(f"{sys.name}: {n} branches", eps_grid, measures,
                                    alpha_hat, ratio, sys.boundary_constant,
                                    ratio <= sys.boundary_constant)


def condition_V_check(sys, r_grid: Sequence[float] = (0.1, 0.01, 0.001)) -> list:
    """Branches not inside the ``r``-neighbourhood of the concentration set."""
    sys = get_system(sys)
    beta1, beta2, K2 = sys.concentration_constants
    rows = []
    for r in r_grid:
        rr = Fraction(repr(float(r)))
        if not 0 < rr < 1:
            raise InvalidArgumentError("r must lie in (0, 1)")
        if isinstance(sys, GaussMap):
            # U_i = (1/(i+1), 1/i] sits inside B(0, r) iff 1/i <= r
            count, i = 0, 1
            while Fraction(1, i) > rr:
                count += 1
                i += 1
        else:
            count = sum(1 for box in sys.branches() if not _in_some_ball(box, sys.concentration_set, rr))
        measure = _ball_union_measure(sys.concentration_set, float(rr))
        rows.append({"r": float(r), "count": count, "measure": measure,
                     "count_bound": K2 * float(r) ** -beta1,
                     "measure_bound": K2 * float(r) ** beta2,
                     "passed": count <= K2 * float(r) ** -beta1 and measure <= K2 * float(r) ** beta2})
    return rows


def _in_some_ball(box, centers, r) -> bool:
    return any(all(Fraction(b) - Fraction(c) <= r and Fraction(c) - Fraction(a) <= r
                   for (a, b), c in zip(box, center)) for center in centers)


def _ball_union_measure(centers, r: float) -> float:
    # centres are few and far apart for the built-in systems
    total = 0.0
    for c in centers:
        total += math.prod(min(ci + r, 1.0) - max(ci - r, 0.0) for ci in c)
    return total


def cylinder_boundary_growth(sys, depths: Sequence[int] = (1, 2, 3, 4, 5), eps: float = 1e-4,
                             cap: int = 4) -> list:
    """``max lambda((dJ_n)_eps)`` per depth against ``K max(n, L^{-nd}) eps``, ``K`` fixed at n = 1."""
    sys = get_system(sys)
    L, d = sys.expansion, sys.dim
    depths = sorted(depths)
    if depths[0] != 1:
        depths = [1] + depths
    rows, K = [], None
    for n in depths:
        worst, count = 0.0, 0
        for cyl in cylinders(sys, n, cap):
            worst = max(worst, boundary_neighborhood_measure(cyl, eps).value)
            count += 1
        scale = max(n, L ** (-n * d)) * eps
        if K is None:
            K = worst / scale
        rows.append({"depth": n, "cylinders": count, "max_measure": worst,
                     "envelope": K * scale, "passed": worst <= K * scale * (1 + 1e-9)})
    return rows


def observable(name: str, sys) -> Callable:
    """Named observables for the command line: ``x<i>``, ``one``."""
    sys = get_system(sys)
    if name == "one":
        return constant(1.0)
    if name.startswith("x") and name[1:].isdigit() and int(name[1:]) < sys.dim:
        return coordinate(int(name[1:]))
    raise InvalidArgumentError(f"unknown observable {name!r}")


def point_bump(x, r: float, eps: float) -> HolderBump:
    return HolderBump(Hyperrectangle(as_point(x), (float(r),) * len(as_point(x))), eps)
