"""Built-in measure-preserving systems on ``[0, 1]^d`` and their orbit engines.

Four systems are provided: the Gauss map, the golden-mean beta
transformation, the doubling map and the toral endomorphism ``diag(2, 3)``.
Each exposes its map, branch partition, invariant density, expansion
constant, a sampler for the invariant measure, and inverse branches (used
for transfer-operator quadrature).

Orbit modes:

``float64``
    plain binary floating point.  Fine for Gauss and beta over long horizons.
``exact_modular``
    states ``a/q`` iterated as integers ``a -> m*a mod q``.  Only for the
    linear maps; in binary floating point ``2x mod 1`` runs out of mantissa
    after 53 steps.
``high_precision``
    mpmath floats with a fixed bit budget, for validation over short horizons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import count, product
from typing import Callable, Iterator

import mpmath
import numpy as np
import sympy

from .core import InvalidArgumentError, as_point

GOLDEN = (1 + math.sqrt(5)) / 2
PARRY_C = (GOLDEN + 1) / (GOLDEN + 2)
LN2 = math.log(2.0)

MODES = ("float64", "exact_modular", "high_precision")


class InvalidModeError(ValueError):
    """The requested orbit mode or state does not fit the system."""


class PrecisionBudgetError(ValueError):
    """A high-precision orbit would outrun its bit budget."""


class OutOfRangeError(IndexError):
    pass


@dataclass(frozen=True)
class InverseBranch:
    """One inverse branch ``psi`` of T, defined on ``image`` (a box)."""

    image: tuple
    psi: Callable
    jacobian: Callable


class System:
    """Base class; subclasses fill in the map-specific pieces."""

    name: str = ""
    dim: int = 1
    expansion: float = 1.0
    lyapunov_bits: float = 1.0
    default_mode: str = "float64"
    modes: tuple = ("float64", "high_precision")
    multipliers: tuple = ()
    n_branches: int | None = None
    concentration_set: tuple = ()
    # boundary regularity: bound on lambda((dU_i)_eps) / eps at alpha = 1
    boundary_constant: float = 4.2
    # partition concentration: (beta_1, beta_2, K_2) with
    # count <= K_2 r^-beta_1 and measure <= K_2 r^beta_2
    concentration_constants: tuple = (1.0, 1.0, 2.0)
    breakpoints: tuple = ()

    def __repr__(self):
        return f"<System {self.name}>"

    def check_point(self, x) -> tuple:
        x = as_point(x, self.dim)
        if any(not 0.0 <= c <= 1.0 for c in x):
            raise InvalidArgumentError(f"{x} is outside the unit cube")
        return x

    # -- map ---------------------------------------------------------------
    def step(self, x) -> tuple:
        x = self.check_point(x)
        return tuple(float(v) for v in self.step_array(np.array([x]))[0])

    def step_array(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def branch_index(self, x):
        raise NotImplementedError

    # -- density -----------------------------------------------------------
    def density(self, x) -> float:
        x = self.check_point(x)
        return float(self.density_array(np.array([x]))[0])

    def density_array(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def interval_measure(self, a: float, b: float, axis: int = 0) -> float:
        """Closed-form measure of ``[a, b]`` along one axis (product densities)."""
        raise NotImplementedError

    # -- partition ---------------------------------------------------------
    def partition(self, i):
        raise NotImplementedError

    def branches(self) -> Iterator[tuple]:
        raise NotImplementedError

    def inverse_branches(self, limit: int | None = None) -> list:
        raise NotImplementedError

    def preimage_tail(self, y: np.ndarray, limit: int) -> np.ndarray:
        """Transfer-operator mass from branches beyond ``limit``; zero if finite."""
        return np.zeros(len(y))

    # -- sampling ----------------------------------------------------------
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sample_modular(self, rng: np.random.Generator, size: int, q: int) -> np.ndarray:
        if "exact_modular" not in self.modes:
            raise InvalidModeError(f"{self.name} has no exact-modular engine")
        return rng.integers(1, q, size=(size, self.dim), dtype=np.int64)

    def step_modular_array(self, A: np.ndarray, q: int) -> np.ndarray:
        if "exact_modular" not in self.modes:
            raise InvalidModeError(f"{self.name} has no exact-modular engine")
        return (A * np.asarray(self.multipliers, dtype=np.int64)) % q

    def check_modulus(self, q: int, axis: int = 0) -> None:
        if "exact_modular" not in self.modes:
            raise InvalidModeError(f"{self.name} has no exact-modular engine")
        if q < 2 or math.gcd(q, math.prod(self.multipliers)) != 1:
            raise InvalidModeError(
                f"modulus {q} must be coprime to {math.prod(self.multipliers)} for {self.name}")

    # -- high precision ----------------------------------------------------
    def hp_step(self, ctx, x: tuple) -> tuple:
        raise NotImplementedError

    def expansion_lower_bound(self) -> float:
        return self.expansion


class GaussMap(System):
    name = "gauss"
    expansion = 1.0
    # pi^2 / (6 ln 2) nats per step
    lyapunov_bits = math.pi ** 2 / (6 * LN2) / LN2
    concentration_set = ((0.0,),)
    concentration_constants = (1.0, 1.0, 2.0)

    def step_array(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros_like(X)
        nz = X != 0
        y = 1.0 / X[nz]
        out[nz] = y - np.floor(y)
        return out

    def branch_index(self, x):
        # floor(1/x); points 1/m sit on the right end of branch m
        x = self.check_point(x)[0]
        return None if x == 0 else int(math.floor(1.0 / x))

    def density_array(self, X):
        X = np.asarray(X, dtype=np.float64)
        return 1.0 / ((1.0 + X[:, 0]) * LN2)

    def interval_measure(self, a, b, axis=0):
        return (math.log1p(b) - math.log1p(a)) / LN2

    def partition(self, i):
        if i < 1:
            raise OutOfRangeError("Gauss branches are numbered from 1")
        return ((1.0 / (i + 1), 1.0 / i),)

    def branches(self):
        for i in count(1):
            yield self.partition(i)

    def inverse_branches(self, limit=None):
        if limit is None:
            raise InvalidArgumentError("the Gauss partition is infinite; pass a limit")
        out = []
        for i in range(1, limit + 1):
            out.append(InverseBranch(((0.0, 1.0),),
                                     lambda y, i=i: 1.0 / (y + i),
                                     lambda y, i=i: 1.0 / (y + i) ** 2))
        return out

    def preimage_sum(self, y, limit):
        # all branches share the image [0, 1]; broadcast over i = 1..limit
        z = y[:, None] + np.arange(1, limit + 1, dtype=np.float64)
        return np.sum(1.0 / ((1.0 + 1.0 / z) * LN2 * z * z), axis=1)

    def preimage_tail(self, y, limit):
        # sum over i > limit approximated by the integral from limit + 1/2,
        # which telescopes into the measure of (0, 1/(y + limit + 1/2))
        return np.log1p(1.0 / (y + limit + 0.5)) / LN2

    def sample(self, rng, size):
        u = rng.random(size)
        return np.expm1(u * LN2)[:, None]

    def hp_step(self, ctx, x):
        v = x[0]
        if v == 0:
            return (v,), 0
        y = 1 / v
        k = ctx.floor(y)
        return (y - k,), int(k)


class GoldenBeta(System):
    name = "beta_golden"
    expansion = GOLDEN
    lyapunov_bits = math.log2(GOLDEN)
    n_branches = 2
    breakpoints = (1 / GOLDEN,)
    concentration_constants = (1.0, 1.0, 2.0)

    def step_array(self, X):
        y = GOLDEN * np.asarray(X, dtype=np.float64)
        return y - np.floor(y)

    def branch_index(self, x):
        x = self.check_point(x)[0]
        return 0 if x < 1 / GOLDEN else 1

    def density_array(self, X):
        X = np.asarray(X, dtype=np.float64)[:, 0]
        return np.where(X < 1 / GOLDEN, PARRY_C * GOLDEN, PARRY_C)

    def interval_measure(self, a, b, axis=0):
        bp = 1 / GOLDEN
        low = max(0.0, min(b, bp) - a)
        high = max(0.0, b - max(a, bp))
        return PARRY_C * GOLDEN * low + PARRY_C * high

    def partition(self, i):
        if i == 0:
            return ((0.0, 1 / GOLDEN),)
        if i == 1:
            return ((1 / GOLDEN, 1.0),)
        raise OutOfRangeError(f"golden beta has 2 branches, asked for {i}")

    def branches(self):
        yield self.partition(0)
        yield self.partition(1)

    def inverse_branches(self, limit=None):
        return [
            InverseBranch(((0.0, 1.0),), lambda y: y / GOLDEN,
                          lambda y: np.full_like(y, 1 / GOLDEN)),
            InverseBranch(((0.0, GOLDEN - 1),), lambda y: (y + 1) / GOLDEN,
                          lambda y: np.full_like(y, 1 / GOLDEN)),
        ]

    def sample(self, rng, size):
        # rejection against the two-level density, envelope C*beta
        out = np.empty(size)
        filled, tries = 0, 0
        while filled < size:
            tries += 1
            if tries > 10_000:
                raise RuntimeError("rejection sampler exceeded its try budget")
            m = max(2 * (size - filled), 16)
            x = rng.random(m)
            u = rng.random(m)
            accept = u * PARRY_C * GOLDEN <= np.where(x < 1 / GOLDEN, PARRY_C * GOLDEN, PARRY_C)
            x = x[accept][: size - filled]
            out[filled:filled + len(x)] = x
            filled += len(x)
        return out[:, None]

    def hp_step(self, ctx, x):
        beta = (1 + ctx.sqrt(5)) / 2
        y = beta * x[0]
        k = ctx.floor(y)
        return (y - k,), int(k)


class _LinearMap(System):
    """``x -> diag(m) x mod 1`` with Lebesgue measure."""

    default_mode = "exact_modular"
    modes = MODES

    def step_array(self, X):
        y = np.asarray(X, dtype=np.float64) * np.asarray(self.multipliers, dtype=np.float64)
        return y - np.floor(y)

    def branch_index(self, x):
        x = self.check_point(x)
        idx = tuple(min(int(math.floor(m * c)), m - 1) for m, c in zip(self.multipliers, x))
        return idx[0] if self.dim == 1 else idx

    def density_array(self, X):
        return np.ones(len(X))

    def interval_measure(self, a, b, axis=0):
        return b - a

    def _digits(self):
        return product(*(range(m) for m in self.multipliers))

    def partition(self, i):
        digits = list(self._digits())
        if not 0 <= i < len(digits):
            raise OutOfRangeError(f"{self.name} has {len(digits)} branches, asked for {i}")
        return tuple((k / m, (k + 1) / m) for k, m in zip(digits[i], self.multipliers))

    def branches(self):
        for i in range(self.n_branches):
            yield self.partition(i)

    def inverse_branches(self, limit=None):
        out = []
        jac = 1.0 / math.prod(self.multipliers)
        for digits in self._digits():
            k = np.asarray(digits, dtype=np.float64)
            m = np.asarray(self.multipliers, dtype=np.float64)
            out.append(InverseBranch(tuple((0.0, 1.0) for _ in self.multipliers),
                                     lambda y, k=k, m=m: (y + k) / m,
                                     lambda y, jac=jac: np.full(len(y), jac)))
        return out

    def sample(self, rng, size):
        return rng.random((size, self.dim))

    def hp_step(self, ctx, x):
        out, branch = [], []
        for m, c in zip(self.multipliers, x):
            y = m * c
            k = ctx.floor(y)
            out.append(y - k)
            branch.append(int(k))
        return tuple(out), (branch[0] if self.dim == 1 else tuple(branch))


class DoublingMap(_LinearMap):
    name = "doubling"
    multipliers = (2,)
    expansion = 2.0
    lyapunov_bits = 1.0
    n_branches = 2
    concentration_constants = (1.0, 1.0, 2.0)


class ToralDiag23(_LinearMap):
    name = "toral_diag23"
    dim = 2
    multipliers = (2, 3)
    # max-norm: |A v| >= 2 |v|
    expansion = 2.0
    lyapunov_bits = math.log2(3)
    n_branches = 6
    boundary_constant = 10.0
    concentration_constants = (1.0, 1.0, 6.0)


SYSTEMS = {
    "gauss": GaussMap(),
    "beta_golden": GoldenBeta(),
    "doubling": DoublingMap(),
    "toral_diag23": ToralDiag23(),
}


def get_system(name) -> System:
    if isinstance(name, System):
        return name
    try:
        return SYSTEMS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown system {name!r}; choose from {', '.join(SYSTEMS)}") from None


def step(sys, x) -> tuple:
    return get_system(sys).step(x)


def density(sys, x) -> float:
    return get_system(sys).density(x)


def expansion_lower_bound(sys) -> float:
    return get_system(sys).expansion_lower_bound()


def partition(sys, i=None):
    """Branch ``i``, or a lazy iterator over all branches when ``i`` is None."""
    sys = get_system(sys)
    return sys.branches() if i is None else sys.partition(i)


def sample_mu(sys, rng: np.random.Generator, size: int | None = None):
    """Points distributed according to the invariant measure."""
    sys = get_system(sys)
    pts = sys.sample(rng, 1 if size is None else size)
    return tuple(float(v) for v in pts[0]) if size is None else pts


def check_expansion(sys, n_pairs: int = 100_000, rng=None, max_branch: int = 1000,
                    tol: float = 1e-12) -> dict:
    """Sample pairs inside closed branches and test ``|Tx - Ty| >= L |x - y|``."""
    sys = get_system(sys)
    rng = np.random.default_rng(0) if rng is None else rng
    L = sys.expansion
    if sys.n_branches is None:
        idx = np.minimum(rng.geometric(0.05, n_pairs), max_branch)
    else:
        idx = rng.integers(0, sys.n_branches, n_pairs)
    worst, violations = math.inf, 0
    for b in np.unique(idx):
        k = int(np.sum(idx == b))
        box = sys.partition(int(b))
        lo = np.array([a for a, _ in box])
        hi = np.array([c for _, c in box])
        X = lo + (hi - lo) * rng.random((k, sys.dim))
        Y = lo + (hi - lo) * rng.random((k, sys.dim))
        TX, TY = _branch_map(sys, int(b), X), _branch_map(sys, int(b), Y)
        lhs = np.max(np.abs(TX - TY), axis=1)
        rhs = L * np.max(np.abs(X - Y), axis=1)
        violations += int(np.sum(lhs < rhs - tol))
        worst = min(worst, float(np.min(lhs - rhs)))
    return {"L": L, "pairs": n_pairs, "violations": violations, "min_margin": worst}


def _branch_map(sys, b, X):
    # continuous extension of T to the closure of branch b
    if isinstance(sys, GaussMap):
        return 1.0 / X - b
    if isinstance(sys, GoldenBeta):
        return GOLDEN * X - b
    digits = list(sys._digits())[b]
    return X * np.asarray(sys.multipliers) - np.asarray(digits)


# -- exact-modular arithmetic --------------------------------------------------

def parse_rational(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise InvalidArgumentError(f"cannot read {value!r} as a rational a/q")


def exact_state(sys, x0) -> tuple:
    """``((a_1, q_1), ...)`` for a rational seed, validated against the map."""
    sys = get_system(sys)
    if isinstance(x0, (str, Fraction, int)):
        x0 = (x0,)
    fracs = [parse_rational(v) for v in x0]
    if len(fracs) != sys.dim:
        raise InvalidArgumentError(f"{sys.name} needs {sys.dim} coordinates")
    out = []
    for f in fracs:
        if not 0 <= f < 1:
            raise InvalidArgumentError(f"{f} is not in [0, 1)")
        sys.check_modulus(f.denominator)
        out.append((f.numerator, f.denominator))
    return tuple(out)


def random_modulus(bits: int = 61, seed: int = 0) -> int:
    """A safe prime ``q`` with ``bits`` bits, derived deterministically from ``seed``.

    For a safe prime the multiplicative orders of 2 and 3 are at least
    ``(q - 1) / 2``, so orbits of the linear maps never close in practice.
    """
    if not 8 <= bits <= 62:
        raise InvalidArgumentError("modulus_bits must lie in [8, 62]")
    rng = np.random.default_rng([seed, bits])
    while True:
        p = int(rng.integers(1 << (bits - 1), 1 << bits, dtype=np.uint64)) | 3
        if p % 12 == 11 and sympy.isprime(p) and sympy.isprime((p - 1) // 2):
            return p


# -- orbit engines --------------------------------------------------------------

class FloatOrbit:
    def __init__(self, sys, x0):
        self.sys = get_system(sys)
        self.state = np.array([self.sys.check_point(x0)], dtype=np.float64)
        self.branch = None

    def __iter__(self):
        return self

    def __next__(self) -> tuple:
        self.branch = self.sys.branch_index(tuple(self.state[0]))
        self.state = self.sys.step_array(self.state)
        return tuple(float(v) for v in self.state[0])


class ExactModularOrbit:
    """Integer iteration ``a -> m a mod q``; records the period once the state recurs."""

    def __init__(self, sys, x0):
        self.sys = get_system(sys)
        state = exact_state(self.sys, x0)
        self.a = [a for a, _ in state]
        self.q = [q for _, q in state]
        self.start = tuple(self.a)
        self.steps = 0
        self.period = None
        self.branch = None

    def __iter__(self):
        return self

    def __next__(self) -> tuple:
        branch = tuple(m * a // q for m, a, q in zip(self.sys.multipliers, self.a, self.q))
        self.branch = branch[0] if self.sys.dim == 1 else branch
        self.a = [m * a % q for m, a, q in zip(self.sys.multipliers, self.a, self.q)]
        self.steps += 1
        if self.period is None and tuple(self.a) == self.start:
            self.period = self.steps
        return tuple(Fraction(a, q) for a, q in zip(self.a, self.q))


class HighPrecisionOrbit:
    """mpmath orbit at ``bits`` of working precision."""

    def __init__(self, sys, x0, bits: int = 512):
        self.sys = get_system(sys)
        self.ctx = mpmath.MPContext()
        self.ctx.prec = bits
        self.bits = bits
        if callable(x0):
            x0 = x0(self.ctx)
        if isinstance(x0, (str, Fraction, int, float)) or not np.iterable(x0):
            x0 = (x0,)
        self.state = tuple(self._convert(v) for v in x0)
        if len(self.state) != self.sys.dim:
            raise InvalidArgumentError(f"{self.sys.name} needs {self.sys.dim} coordinates")
        self.branch = None

    def _convert(self, v):
        if isinstance(v, Fraction):
            return self.ctx.mpf(v.numerator) / v.denominator
        return self.ctx.mpf(v)

    def __iter__(self):
        return self

    def __next__(self) -> tuple:
        self.state, self.branch = self.sys.hp_step(self.ctx, self.state)
        return self.state


def make_engine(sys, x0, mode: str | None = None, precision_bits: int = 512, horizon: int = 0):
    sys = get_system(sys)
    mode = sys.default_mode if mode is None else mode
    if mode not in MODES:
        raise InvalidModeError(f"unknown orbit mode {mode!r}")
    if mode not in sys.modes:
        raise InvalidModeError(f"{sys.name} does not support {mode}")
    if mode == "float64":
        return FloatOrbit(sys, x0)
    if mode == "exact_modular":
        return ExactModularOrbit(sys, x0)
    need = sys.lyapunov_bits * horizon
    if precision_bits < need:
        raise PrecisionBudgetError(
            f"{horizon} steps of {sys.name} consume about {need:.0f} bits "
            f"(Lyapunov exponent {sys.lyapunov_bits:.3f} bits/step) but only "
            f"{precision_bits} are available; raise precision_bits or shorten the horizon")
    return HighPrecisionOrbit(sys, x0, precision_bits)


def orbit(sys, x0, N: int, mode: str | None = None, precision_bits: int = 512) -> Iterator[tuple]:
    """Yield ``T^k x0`` for ``k = 1..N`` without storing the orbit."""
    engine = make_engine(sys, x0, mode, precision_bits, N)
    for _ in range(N):
        yield next(engine)
