"""Geometric primitives and radius schedules.

Points live in the unit cube ``[0, 1]^d`` with the max norm.  Targets are
closed axis-parallel rectangles ``R(x, r) = prod [x_i - r_i, x_i + r_i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InvalidArgumentError(ValueError):
    """Raised when an operation receives an argument outside its domain."""


Point = tuple  # tuple of floats in [0, 1]


def as_point(x, d: int | None = None) -> tuple:
    """Coerce a scalar or sequence into a coordinate tuple."""
    if np.isscalar(x):
        coords = (float(x),)
    else:
        coords = tuple(float(c) for c in x)
    if not coords:
        raise InvalidArgumentError("a point needs at least one coordinate")
    if d is not None and len(coords) != d:
        raise InvalidArgumentError(f"expected a {d}-dimensional point, got {len(coords)}")
    return coords


@dataclass(frozen=True)
class Hyperrectangle:
    center: tuple
    half_widths: tuple

    def __post_init__(self):
        if len(self.center) != len(self.half_widths):
            raise InvalidArgumentError("center and half_widths differ in dimension")
        if any(r < 0 for r in self.half_widths):
            raise InvalidArgumentError("half widths must be non-negative")

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple]) -> "Hyperrectangle":
        lo = [float(a) for a, _ in bounds]
        hi = [float(b) for _, b in bounds]
        if any(b < a for a, b in zip(lo, hi)):
            raise InvalidArgumentError("upper bound below lower bound")
        return cls(tuple((a + b) / 2 for a, b in zip(lo, hi)),
                   tuple((b - a) / 2 for a, b in zip(lo, hi)))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> tuple:
        return tuple(c - r for c, r in zip(self.center, self.half_widths))

    @property
    def upper(self) -> tuple:
        return tuple(c + r for c, r in zip(self.center, self.half_widths))

    @property
    def bounds(self) -> tuple:
        return tuple(zip(self.lower, self.upper))

    def clipped_bounds(self) -> tuple:
        """Bounds of ``R & [0,1]^d``; empty sides come back as ``(a, a)``."""
        out = []
        for a, b in self.bounds:
            a, b = max(a, 0.0), min(b, 1.0)
            out.append((a, max(a, b)))
        return tuple(out)

    def clipped(self) -> "Hyperrectangle":
        return Hyperrectangle.from_bounds(self.clipped_bounds())

    def volume(self, clip: bool = True) -> float:
        bounds = self.clipped_bounds() if clip else self.bounds
        return math.prod(b - a for a, b in bounds)

    def contains(self, y) -> bool:
        return contains(self, y)


def rect_from_center(x, r, clip: bool = False) -> Hyperrectangle:
    x = as_point(x)
    r = as_point(r, len(x)) if not np.isscalar(r) else (float(r),) * len(x)
    if any(ri < 0 for ri in r):
        raise InvalidArgumentError(f"negative radius {r}")
    rect = Hyperrectangle(x, r)
    return rect.clipped() if clip else rect


def contains(rect: Hyperrectangle, y) -> bool:
    """Closed-rectangle membership: ``|y_i - x_i| <= r_i`` for every i."""
    y = as_point(y)
    if len(y) != rect.dim:
        raise InvalidArgumentError(f"point of dimension {len(y)} vs rectangle of dimension {rect.dim}")
    return all(abs(yi - xi) <= ri for yi, xi, ri in zip(y, rect.center, rect.half_widths))


@dataclass(frozen=True)
class RadiusSchedule:
    """Radii ``r_n``, either ``r_{n,i} = c_i n^{-a_i}`` or an explicit finite list.

    An explicit list is padded with zero radii beyond its length.
    """

    family: str = "power"
    exponents: tuple = (0.5,)
    scales: tuple = (1.0,)
    values: tuple = ()

    def __post_init__(self):
        if self.family == "power":
            if len(self.exponents) != len(self.scales):
                raise InvalidArgumentError("exponents and scales differ in length")
            if any(a < 0 for a in self.exponents) or any(c < 0 for c in self.scales):
                raise InvalidArgumentError("exponents and scales must be non-negative")
        elif self.family == "explicit":
            if not self.values:
                raise InvalidArgumentError("explicit schedule needs at least one radius vector")
            d = len(self.values[0])
            if any(len(v) != d for v in self.values):
                raise InvalidArgumentError("explicit radius vectors differ in dimension")
            if any(c < 0 for v in self.values for c in v):
                raise InvalidArgumentError("radii must be non-negative")
        else:
            raise InvalidArgumentError(f"unknown schedule family {self.family!r}")

    @classmethod
    def power(cls, exponents, scales=None) -> "RadiusSchedule":
        exponents = tuple(float(a) for a in np.atleast_1d(exponents))
        if scales is None:
            scales = (1.0,) * len(exponents)
        scales = tuple(float(c) for c in np.atleast_1d(scales))
        return cls("power", exponents, scales)

    @classmethod
    def constant(cls, radii) -> "RadiusSchedule":
        radii = tuple(float(c) for c in np.atleast_1d(radii))
        return cls("power", (0.0,) * len(radii), radii)

    @classmethod
    def explicit(cls, values) -> "RadiusSchedule":
        rows = []
        for v in values:
            rows.append(tuple(float(c) for c in np.atleast_1d(v)))
        return cls("explicit", (), (), tuple(rows))

    @classmethod
    def from_dict(cls, data: dict) -> "RadiusSchedule":
        family = data.get("family", "power")
        if family == "power":
            return cls.power(data["exponents"], data.get("scales"))
        if family == "explicit":
            return cls.explicit(data["values"])
        raise InvalidArgumentError(f"unknown schedule family {family!r}")

    def to_dict(self) -> dict:
        if self.family == "power":
            return {"family": "power", "exponents": list(self.exponents), "scales": list(self.scales)}
        return {"family": "explicit", "values": [list(v) for v in self.values]}

    @property
    def dim(self) -> int:
        return len(self.exponents) if self.family == "power" else len(self.values[0])

    @property
    def divergent(self) -> bool:
        """Analytic classification of ``sum gamma_n``; never inferred from partial sums."""
        if self.family == "power":
            return sum(self.exponents) <= 1 and math.prod(self.scales) > 0
        return False

    def radii(self, n: int) -> tuple:
        if n < 1:
            raise InvalidArgumentError("schedule index starts at 1")
        if self.family == "power":
            return tuple(c * float(n) ** -a for a, c in zip(self.exponents, self.scales))
        if n <= len(self.values):
            return self.values[n - 1]
        return (0.0,) * self.dim

    def gamma(self, n: int) -> float:
        return math.prod(self.radii(n))

    def radii_array(self, N: int) -> np.ndarray:
        """Radii for ``n = 1..N`` as an ``(N, d)`` array."""
        n = np.arange(1, N + 1, dtype=np.float64)
        if self.family == "power":
            cols = [c * n ** -a for a, c in zip(self.exponents, self.scales)]
            return np.column_stack(cols) if cols else np.zeros((N, 0))
        out = np.zeros((N, self.dim))
        m = min(N, len(self.values))
        out[:m] = np.asarray(self.values[:m], dtype=np.float64)
        return out

    def gamma_array(self, N: int) -> np.ndarray:
        return np.prod(self.radii_array(N), axis=1)


def schedule_values(s, n: int) -> tuple:
    """Return ``(r_n, gamma_n)``."""
    r = s.radii(n)
    return r, s.gamma(n)


@dataclass(frozen=True)
class ThinnedSchedule:
    """A schedule with ``gamma_n`` zeroed wherever ``gamma_n <= n^{-2}``."""

    base: RadiusSchedule

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def divergent(self) -> bool:
        return self.base.divergent

    @property
    def family(self) -> str:
        return self.base.family

    def is_active(self, n: int) -> bool:
        return self.base.gamma(n) > float(n) ** -2

    def radii(self, n: int) -> tuple:
        if self.is_active(n):
            return self.base.radii(n)
        return (0.0,) * self.dim

    def gamma(self, n: int) -> float:
        return self.base.gamma(n) if self.is_active(n) else 0.0

    def active_mask(self, N: int) -> np.ndarray:
        n = np.arange(1, N + 1, dtype=np.float64)
        return self.base.gamma_array(N) > n ** -2

    def radii_array(self, N: int) -> np.ndarray:
        r = self.base.radii_array(N)
        r[~self.active_mask(N)] = 0.0
        return r

    def gamma_array(self, N: int) -> np.ndarray:
        g = self.base.gamma_array(N)
        g[~self.active_mask(N)] = 0.0
        return g

    def active_set(self, N: int) -> list:
        return [int(i) + 1 for i in np.flatnonzero(self.active_mask(N))]

    def removed_mass(self, N: int) -> float:
        """``sum_{n <= N, n not in D} gamma_n``; bounded by ``pi^2 / 6``."""
        g = self.base.gamma_array(N)
        return math.fsum(g[~self.active_mask(N)])

    def to_dict(self) -> dict:
        return {**self.base.to_dict(), "thinned": True}


def thin(s) -> ThinnedSchedule:
    if isinstance(s, ThinnedSchedule):
        return s
    return ThinnedSchedule(s)


_CHUNK = 1 << 20


def partial_normalizer(s, N: int, d: int | None = None) -> float:
    """``Phi_N = sum_{k <= N} 2^d gamma_k`` with correctly rounded chunk sums."""
    if N < 1:
        raise InvalidArgumentError("N must be at least 1")
    d = s.dim if d is None else d
    parts = []
    for start in range(0, N, _CHUNK):
        stop = min(N, start + _CHUNK)
        parts.append(math.fsum(_gamma_slice(s, start + 1, stop)))
    return 2.0 ** d * math.fsum(parts)


def _gamma_slice(s, first: int, last: int) -> np.ndarray:
    # gamma_n for n = first..last without materialising 1..first-1
    n = np.arange(first, last + 1, dtype=np.float64)
    base = s.base if isinstance(s, ThinnedSchedule) else s
    if base.family == "power":
        g = np.ones_like(n)
        for a, c in zip(base.exponents, base.scales):
            g *= c * n ** -a
    else:
        g = np.zeros_like(n)
        table = base.values[first - 1:last]
        if table:
            g[:len(table)] = np.prod(np.asarray(table, dtype=np.float64), axis=1)
    if isinstance(s, ThinnedSchedule):
        g = np.where(g > n ** -2, g, 0.0)
    return g


def normalizer_series(s, checkpoints: Sequence[int], weight: float = 1.0) -> list:
    """Running ``weight * sum_{k <= N_j} gamma_k`` at increasing checkpoints ``N_j``."""
    out, parts, prev = [], [], 0
    for c in checkpoints:
        for start in range(prev, c, _CHUNK):
            stop = min(c, start + _CHUNK)
            parts.append(math.fsum(_gamma_slice(s, start + 1, stop)))
        out.append(weight * math.fsum(parts))
        prev = c
    return out


def geometric_checkpoints(N: int, per_decade: int = 8) -> list:
    """Checkpoints ``round(10^{j/per_decade})`` up to and including N."""
    if N < 1:
        raise InvalidArgumentError("N must be at least 1")
    pts, j = set(), 0
    while True:
        v = int(round(10 ** (j / per_decade)))
        if v > N:
            break
        pts.add(v)
        j += 1
    pts.add(N)
    return sorted(pts)

