"""Compiled inner loops for long orbits.

Each kernel streams one orbit, computes ``r_k`` on the fly (power family)
or reads it from a finite table (explicit family), and records cumulative
hit counts at the requested checkpoints.
"""

import math

import numpy as np
from numba import njit

GAUSS, BETA, LINEAR = 0, 1, 2
LEBESGUE_MEASURE, GAUSS_MEASURE, BETA_MEASURE = 0, 1, 2

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
_INV_GOLDEN = 1.0 / _GOLDEN
_PARRY_C = (_GOLDEN + 1.0) / (_GOLDEN + 2.0)
_LN2 = math.log(2.0)


@njit(cache=True, nogil=True)
def _radii(k, family, exponents, scales, table, thinned, out):
    """Fill ``out`` with r_k; returns gamma_k (zero if thinned away)."""
    d = out.shape[0]
    g = 1.0
    if family == 0:
        fk = float(k)
        for i in range(d):
            out[i] = scales[i] * fk ** -exponents[i]
            g *= out[i]
    else:
        if k <= table.shape[0]:
            for i in range(d):
                out[i] = table[k - 1, i]
                g *= out[i]
        else:
            for i in range(d):
                out[i] = 0.0
            g = 0.0
    if thinned and not g > float(k) ** -2.0:
        for i in range(d):
            out[i] = 0.0
        g = 0.0
    return g


@njit(cache=True, nogil=True)
def _interval_measure(kind, a, b):
    if a < 0.0:
        a = 0.0
    if b > 1.0:
        b = 1.0
    if b <= a:
        return 0.0
    if kind == GAUSS_MEASURE:
        return (math.log1p(b) - math.log1p(a)) / _LN2
    if kind == BETA_MEASURE:
        lo = min(b, _INV_GOLDEN) - a
        hi = b - max(a, _INV_GOLDEN)
        return _PARRY_C * _GOLDEN * max(lo, 0.0) + _PARRY_C * max(hi, 0.0)
    return b - a


@njit(cache=True, nogil=True)
def _hat_hit(measure_kind, x, y, r, g):
    # y is in R(x, l_k r_k) iff mu(R(x, l* r_k)) <= gamma_k with l* the
    # smallest scale reaching y; mu(R(x, l r)) is nondecreasing in l.
    d = x.shape[0]
    lstar = 0.0
    for i in range(d):
        diff = abs(y[i] - x[i])
        if diff > 0.0:
            if r[i] == 0.0:
                return False
            v = diff / r[i]
            if v > lstar:
                lstar = v
    m = 1.0
    for i in range(d):
        m *= _interval_measure(measure_kind, x[i] - lstar * r[i], x[i] + lstar * r[i])
    return m <= g


@njit(cache=True, nogil=True)
def float_hits(kind, multipliers, x0, N, family, exponents, scales, table, thinned,
               hat, measure_kind, checkpoints, log_cap):
    d = x0.shape[0]
    x = x0.copy()
    r = np.empty(d)
    counts = np.zeros(checkpoints.shape[0], dtype=np.int64)
    log = np.zeros(log_cap, dtype=np.int64)
    nlog = 0
    hits = 0
    j = 0
    for k in range(1, N + 1):
        if kind == GAUSS:
            if x[0] != 0.0:
                t = 1.0 / x[0]
                x[0] = t - math.floor(t)
        elif kind == BETA:
            t = _GOLDEN * x[0]
            x[0] = t - math.floor(t)
        else:
            for i in range(d):
                t = multipliers[i] * x[i]
                x[i] = t - math.floor(t)
        g = _radii(k, family, exponents, scales, table, thinned, r)
        if hat:
            hit = _hat_hit(measure_kind, x0, x, r, g)
        else:
            hit = True
            for i in range(d):
                diff = abs(x[i] - x0[i])
                if diff > r[i]:
                    hit = False
                    break
        if hit:
            hits += 1
            if nlog < log_cap:
                log[nlog] = k
                nlog += 1
        while j < checkpoints.shape[0] and checkpoints[j] == k:
            counts[j] = hits
            j += 1
    return counts, log[:nlog]


@njit(cache=True, nogil=True)
def modular_hits(multipliers, a0, q, N, family, exponents, scales, table, thinned,
                 hat, checkpoints, log_cap):
    d = a0.shape[0]
    a = a0.copy()
    x0 = np.empty(d)
    y = np.empty(d)
    for i in range(d):
        x0[i] = a0[i] / q[i]
    r = np.empty(d)
    counts = np.zeros(checkpoints.shape[0], dtype=np.int64)
    log = np.zeros(log_cap, dtype=np.int64)
    nlog = 0
    hits = 0
    j = 0
    for k in range(1, N + 1):
        for i in range(d):
            a[i] = (a[i] * multipliers[i]) % q[i]
        g = _radii(k, family, exponents, scales, table, thinned, r)
        if hat:
            for i in range(d):
                y[i] = a[i] / q[i]
            hit = _hat_hit(LEBESGUE_MEASURE, x0, y, r, g)
        else:
            hit = True
            for i in range(d):
                # integer difference is exact; compare |a - a0| <= r q
                diff = abs(a[i] - a0[i])
                if diff > r[i] * q[i]:
                    hit = False
                    break
        if hit:
            hits += 1
            if nlog < log_cap:
                log[nlog] = k
                nlog += 1
        while j < checkpoints.shape[0] and checkpoints[j] == k:
            counts[j] = hits
            j += 1
    return counts, log[:nlog]


@njit(cache=True, nogil=True)
def modular_orbit_floats(multipliers, a0, q, N):
    """Float images ``a_k / q`` for ``k = 0..N`` (used by Birkhoff averages)."""
    d = a0.shape[0]
    out = np.empty((N + 1, d))
    a = a0.copy()
    for i in range(d):
        out[0, i] = a[i] / q
    for k in range(1, N + 1):
        for i in range(d):
            a[i] = (a[i] * multipliers[i]) % q
            out[k, i] = a[i] / q
    return out
