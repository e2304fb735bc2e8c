"""Airy functions and modified Bessel functions of the first kind.

Everything is real, double precision and vectorized over the argument.
Large-argument values are available in exponentially scaled form so the
solvers can work with basis functions whose raw values would overflow:

* ``Ai, Ai'`` are multiplied by ``exp(+zeta)`` and ``Bi, Bi'`` by
  ``exp(-zeta)``, ``zeta = (2/3) x**1.5`` for ``x > 0`` (no scaling for
  ``x <= 0``);
* ``I_n`` and ``I_n'`` are multiplied by ``exp(-x)``.

Airy values on ``[-10, 9)`` come from Taylor expansions of ``y'' = x y``
about tabulated centres (every 0.5); the table itself is generated from the
Maclaurin constants at 0 by stepping each solution in its stable direction
(``Bi`` forward, ``Ai`` backward from an asymptotic seed).  Beyond ``x = 9``
the Poincare asymptotic series is accurate to working precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = [
    "AiryPair",
    "BesselIValue",
    "airy",
    "airy_arrays",
    "airy_zeta",
    "bessel_i",
    "bessel_i_array",
    "bessel_i_deriv",
    "bessel_i_deriv_array",
]

AI0 = 0.355028053887817239260063186004
AIP0 = -0.258819403792806798405183560189
SQRT3 = math.sqrt(3.0)
BI0 = SQRT3 * AI0
BIP0 = -SQRT3 * AIP0

AIRY_MIN_X = -10.0
AIRY_ASYMPTOTIC_X = 9.0
_TABLE_STEP = 0.5
_TABLE_MAX = 12.0
_TAYLOR_TERMS = 40
_MAX_ZETA = 700.0

BESSEL_SERIES_X = 15.0
BESSEL_MAX_ORDER = 20


@dataclass(frozen=True)
class AiryPair:
    ai: float
    ai_prime: float
    bi: float
    bi_prime: float
    scaled: bool


@dataclass(frozen=True)
class BesselIValue:
    order: int
    argument: float
    value: float
    scaled_by: float


def airy_zeta(x):
    """Scaling exponent ``(2/3) x^{3/2}`` for positive ``x``, zero otherwise."""
    x = np.asarray(x, dtype=float)
    xp = np.maximum(x, 0.0)
    return (2.0 / 3.0) * xp * np.sqrt(xp)


def _taylor_step(x0, h, y, dy, terms=_TAYLOR_TERMS):
    # Taylor coefficients of y'' = x y about x0: t_{k+2} = (x0 t_k + t_{k-1}) / ((k+1)(k+2))
    x0 = np.asarray(x0, dtype=float)
    h = np.asarray(h, dtype=float)
    t_km1 = np.zeros_like(h + x0)
    t_k = np.asarray(y, dtype=float) + t_km1
    t_k1 = np.asarray(dy, dtype=float) + t_km1
    val = t_k + t_k1 * h
    der = t_k1.copy()
    hk = h.copy()  # h**(k+1)
    km1, k0, k1 = t_km1, t_k, t_k1
    for k in range(terms):
        t_new = (x0 * k0 + km1) / ((k + 1) * (k + 2))
        # t_new is the coefficient of h**(k+2)
        der = der + (k + 2) * t_new * hk
        hk = hk * h
        val = val + t_new * hk
        km1, k0, k1 = k0, k1, t_new
    return val, der


def _airy_asymptotic_scaled(x):
    """Scaled (Ai, Ai', Bi, Bi') for x >= AIRY_ASYMPTOTIC_X."""
    x = np.asarray(x, dtype=float)
    zeta = airy_zeta(x)
    inv = 1.0 / zeta
    u = np.ones_like(x)
    sum_ai = np.ones_like(x)
    sum_bi = np.ones_like(x)
    sum_aip = np.ones_like(x)
    sum_bip = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    last = np.ones_like(x)
    for k in range(1, 80):
        coef = (6 * k - 5) * (6 * k - 3) * (6 * k - 1) / ((2 * k - 1) * 216.0 * k)
        u = u * coef * inv
        v = -(6 * k + 1) / (6 * k - 1) * u
        mag = np.abs(u)
        active &= mag < last
        if not active.any():
            break
        sign = -1.0 if k % 2 else 1.0
        sum_ai = np.where(active, sum_ai + sign * u, sum_ai)
        sum_bi = np.where(active, sum_bi + u, sum_bi)
        sum_aip = np.where(active, sum_aip + sign * v, sum_aip)
        sum_bip = np.where(active, sum_bip + v, sum_bip)
        active &= mag > 1e-18
        last = mag
    q = x ** 0.25
    rpi = 1.0 / math.sqrt(math.pi)
    ai = 0.5 * rpi / q * sum_ai
    aip = -0.5 * rpi * q * sum_aip
    bi = rpi / q * sum_bi
    bip = rpi * q * sum_bip
    return ai, aip, bi, bip


@lru_cache(maxsize=1)
def _airy_table():
    centers = np.arange(AIRY_MIN_X, _TABLE_MAX + 0.5 * _TABLE_STEP, _TABLE_STEP)
    n = len(centers)
    i0 = int(round(-AIRY_MIN_X / _TABLE_STEP))
    ai = np.zeros(n)
    aip = np.zeros(n)
    bi = np.zeros(n)
    bip = np.zeros(n)
    ai[i0], aip[i0], bi[i0], bip[i0] = AI0, AIP0, BI0, BIP0
    # negative side: both solutions oscillate, step outward from 0
    for i in range(i0, 0, -1):
        ai[i - 1], aip[i - 1] = _taylor_step(centers[i], -_TABLE_STEP, ai[i], aip[i])
        bi[i - 1], bip[i - 1] = _taylor_step(centers[i], -_TABLE_STEP, bi[i], bip[i])
    # Bi grows to the right: forward stepping is stable
    for i in range(i0, n - 1):
        bi[i + 1], bip[i + 1] = _taylor_step(centers[i], _TABLE_STEP, bi[i], bip[i])
    # Ai decays to the right: seed at the far end, step backward
    a_s, ap_s, _, _ = _airy_asymptotic_scaled(np.array([centers[-1]]))
    z = float(airy_zeta(centers[-1]))
    ai[-1], aip[-1] = a_s[0] * math.exp(-z), ap_s[0] * math.exp(-z)
    for i in range(n - 1, i0 + 1, -1):
        ai[i - 1], aip[i - 1] = _taylor_step(centers[i], -_TABLE_STEP, ai[i], aip[i])
    for arr in (ai, aip, bi, bip):
        arr.setflags(write=False)
    return centers, ai, aip, bi, bip


def _airy_table_eval(x):
    centers, ai, aip, bi, bip = _airy_table()
    idx = np.clip(np.rint((x - AIRY_MIN_X) / _TABLE_STEP).astype(int), 0, len(centers) - 1)
    x0 = centers[idx]
    h = x - x0
    a, ap = _taylor_step(x0, h, ai[idx], aip[idx])
    b, bp = _taylor_step(x0, h, bi[idx], bip[idx])
    return a, ap, b, bp


def _airy_table_scaled(x):
    """Scaled values for x < AIRY_ASYMPTOTIC_X (table region)."""
    a, ap, b, bp = _airy_table_eval(x)
    zeta = airy_zeta(x)
    up = np.exp(zeta)
    down = np.exp(-zeta)
    return a * up, ap * up, b * down, bp * down


def airy_arrays(x, scaled=True):
    """Vectorized Airy functions: returns ``(ai, ai', bi, bi')`` arrays."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("airy: non-finite argument")
    if np.any(x < AIRY_MIN_X):
        raise DomainError(f"airy: arguments below {AIRY_MIN_X} are not supported")
    flat = x.reshape(-1)
    out = [np.empty_like(flat) for _ in range(4)]
    far = flat >= AIRY_ASYMPTOTIC_X
    near = ~far
    if near.any():
        vals = _airy_table_scaled(flat[near])
        for o, v in zip(out, vals):
            o[near] = v
    if far.any():
        vals = _airy_asymptotic_scaled(flat[far])
        for o, v in zip(out, vals):
            o[far] = v
    if not scaled:
        zeta = airy_zeta(flat)
        if np.any(zeta > _MAX_ZETA):
            raise OverflowError("airy: unscaled Bi overflows; request scaled values")
        up = np.exp(zeta)
        down = np.exp(-zeta)
        out[0] *= down
        out[1] *= down
        out[2] *= up
        out[3] *= up
    return tuple(o.reshape(x.shape) for o in out)


def airy(x, scaled=False):
    """Airy functions Ai, Ai', Bi, Bi' at a real point.

    >>> round(airy(0.0).ai, 12)
    0.355028053888
    """
    if not math.isfinite(x):
        raise DomainError("airy: non-finite argument")
    a, ap, b, bp = airy_arrays(np.array([float(x)]), scaled=scaled)
    return AiryPair(float(a[0]), float(ap[0]), float(b[0]), float(bp[0]), bool(scaled))


# ---------------------------------------------------------------- Bessel I_n


def _check_bessel_args(n, x):
    if not isinstance(n, (int, np.integer)) or n < 0:
        raise DomainError(f"bessel_i: order must be a nonnegative integer, got {n!r}")
    if n > BESSEL_MAX_ORDER:
        raise DomainError(f"bessel_i: order {n} above supported maximum {BESSEL_MAX_ORDER}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("bessel_i: non-finite argument")
    if np.any(x < 0):
        raise DomainError("bessel_i: negative argument")
    return x


def _bessel_series(n, x):
    # I_n(x) = sum_k (x/2)^{2k+n} / (k! (n+k)!), all terms positive
    half = 0.5 * x
    q = half * half
    term = half ** n / math.factorial(n)
    total = term.copy()
    for k in range(1, 200):
        term = term * q / (k * (n + k))
        total = total + term
        if np.all(term <= 1e-17 * total):
            break
    return total


def _bessel_asymptotic_scaled(n, x):
    """exp(-x) I_n(x) by the large-argument series; NaN where it fails to converge."""
    mu = 4.0 * n * n
    term = np.ones_like(x)
    total = np.ones_like(x)
    last = np.ones_like(x)
    converged = np.zeros(x.shape, dtype=bool)
    diverged = np.zeros(x.shape, dtype=bool)
    for k in range(1, 200):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(term)
        live = ~(converged | diverged)
        grew = live & (mag > last) & (mag > 1e-17 * np.abs(total))
        # past the smallest term: accept the optimally truncated sum if it is small enough
        converged |= grew & (last <= 1e-13 * np.abs(total))
        diverged |= grew & (last > 1e-13 * np.abs(total))
        live &= ~grew
        total = np.where(live, total + term, total)
        converged |= live & (mag <= 1e-17 * np.abs(total))
        last = np.where(live, mag, last)
        if not (~(converged | diverged)).any():
            break
    out = total / np.sqrt(2.0 * math.pi * x)
    out[~converged] = np.nan
    return out


def _bessel_ratio_cf(k, x):
    """I_k(x) / I_{k-1}(x) by continued fraction (modified Lentz), scalar x."""
    # I_k / I_{k-1} = 1 / (2k/x + 1 / (2(k+1)/x + ...))
    tiny = 1e-300
    f = 2.0 * k / x
    c = f
    d = 0.0
    for i in range(k + 1, k + 100000):
        b = 2.0 * i / x
        d = b + d
        d = tiny if d == 0 else d
        c = b + 1.0 / c
        c = tiny if c == 0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            return 1.0 / f
    raise ArithmeticError("bessel ratio continued fraction did not converge")


def _bessel_large_scaled(n, x):
    out = _bessel_asymptotic_scaled(n, x)
    bad = np.isnan(out)
    if bad.any():
        i0 = _bessel_asymptotic_scaled(0, x[bad])
        vals = np.empty(bad.sum())
        for i, (xi, base) in enumerate(zip(x[bad], i0)):
            r = _bessel_ratio_cf(n, xi)
            prod = r
            for k in range(n - 1, 0, -1):
                r = 1.0 / (2.0 * k / xi + r)
                prod *= r
            vals[i] = base * prod
        out[bad] = vals
    return out


def bessel_i_array(n, x, scaled=False):
    """Vectorized modified Bessel function ``I_n(x)`` (times ``exp(-x)`` if scaled)."""
    x = _check_bessel_args(n, x)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    small = flat <= BESSEL_SERIES_X
    if small.any():
        v = _bessel_series(n, flat[small])
        out[small] = v * np.exp(-flat[small]) if scaled else v
    big = ~small
    if big.any():
        xb = flat[big]
        v = _bessel_large_scaled(n, xb)
        if not scaled:
            if np.any(xb > 700.0):
                raise OverflowError("bessel_i: unscaled value overflows; request scaled values")
            v = v * np.exp(xb)
        out[big] = v
    return out.reshape(x.shape)


def bessel_i_deriv_array(n, x, scaled=False):
    """Derivative ``I_n'(x)`` via ``(I_{n-1} + I_{n+1}) / 2`` (``I_1`` for n = 0)."""
    x = _check_bessel_args(n, x)
    if n == 0:
        return bessel_i_array(1, x, scaled)
    if n + 1 > BESSEL_MAX_ORDER + 1:
        raise DomainError("bessel_i_deriv: order too large")
    upper = _bessel_upper(n + 1, x, scaled)
    return 0.5 * (bessel_i_array(n - 1, x, scaled) + upper)


def _bessel_upper(n, x, scaled):
    # I_{21} is needed for the derivative of I_20 only
    if n <= BESSEL_MAX_ORDER:
        return bessel_i_array(n, x, scaled)
    flat = np.asarray(x, dtype=float).reshape(-1)
    out = np.empty_like(flat)
    small = flat <= BESSEL_SERIES_X
    out[small] = _bessel_series(n, flat[small]) * (np.exp(-flat[small]) if scaled else 1.0)
    big = ~small
    if big.any():
        v = _bessel_large_scaled(n, flat[big])
        out[big] = v if scaled else v * np.exp(flat[big])
    return out.reshape(np.shape(x))


def bessel_i(n, x, scaled=False):
    """Modified Bessel function of the first kind of integer order.

    >>> bessel_i(0, 0.0).value
    1.0
    """
    xv = float(x)
    if not math.isfinite(xv):
        raise DomainError("bessel_i: non-finite argument")
    value = float(bessel_i_array(n, np.array([xv]), scaled)[0])
    return BesselIValue(int(n), xv, value, math.exp(-xv) if scaled else 1.0)


def bessel_i_deriv(n, x, scaled=False):
    xv = float(x)
    if not math.isfinite(xv):
        raise DomainError("bessel_i_deriv: non-finite argument")
    return float(bessel_i_deriv_array(n, np.array([xv]), scaled)[0])
