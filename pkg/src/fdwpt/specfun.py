"""
Real special functions used by the closed-form rate and outage expressions.

Contains both real branches of the Lambert-W function, the exponential
integral E1 (and its scaled form ``e^x E1(x)``), and the coefficients and
CDF of a weighted sum of independent unit exponentials (hypoexponential
mixture).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExpMixture",
    "lambert_w0",
    "lambert_wm1",
    "exp_e1",
    "exp_e1_scaled",
    "exp_mix_coeffs",
    "exp_mix_cdf",
    "cluster_eigenvalues",
]

_INV_E = math.exp(-1.0)
_BRANCH_SLACK = 1e-15
_W_TOL = 1e-12
_EULER_GAMMA = 0.57721566490153286061


def _w_residual(x: float, y: float) -> float:
    return abs(x * math.exp(x) - y)


def _halley(x: float, y: float, maxiter: int = 60) -> float:
    for _ in range(maxiter):
        ex = math.exp(x)
        f = x * ex - y
        if f == 0.0:
            return x
        wp1 = x + 1.0
        if wp1 == 0.0:
            break
        denom = ex * wp1 - (x + 2.0) * f / (2.0 * wp1)
        if denom == 0.0:
            break
        step = f / denom
        x_new = x - step
        if x_new == x or abs(step) <= 4e-16 * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def _bisect(y: float, lo: float, hi: float) -> float:
    # x*e^x - y is monotone on each branch interval; orientation detected
    f_lo = lo * math.exp(lo) - y
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        f_mid = mid * math.exp(mid) - y
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _branch_point_series(y: float, sign: float) -> float:
    p = sign * math.sqrt(max(0.0, 2.0 * (math.e * y + 1.0)))
    return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3


def lambert_w0(y: float) -> float:
    """Principal branch ``W0(y)``: the root ``x >= -1`` of ``x e^x = y``.

    Raises
    ------
    ValueError
        If ``y < -1/e`` (beyond a 1e-15 slack).
    """
    y = float(y)
    if not math.isfinite(y) or y < -_INV_E - _BRANCH_SLACK:
        raise ValueError(f"lambert_w0 domain is y >= -1/e, got {y!r}")
    if y <= -_INV_E:
        return -1.0
    if y == 0.0:
        return 0.0
    if y < -0.25:
        x = _branch_point_series(y, +1.0)
    elif y < 3.0:
        x = math.log1p(y) * (1.0 - math.log1p(math.log1p(y)) / (2.0 + math.log1p(y)))
    else:
        ly = math.log(y)
        x = ly - math.log(ly) + math.log(ly) / ly
    x = _halley(max(x, -1.0), y)
    if _w_residual(x, y) > _W_TOL * max(1.0, abs(y)) or x < -1.0:
        hi = max(1.0, math.log(y) if y > 1.0 else 1.0)
        x = _bisect(y, -1.0, hi)
    return x


def lambert_wm1(y: float) -> float:
    """Lower real branch ``W-1(y)`` for ``-1/e <= y < 0``; the root is ``<= -1``.

    Raises
    ------
    ValueError
        If ``y`` lies outside ``[-1/e, 0)``.
    """
    y = float(y)
    if not math.isfinite(y) or y < -_INV_E - _BRANCH_SLACK or y >= 0.0:
        raise ValueError(f"lambert_wm1 domain is -1/e <= y < 0, got {y!r}")
    if y <= -_INV_E:
        return -1.0
    if y < -0.25:
        x = _branch_point_series(y, -1.0)
    else:
        l1 = math.log(-y)
        l2 = math.log(-l1)
        x = l1 - l2 + l2 / l1
    x = _halley(min(x, -1.0), y)
    if _w_residual(x, y) > _W_TOL or x > -1.0:
        lo = -1.0
        while lo * math.exp(lo) < y:
            lo *= 2.0
        x = _bisect(y, lo, -1.0)
    return x


def _e1_series(x: float) -> float:
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    total = 0.0
    term = 1.0
    for k in range(1, 200):
        term *= -x / k
        contrib = term / k
        total += contrib
        if abs(contrib) < 1e-17 * abs(total):
            break
    return -_EULER_GAMMA - math.log(x) - total


def _e1_scaled_cf(x: float) -> float:
    # modified Lentz on the continued fraction for e^x E1(x)
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def exp_e1(x: float) -> float:
    """Exponential integral ``E1(x) = int_x^inf e^{-t}/t dt`` for ``x > 0``."""
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"exp_e1 requires x > 0, got {x!r}")
    if x <= 1.0:
        return _e1_series(x)
    return math.exp(-x) * _e1_scaled_cf(x)


def exp_e1_scaled(x: float) -> float:
    """``e^x E1(x)`` without overflow/underflow for large ``x``."""
    x = float(x)
    if not x > 0.0:
        raise ValueError(f"exp_e1_scaled requires x > 0, got {x!r}")
    if x <= 1.0:
        return math.exp(x) * _e1_series(x)
    return _e1_scaled_cf(x)


@dataclass(frozen=True)
class ExpMixture:
    """Density ``sum_i a_i exp(-x / lambda_i)`` of ``sum_i lambda_i X_i``, ``X_i ~ Exp(1)``."""

    lambdas: tuple[float, ...]
    coeffs: tuple[float, ...]

    @property
    def order(self) -> int:
        return len(self.lambdas)

    def normalization(self) -> float:
        return math.fsum(a * lam for a, lam in zip(self.coeffs, self.lambdas))


def cluster_eigenvalues(lambdas, merge_rtol: float = 1e-7,
                        shift_rtol: float = 1e-6) -> list[float]:
    """Separate near-coincident weights so the partial-fraction form exists.

    Values closer than ``merge_rtol * max`` form a cluster; the k-th member
    of a cluster (k = 0, 1, ...) is shifted by ``k * shift_rtol * max``.
    """
    lam = sorted(float(v) for v in lambdas)
    if not lam:
        return lam
    scale = max(lam)
    out = [lam[0]]
    k = 0
    anchor = lam[0]
    for v in lam[1:]:
        if v - anchor < merge_rtol * scale:
            k += 1
            out.append(anchor + k * shift_rtol * scale)
        else:
            k = 0
            anchor = v
            out.append(v)
    return out


def exp_mix_coeffs(lambdas) -> ExpMixture:
    """Partial-fraction coefficients ``a_i = lambda_i^{L-2} / prod_{j!=i}(lambda_i - lambda_j)``.

    For a single weight the coefficient is ``1 / lambda``. Input weights are
    passed through :func:`cluster_eigenvalues` first.
    """
    lam = [float(v) for v in lambdas]
    if not lam:
        raise ValueError("exp_mix_coeffs needs at least one weight")
    if any(not (v > 0.0 and math.isfinite(v)) for v in lam):
        raise ValueError(f"weights must be finite and positive, got {lam}")
    lam = cluster_eigenvalues(lam)
    n = len(lam)
    if n == 1:
        return ExpMixture((lam[0],), (1.0 / lam[0],))
    coeffs = []
    for i, li in enumerate(lam):
        # accumulate as a product of ratios li/(li-lj) to keep magnitudes sane
        a = 1.0 / li
        for j, lj in enumerate(lam):
            if j != i:
                a *= li / (li - lj)
        coeffs.append(a)
    return ExpMixture(tuple(lam), tuple(coeffs))


def exp_mix_cdf(mix: ExpMixture, t: float) -> float:
    """``P(sum_i lambda_i X_i <= t) = sum_i a_i lambda_i (1 - exp(-t / lambda_i))``."""
    t = float(t)
    if t < 0.0 or math.isnan(t):
        raise ValueError(f"exp_mix_cdf requires t >= 0, got {t!r}")
    if t == 0.0:
        return 0.0
    if math.isinf(t):
        return 1.0
    terms = [-a * lam * math.expm1(-t / lam) for a, lam in zip(mix.coeffs, mix.lambdas)]
    value = math.fsum(terms)
    return float(np.clip(value, 0.0, 1.0))
