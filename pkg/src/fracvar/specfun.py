"""Scalar special functions: Gamma and the one-parameter Mittag-Leffler function."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = ["gamma_fn", "digamma_fn", "mittag_leffler", "mittag_leffler_deriv"]

# series stops once a term drops below this fraction of the partial sum
_SERIES_RTOL = 1e-18
_MAX_TERMS = 4000
# working-precision cap for negative arguments
_MAX_DIGITS = 4000


class DomainError(ValueError):
    """Raised when a special function is evaluated outside its domain."""


def gamma_fn(z):
    """Gamma function for positive real arguments (scalar or array)."""
    arr = np.asarray(z, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"gamma_fn requires z > 0, got {z!r}")
    if arr.ndim == 0:
        return math.gamma(float(arr))
    return special.gamma(arr)


def digamma_fn(z):
    arr = np.asarray(z, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"digamma_fn requires z > 0, got {z!r}")
    out = special.digamma(arr)
    return float(out) if arr.ndim == 0 else out


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > 0:
        raise DomainError(f"Mittag-Leffler order must be positive, got {alpha}")
    return alpha


def _peak_index(alpha: float, absz: float) -> float:
    # the largest series term sits near k = |z|^(1/alpha) / alpha
    return absz ** (1.0 / alpha) / alpha if absz > 0 else 0.0


def _series(alpha: float, z: np.ndarray, power_shift: int):
    """Compensated sum of ``sum_k c_k z^(k - power_shift) / Gamma(alpha k + 1)`` for ``z >= 0``.

    ``power_shift=0`` gives E_alpha(z); ``power_shift=1`` with the factor
    ``c_k = k`` gives the z-derivative. Terms are formed in log space so
    neither ``z**k`` nor the Gamma factor overflows before the term is tiny.
    All terms share a sign, so double precision keeps full relative accuracy.
    """
    total = np.zeros_like(z)
    comp = np.zeros_like(z)
    if z.size == 0:
        return total
    zmax = float(np.max(z))
    # E_alpha(z) grows like exp(z^(1/alpha)) / alpha
    if zmax > 0 and (1.0 / alpha) * math.log(zmax) > math.log(700.0):
        raise DomainError(f"Mittag-Leffler value overflows double precision (alpha={alpha}, z={zmax})")
    max_terms = max(_MAX_TERMS, int(3 * _peak_index(alpha, zmax)) + 200)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logz = np.log(z)
        for k in range(power_shift, max_terms):
            p = k - power_shift
            lg = math.lgamma(alpha * k + 1.0)
            if p == 0:
                term = np.full_like(z, math.exp(-lg))
            else:
                term = np.where(z > 0, np.exp(p * logz - lg), 0.0)
            if power_shift:
                term = term * k
            # Kahan-Babuska step
            y = term - comp
            t = total + y
            comp = (t - total) - y
            total = t
            if not np.all(np.isfinite(total)):
                break
            if p > 0 and np.all(term <= _SERIES_RTOL * total):
                break
        else:  # pragma: no cover
            raise DomainError("Mittag-Leffler series did not converge")
    if not np.all(np.isfinite(total)):
        raise DomainError(f"Mittag-Leffler value overflows double precision (alpha={alpha})")
    return total


def _series_negative(alpha: float, z: float, power_shift: int) -> float:
    """Same series for ``z < 0``, summed in arbitrary precision.

    The alternating terms reach ``max_k |z|^k / Gamma(alpha k + 1)``, which
    can exceed the result by many orders of magnitude. The working precision
    is sized from that peak so the cancellation leaves ~20 correct digits.
    """
    import mpmath

    absz = -z
    kpeak = _peak_index(alpha, absz)
    ks = np.arange(power_shift, int(2 * kpeak) + 50)
    logmax = float(np.max((ks - power_shift) * math.log(absz) - special.gammaln(alpha * ks + 1.0)
                          + (np.log(np.maximum(ks, 1)) if power_shift else 0.0)))
    digits = int(max(logmax, 0.0) / math.log(10.0)) + 25
    if digits > _MAX_DIGITS:
        raise DomainError(f"Mittag-Leffler series at z={z} needs {digits} digits (alpha={alpha})")
    with mpmath.workdps(digits):
        zz = mpmath.mpf(z)
        a = mpmath.mpf(alpha)
        total = mpmath.mpf(0)
        thresh = mpmath.mpf(10) ** (-25)
        k = power_shift
        while True:
            p = k - power_shift
            term = zz ** p / mpmath.gamma(a * k + 1)
            if power_shift:
                term *= k
            total += term
            if p > kpeak and abs(term) <= thresh * abs(total):
                break
            k += 1
            if k > 100 * (kpeak + 100):  # pragma: no cover
                raise DomainError("Mittag-Leffler series did not converge")
        return float(total)


def _evaluate(alpha: float, z, power_shift: int):
    arr = np.asarray(z, dtype=float)
    flat = np.atleast_1d(arr).astype(float).ravel()
    if np.any(~np.isfinite(flat)):
        raise DomainError("Mittag-Leffler argument must be finite")
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = _series(alpha, flat[pos], power_shift)
    for idx in np.flatnonzero(~pos):
        out[idx] = _series_negative(alpha, float(flat[idx]), power_shift)
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def mittag_leffler(alpha: float, z):
    """One-parameter Mittag-Leffler function ``E_alpha(z) = sum_{k>=0} z^k / Gamma(alpha k + 1)``.

    Nonnegative arguments use the power series in double precision with
    compensated summation; negative arguments sum the same series in
    arbitrary precision to survive the cancellation. Values that overflow a
    double, or negative arguments needing more than a few thousand digits,
    raise :class:`DomainError`. Accepts a scalar or an array of ``z``.
    """
    alpha = _check_alpha(alpha)
    return _evaluate(alpha, z, 0)


def mittag_leffler_deriv(alpha: float, z):
    """Derivative of ``E_alpha`` with respect to ``z`` (term-wise series)."""
    alpha = _check_alpha(alpha)
    return _evaluate(alpha, z, 1)
