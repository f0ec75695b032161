"""Modified Bessel function of the second kind and the gamma function.

``K_nu`` is evaluated with Temme's method: a power series for arguments
``s <= 2``, Steed's continued fraction for ``s > 2``, and upward recurrence
in the order from a base order ``mu`` in ``[-1/2, 1/2)``.  All routines are
vectorised over the argument; the order is a scalar.

The log-domain entry point carries an explicit scale during the recurrence, so
``log K_nu(s)`` stays finite where ``K_nu(s)`` itself over- or underflows.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["BesselOrder", "bessel_k", "bessel_k_log", "bessel_k_pair_log", "gamma_fn"]

MAX_ORDER = 50.0
_EPS = 1e-16
_MAXIT = 10_000
_SERIES_CUTOFF = 2.0
_RESCALE = 1e250
_LOG_RESCALE = math.log(_RESCALE)
_LOG_MAX = math.log(np.finfo(float).max)

# Taylor coefficients of 1/Gamma(z) = sum_k c_k z^k, k = 1..20.
_RGAMMA_TAYLOR = (
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
)


class BesselOrder(float):
    """A non-negative Bessel order; negative input is folded by ``K_{-nu} = K_nu``."""

    def __new__(cls, nu: float) -> "BesselOrder":
        nu = float(nu)
        if not math.isfinite(nu):
            raise ValueError(f"Bessel order must be finite, got {nu}")
        return super().__new__(cls, abs(nu))

    @property
    def nu(self) -> float:
        return float(self)


def gamma_fn(x: float) -> float:
    """Gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0:
        raise ValueError(f"gamma_fn requires x > 0, got {x}")
    return math.gamma(x)


def _temme_gammas(mu: float) -> tuple[float, float, float, float]:
    """Return ``(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))`` for ``|mu| <= 1/2``.

    ``gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)`` and
    ``gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2``.  Near ``mu = 0`` the
    difference cancels, so both come from the even/odd parts of the 1/Gamma
    Taylor series instead.
    """
    gampl = 1.0 / math.gamma(1.0 + mu)
    gammi = 1.0 / math.gamma(1.0 - mu)
    if abs(mu) > 0.1:
        return (gammi - gampl) / (2.0 * mu), 0.5 * (gammi + gampl), gampl, gammi
    mu2 = mu * mu
    # 1/Gamma(1+x) = sum_k c_{k+1} x^k: odd k feed gam1, even k feed gam2.
    gam1 = 0.0
    gam2 = 0.0
    for c in reversed(_RGAMMA_TAYLOR[1::2]):
        gam1 = gam1 * mu2 + c
    for c in reversed(_RGAMMA_TAYLOR[0::2]):
        gam2 = gam2 * mu2 + c
    return -gam1, gam2, gampl, gammi


def _series_base(mu: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``K_mu(x)`` and ``K_{mu+1}(x)`` for ``0 < x <= 2`` by Temme's series."""
    gam1, gam2, gampl, gammi = _temme_gammas(mu)
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    with np.errstate(invalid="ignore", divide="ignore"):
        fact2 = np.where(np.abs(e) < _EPS, 1.0, np.sinh(e) / e)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    e = np.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = np.ones_like(x)
    dd = x2 * x2
    total1 = p.copy()
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu * mu)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        term = c * ff
        total = total + term
        total1 = total1 + c * (p - i * ff)
        if np.all(np.abs(term) < np.abs(total) * _EPS):
            break
    else:  # pragma: no cover - series converges in < 40 terms on (0, 2]
        raise ArithmeticError("Bessel K series failed to converge")
    return total, total1 * (2.0 / x)


def _cf_base_scaled(mu: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``e^x K_mu(x)`` and ``e^x K_{mu+1}(x)`` for ``x > 2`` by Steed's CF2."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25 - mu * mu
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels) < np.abs(s) * _EPS):
            break
    else:  # pragma: no cover
        raise ArithmeticError("Bessel K continued fraction failed to converge")
    h = a1 * h
    kmu = np.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def _check_args(order: float, s) -> tuple[float, np.ndarray]:
    nu = BesselOrder(order).nu
    if nu > MAX_ORDER:
        raise ValueError(f"Bessel order {nu} exceeds the supported maximum {MAX_ORDER}")
    s = np.asarray(s, dtype=float)
    if np.any(~(s > 0)) or np.any(~np.isfinite(s)):
        raise ValueError("bessel_k requires finite s > 0")
    return nu, s


def bessel_k_pair_log(order: float, s) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log K_nu(s), log K_{nu+1}(s))``.

    Shares one base evaluation and one recurrence between the two orders,
    which is what the Matern kernel and its companion need.
    """
    nu, s = _check_args(order, s)
    scalar = s.ndim == 0
    x = np.atleast_1d(s).astype(float).ravel()
    nl = int(nu + 0.5)
    mu = nu - nl

    kmu = np.empty_like(x)
    k1 = np.empty_like(x)
    logscale = np.zeros_like(x)
    small = x <= _SERIES_CUTOFF
    if np.any(small):
        kmu[small], k1[small] = _series_base(mu, x[small])
    if np.any(~small):
        big = ~small
        kmu[big], k1[big] = _cf_base_scaled(mu, x[big])
        logscale[big] = -x[big]

    xi2 = 2.0 / x
    for i in range(1, nl + 1):
        knew = (mu + i) * xi2 * k1 + kmu
        kmu = k1
        k1 = knew
        over = k1 > _RESCALE
        if np.any(over):
            kmu[over] /= _RESCALE
            k1[over] /= _RESCALE
            logscale[over] += _LOG_RESCALE

    log_nu = np.log(kmu) + logscale
    log_nu1 = np.log(k1) + logscale
    shape = np.shape(s)
    if scalar:
        return float(log_nu[0]), float(log_nu1[0])
    return log_nu.reshape(shape), log_nu1.reshape(shape)


def bessel_k_log(order: float, s):
    """``log K_nu(s)`` for ``s > 0``; finite even where ``K_nu`` is not representable."""
    return bessel_k_pair_log(order, s)[0]


def bessel_k(order: float, s):
    """Modified Bessel function of the second kind ``K_nu(s)``.

    Parameters
    ----------
    order : float
        The order ``nu``; negative values are folded to ``|nu|``.  ``|nu| <= 50``.
    s : float or array_like
        Positive argument(s).

    Returns
    -------
    float or ndarray
        ``K_nu(s)``.  Values below the smallest subnormal underflow to 0.

    Raises
    ------
    ValueError
        For ``s <= 0`` or an order outside ``[-50, 50]``.
    OverflowError
        If ``K_nu(s)`` exceeds the float range; use :func:`bessel_k_log`.
    """
    log_k = bessel_k_log(order, s)
    if np.any(np.asarray(log_k) > _LOG_MAX):
        raise OverflowError(f"K_{order}(s) overflows double precision; use bessel_k_log")
    if np.ndim(log_k) == 0:
        return math.exp(log_k)
    return np.exp(log_k)
