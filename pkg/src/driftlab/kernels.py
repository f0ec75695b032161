"""Companion-elliptic kernels: Laplace, Gaussian and Matern.

Every kernel ``kappa`` comes with a companion ``eta`` and constants
``(c1, c2, lambda0, lambda1)`` such that

    grad eta(z) = -z kappa(z) / c1,
    (lambda0 - lambda1 Laplacian) eta(z) = c2 kappa(z).

The Matern representative is ``kappa(z) = ell |z|^nu K_nu(|z|/ell)`` with
companion ``eta(z) = |z|^(nu+1) K_(nu+1)(|z|/ell)``.  Its overall scale is
arbitrary; barycenters and drift fields do not depend on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .grammar import Call, GrammarError, parse_call
from .specfun import bessel_k_pair_log

__all__ = [
    "KernelSpec",
    "CompanionConstants",
    "kernel_eval",
    "kernel_log_eval",
    "companion_eval",
    "companion_log_eval",
    "companion_grad",
    "companion_constants",
    "spectral_density",
    "radial_log_profiles",
    "parse_kernel",
]

FAMILIES = ("laplace", "gaussian", "matern")
# Below this fraction of ell the Matern profiles use their r -> 0 limits.
MATERN_ORIGIN_RADIUS = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    """One member of the kernel family in dimension ``dim``.

    ``scale`` is tau (Laplace), sigma (Gaussian) or ell (Matern); ``nu`` is
    only set for Matern.
    """

    family: str
    scale: float
    dim: int = 1
    nu: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"kernel scale must be positive, got {self.scale}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if self.family == "matern":
            if self.nu is None or not math.isfinite(self.nu) or self.nu < 0.5:
                raise ValueError(f"Matern kernels need nu >= 1/2, got {self.nu}")
        elif self.nu is not None:
            raise ValueError("nu is only meaningful for Matern kernels")

    @classmethod
    def laplace(cls, tau: float, dim: int = 1) -> "KernelSpec":
        return cls("laplace", float(tau), int(dim))

    @classmethod
    def gaussian(cls, sigma: float, dim: int = 1) -> "KernelSpec":
        return cls("gaussian", float(sigma), int(dim))

    @classmethod
    def matern(cls, nu: float, ell: float, dim: int = 1) -> "KernelSpec":
        return cls("matern", float(ell), int(dim), float(nu))

    @property
    def length_scale(self) -> float:
        return self.scale

    def with_dim(self, dim: int) -> "KernelSpec":
        return KernelSpec(self.family, self.scale, int(dim), self.nu)

    def __str__(self) -> str:
        if self.family == "laplace":
            return f"laplace(tau={self.scale!r}, dim={self.dim})"
        if self.family == "gaussian":
            return f"gaussian(sigma={self.scale!r}, dim={self.dim})"
        return f"matern(nu={self.nu!r}, ell={self.scale!r}, dim={self.dim})"


@dataclass(frozen=True)
class CompanionConstants:
    c1: float
    c2: float
    lambda0: float
    lambda1: float

    @property
    def spectral_exponent(self) -> float:
        """``c1 c2 / (2 lambda1)`` (Matern-type) or ``c1 c2 / (2 lambda0)`` (Gaussian)."""
        if self.lambda1 > 0:
            return self.c1 * self.c2 / (2.0 * self.lambda1)
        return self.c1 * self.c2 / (2.0 * self.lambda0)

    def exact_spectral_exponent(self) -> Fraction:
        """The same exponent in exact rational arithmetic of the stored floats."""
        denom = self.lambda1 if self.lambda1 > 0 else self.lambda0
        return Fraction(self.c1) * Fraction(self.c2) / (2 * Fraction(denom))


def companion_constants(spec: KernelSpec) -> CompanionConstants:
    d = spec.dim
    if spec.family == "laplace":
        t2 = spec.scale**2
        return CompanionConstants(c1=t2, c2=float(d + 1), lambda0=1.0, lambda1=t2)
    if spec.family == "gaussian":
        return CompanionConstants(c1=spec.scale**2, c2=1.0, lambda0=1.0, lambda1=0.0)
    l2 = spec.scale**2
    return CompanionConstants(c1=l2, c2=d + 2.0 * spec.nu, lambda0=1.0, lambda1=l2)


def _matern_log_origin(nu: float, ell: float) -> tuple[float, float]:
    """``log kappa(0)`` and ``log eta(0)`` from ``s^mu K_mu(s) -> 2^(mu-1) Gamma(mu)``."""
    log_k0 = (nu + 1.0) * math.log(ell) + (nu - 1.0) * math.log(2.0) + math.lgamma(nu)
    log_e0 = (nu + 1.0) * math.log(ell) + nu * math.log(2.0) + math.lgamma(nu + 1.0)
    return log_k0, log_e0


def radial_log_profiles(spec: KernelSpec, r) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log kappa, log eta)`` as functions of the radius ``r >= 0``."""
    r = np.asarray(r, dtype=float)
    s = spec.scale
    if spec.family == "laplace":
        t = r / s
        return -t, np.log1p(t) - t
    if spec.family == "gaussian":
        lk = -0.5 * (r / s) ** 2
        return lk, lk
    nu = spec.nu
    log_k0, log_e0 = _matern_log_origin(nu, s)
    lk = np.full(r.shape, log_k0)
    le = np.full(r.shape, log_e0)
    far = r >= MATERN_ORIGIN_RADIUS * s
    if np.any(far):
        rf = r[far]
        lkn, lkn1 = bessel_k_pair_log(nu, rf / s)
        logr = np.log(rf)
        lk[far] = math.log(s) + nu * logr + lkn
        le[far] = (nu + 1.0) * logr + lkn1
    if lk.ndim == 0:
        return float(lk), float(le)
    return lk, le


def _norm(spec: KernelSpec, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z[None]
    if z.shape[-1] != spec.dim:
        raise ValueError(f"expected vectors of dimension {spec.dim}, got shape {z.shape}")
    return np.linalg.norm(z, axis=-1)


def _out(a):
    return float(a) if np.ndim(a) == 0 else a


def kernel_log_eval(spec: KernelSpec, z):
    """``log kappa(z)``; ``z`` has shape ``(..., dim)``."""
    return _out(radial_log_profiles(spec, _norm(spec, z))[0])


def kernel_eval(spec: KernelSpec, z):
    """``kappa(z)`` with the continuous extension at the origin."""
    r = _norm(spec, z)
    if spec.family == "laplace":
        return _out(np.exp(-r / spec.scale))
    return _out(np.exp(radial_log_profiles(spec, r)[0]))


def companion_log_eval(spec: KernelSpec, z):
    return _out(radial_log_profiles(spec, _norm(spec, z))[1])


def companion_eval(spec: KernelSpec, z):
    """Companion ``eta(z)``."""
    r = _norm(spec, z)
    if spec.family == "laplace":
        t = r / spec.scale
        return _out((1.0 + t) * np.exp(-t))
    return _out(np.exp(radial_log_profiles(spec, r)[1]))


def companion_grad(spec: KernelSpec, z) -> np.ndarray:
    """``grad eta(z) = -z kappa(z) / c1`` in closed form."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z[None]
    c1 = companion_constants(spec).c1
    k = np.asarray(kernel_eval(spec, z))
    return -z * (k / c1)[..., None]


def spectral_density(spec: KernelSpec, xi):
    """Normalised spectral density ``kappa_hat(xi) / kappa_hat(0)``.

    Solves the radial ODE ``grad kh = -c1 c2 xi kh / (lambda0 + lambda1 |xi|^2)``:
    a Gaussian when ``lambda1 = 0`` and a Bessel-potential multiplier otherwise.
    """
    k2 = _norm(spec, xi) ** 2
    cc = companion_constants(spec)
    if cc.lambda1 == 0:
        return _out(np.exp(-cc.c1 * cc.c2 / (2.0 * cc.lambda0) * k2))
    return _out((1.0 + cc.lambda1 / cc.lambda0 * k2) ** (-cc.spectral_exponent))


def _num(call: Call, key: str, text: str) -> float:
    if key not in call.kwargs:
        raise GrammarError(f"kernel {text!r} is missing {key}=")
    v = call.kwargs[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise GrammarError(f"kernel parameter {key} must be a number, got {v!r}")
    return float(v)


def parse_kernel(text: str, dim: int | None = None) -> KernelSpec:
    """Parse ``laplace(tau=..)``, ``gaussian(sigma=..)`` or ``matern(nu=..,ell=..)``.

    ``dim`` may appear inside the call or be passed separately; the call wins.
    """
    call = parse_call(text)
    allowed = {"laplace": {"tau"}, "gaussian": {"sigma"}, "matern": {"nu", "ell"}}
    if call.name not in allowed:
        raise GrammarError(f"unknown kernel family {call.name!r} in {text!r}")
    extra = set(call.kwargs) - allowed[call.name] - {"dim"}
    if extra:
        raise GrammarError(f"unexpected kernel parameter(s) {sorted(extra)} in {text!r}")
    d = int(_num(call, "dim", text)) if "dim" in call.kwargs else (dim if dim is not None else 1)
    try:
        if call.name == "laplace":
            return KernelSpec.laplace(_num(call, "tau", text), d)
        if call.name == "gaussian":
            return KernelSpec.gaussian(_num(call, "sigma", text), d)
        return KernelSpec.matern(_num(call, "nu", text), _num(call, "ell", text), d)
    except ValueError as exc:
        if isinstance(exc, GrammarError):
            raise
        raise GrammarError(f"invalid kernel {text!r}: {exc}") from exc
