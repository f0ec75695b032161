"""Measures: weighted atom clouds, the power-law density and its tilts.

Continuous densities are turned into :class:`DiscreteMeasure` objects before
any field evaluation, so the field code has a single path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize

from .grammar import Call, GrammarError, parse_call

__all__ = [
    "DiscreteMeasure",
    "PowerLawDensity",
    "TiltedDensity",
    "Discretized",
    "make_discrete",
    "mixture",
    "satellite",
    "cutoff",
    "tilt_density",
    "discretize_density",
    "tail_mass",
    "parse_measure",
]

MASS_TOL = 1e-12
MAX_DISCRETE_DIM = 16
_GL_ORDER = 10
_QUAD = dict(epsabs=1e-14, epsrel=1e-12, limit=500)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Atoms ``(n, dim)`` with non-negative weights of total mass in ``(0, 1]``."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] != weights.shape[0]:
            raise ValueError(
                f"atoms {atoms.shape} and weights {weights.shape} do not describe the same number of points"
            )
        if atoms.shape[0] == 0:
            raise ValueError("a measure needs at least one atom")
        if not 1 <= atoms.shape[1] <= MAX_DISCRETE_DIM:
            raise ValueError(f"dimension must be in [1, {MAX_DISCRETE_DIM}], got {atoms.shape[1]}")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise ValueError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        total = weights.sum()
        if total <= 0:
            raise ValueError("total mass must be positive")
        if total > 1 + MASS_TOL:
            raise ValueError(f"total mass {total!r} exceeds 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_probability(self) -> bool:
        return abs(self.mass - 1.0) <= MASS_TOL

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms, self.weights / self.weights.sum())

    def scaled(self, c: float) -> "DiscreteMeasure":
        """The measure ``c * self`` (``0 < c``, resulting mass at most 1)."""
        return DiscreteMeasure(self.atoms, c * self.weights)

    def shifted(self, t) -> "DiscreteMeasure":
        return DiscreteMeasure(self.atoms + np.asarray(t, dtype=float), self.weights)

    def same_as(self, other: "DiscreteMeasure") -> bool:
        """Structural equality as measures: identical atom multisets with weights."""
        if self.dim != other.dim:
            return False
        a = _canonical(self)
        b = _canonical(other)
        return a[0].shape == b[0].shape and np.array_equal(a[0], b[0]) and np.allclose(a[1], b[1], rtol=0, atol=MASS_TOL)

    def __repr__(self) -> str:
        return f"DiscreteMeasure(size={self.size}, dim={self.dim}, mass={self.mass:.17g})"


def _canonical(m: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    keep = m.weights > 0
    atoms, weights = m.atoms[keep], m.weights[keep]
    uniq, inv = np.unique(atoms, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv.reshape(-1), weights)
    return uniq, merged


def make_discrete(atoms, weights=None, dim: int | None = None, normalize: bool = False) -> DiscreteMeasure:
    """Build a validated :class:`DiscreteMeasure`.

    ``atoms`` may be a flat list in one dimension.  ``weights`` defaults to
    uniform probability weights.
    """
    atoms = np.array(atoms, dtype=float)
    if atoms.ndim == 0:
        atoms = atoms.reshape(1, 1)
    elif atoms.ndim == 1:
        atoms = atoms.reshape(-1, 1) if dim in (None, 1) else atoms.reshape(1, -1)
    if dim is not None and atoms.shape[1] != dim:
        raise ValueError(f"atoms have dimension {atoms.shape[1]}, expected {dim}")
    if weights is None:
        weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
    weights = np.array(weights, dtype=float).reshape(-1)
    if normalize:
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("cannot normalise: weights must be non-negative with positive total")
        weights = weights / weights.sum()
    return DiscreteMeasure(atoms, weights)


def mixture(measures: Sequence[DiscreteMeasure], coeffs: Sequence[float]) -> DiscreteMeasure:
    """``sum_k coeffs[k] * measures[k]`` as one atom cloud (atoms concatenated)."""
    if len(measures) != len(coeffs) or not measures:
        raise ValueError("need one coefficient per measure")
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {sorted(dims)}")
    atoms = np.concatenate([m.atoms for m in measures])
    weights = np.concatenate([c * m.weights for m, c in zip(measures, coeffs)])
    return DiscreteMeasure(atoms, weights)


def satellite(p: DiscreteMeasure, eps: float, z) -> DiscreteMeasure:
    """``(1 - eps) p + eps delta_z``; an existing atom at ``z`` absorbs the new mass."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if not p.is_probability:
        raise ValueError("satellite() needs a probability measure")
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != p.dim or not np.all(np.isfinite(z)):
        raise ValueError(f"satellite position must be a finite vector of dimension {p.dim}")
    weights = (1.0 - eps) * p.weights
    hit = np.flatnonzero(np.all(p.atoms == z, axis=1))
    if hit.size:
        weights = weights.copy()
        weights[hit[0]] += eps
        return DiscreteMeasure(p.atoms, weights)
    return DiscreteMeasure(np.vstack([p.atoms, z]), np.append(weights, eps))


def _sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class PowerLawDensity:
    """``rho(y) = (1 + |y|)^(-m) / Z`` on ``R^dim`` with ``m > dim``, ``dim`` in {1, 2}."""

    m: float
    dim: int = 1
    Z: float = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"power-law densities support dim 1 or 2, got {self.dim}")
        if not self.m > self.dim:
            raise ValueError(f"tail exponent m={self.m} must exceed dim={self.dim}")
        d, m = self.dim, float(self.m)
        # Z = |S^{d-1}| B(d, m - d)
        z = _sphere_area(d) * math.exp(math.lgamma(d) + math.lgamma(m - d) - math.lgamma(m))
        object.__setattr__(self, "Z", z)

    def radial_density(self, r):
        """Density of ``|Y|``: ``|S^{d-1}| r^{d-1} rho(r)``."""
        r = np.asarray(r, dtype=float)
        return _sphere_area(self.dim) * r ** (self.dim - 1) * (1.0 + r) ** (-self.m) / self.Z

    def density(self, y):
        y = np.asarray(y, dtype=float)
        r = _radius(y, self.dim)
        return (1.0 + r) ** (-self.m) / self.Z

    def tail(self, R: float) -> float:
        """``p(|Y| > R)`` in closed form."""
        if R <= 0:
            return 1.0
        m = float(self.m)
        if self.dim == 1:
            return (1.0 + R) ** (1.0 - m)
        return (m - 1.0) * (1.0 + R) ** (2.0 - m) - (m - 2.0) * (1.0 + R) ** (1.0 - m)

    def tail_constants(self) -> tuple[float, float]:
        """``(c_-, c_+)`` with ``c_- R^(d-m) <= p(|Y| > R) <= c_+ R^(d-m)`` for ``R >= 1``.

        From ``2^-m r^-m <= (1+r)^-m <= r^-m`` on ``r >= 1``.
        """
        base = _sphere_area(self.dim) / (self.Z * (self.m - self.dim))
        return base * 2.0 ** (-self.m), base

    def radius_for_tail(self, level: float) -> float:
        """Smallest ``R`` with ``p(|Y| > R) <= level``."""
        if level >= 1:
            return 0.0
        hi = 1.0
        while self.tail(hi) > level:
            hi *= 2.0
        return optimize.brentq(lambda r: self.tail(r) - level, 0.0, hi, xtol=1e-12, rtol=1e-14)


def _radius(y: np.ndarray, dim: int) -> np.ndarray:
    # one-dimensional points may come as a plain array of scalars
    return np.abs(y) if dim == 1 else np.linalg.norm(y, axis=-1)


def cutoff(r):
    """Ramp ``clip(r - 1, 0, 1)``: 0 on [0, 1], 1 on [2, inf), Lipschitz 1."""
    return np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)


@dataclass(frozen=True)
class TiltedDensity:
    """``q_n = e^{phi_n} p / Z_n`` with ``phi_n(x) = alpha_n * cutoff(|x| / n)``."""

    base: PowerLawDensity
    n: int
    t_n: float
    alpha_n: float
    Z_n: float

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def lipschitz(self) -> float:
        return self.alpha_n / self.n

    def log_tilt(self, r):
        return self.alpha_n * cutoff(np.asarray(r, dtype=float) / self.n)

    def radial_density(self, r):
        return np.exp(self.log_tilt(r)) * self.base.radial_density(r) / self.Z_n

    def density(self, y):
        y = np.asarray(y, dtype=float)
        r = _radius(y, self.dim)
        return np.exp(self.log_tilt(r)) * self.base.density(y) / self.Z_n

    def _radial_integral(self, lo: float, hi: float = math.inf) -> float:
        """``int_lo^hi e^{phi(r)} f(r) dr`` with ``f`` the radial density of the base."""
        f = lambda r: math.exp(float(self.log_tilt(r))) * float(self.base.radial_density(r))
        n = float(self.n)
        cuts = [c for c in (n, 2.0 * n) if lo < c < hi]
        edges = [lo, *cuts, hi]
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(f, a, b, **_QUAD)
            total += val
        return total

    def tail(self, R: float) -> float:
        """``q_n(|X| > R)`` by quadrature of the tilted radial density."""
        return self._radial_integral(max(float(R), 0.0)) / self.Z_n

    def radius_for_tail(self, level: float) -> float:
        # beyond 2n the tilt is the constant e^{alpha_n}
        r = self.base.radius_for_tail(level * self.t_n * self.Z_n)
        return max(r, 2.0 * self.n)


def tilt_density(base: PowerLawDensity, n: int) -> TiltedDensity:
    """The slowly varying tilt of ``base`` at scale ``n``.

    ``t_n = p(|Y| > 2n)``, ``alpha_n = -log t_n`` and ``Z_n = int e^{phi_n} dp``
    (the latter by quadrature).
    """
    if int(n) != n or n < 1:
        raise ValueError(f"tilt scale n must be a positive integer, got {n}")
    n = int(n)
    t_n = base.tail(2.0 * n)
    alpha = -math.log(t_n)
    proto = TiltedDensity(base, n, t_n, alpha, 1.0)
    z_n = proto._radial_integral(0.0)
    if not math.isfinite(z_n) or z_n <= 0:
        raise ArithmeticError(f"tilt normaliser quadrature failed for n={n}: {z_n}")
    return TiltedDensity(base, n, t_n, alpha, z_n)


class Discretized(NamedTuple):
    """A discretised density with its error budget.

    ``quadrature_error`` bounds ``|int f d rho_R - sum_i w_i f(y_i)|`` over
    test functions with ``|f| <= 1`` and ``Lip(f) <= 1``, where ``rho_R`` is
    the density restricted to the ball of radius ``r_max``: the transport
    cost of moving each cell onto its atom plus the cell-mass error.
    """

    measure: DiscreteMeasure
    r_max: float
    nodes: int
    truncation_bound: float
    mass_error: float
    quadrature_error: float


def _kinks(density) -> list[float]:
    if isinstance(density, TiltedDensity):
        return [float(density.n), 2.0 * density.n]
    return []


_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)


def _cell_masses(f, edges: np.ndarray, kinks: Sequence[float]) -> np.ndarray:
    """``int f`` over each cell ``[edges[i], edges[i+1]]``.

    Cells are split at the points where ``f`` is not smooth and every piece
    gets a fixed-order Gauss-Legendre rule.
    """
    inner = [k for k in kinks if edges[0] < k < edges[-1]]
    fine = np.unique(np.concatenate([edges, inner]))
    a, b = fine[:-1], fine[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
    pieces = half * (f(nodes) @ _GL_W)
    owner = np.searchsorted(edges, a, side="right") - 1
    return np.bincount(owner, weights=pieces, minlength=len(edges) - 1)


def discretize_density(
    density: PowerLawDensity | TiltedDensity,
    r_max: float | None = None,
    nodes: int = 4000,
    n_theta: int = 64,
    tail_level: float = 1e-6,
) -> Discretized:
    """Cell-midpoint atoms for a power-law or tilted density.

    The cells are graded geometrically in ``1 + |y|`` so they are finest at the
    origin.  In one dimension ``nodes`` cells tile ``[-r_max, r_max]`` (an odd
    count puts a cell centre at 0); in two dimensions ``nodes`` radial shells
    are split into ``n_theta`` sectors.  Each atom carries the mass of its
    cell, integrated by Gauss-Legendre on pieces split at the kinks of the
    density.  ``r_max`` defaults to the radius where the tail drops below
    ``tail_level``.
    """
    if r_max is None:
        r_max = density.radius_for_tail(tail_level)
    if not (r_max > 0) or not (nodes >= 1) or n_theta < 1:
        raise ValueError(f"grid needs r_max > 0 and nodes >= 1, got r_max={r_max}, nodes={nodes}")
    r_max = float(r_max)
    kinks = _kinks(density)
    if density.dim == 1:
        t = np.linspace(-1.0, 1.0, nodes + 1)
        edges = np.sign(t) * np.expm1(np.abs(t) * math.log1p(r_max))
        mids = 0.5 * (edges[:-1] + edges[1:])
        sym = [0.0, *kinks, *(-k for k in kinks)]
        weights = _cell_masses(density.density, edges, sym)
        atoms = mids[:, None]
        reach = 0.5 * np.diff(edges)
    else:
        t = np.linspace(0.0, 1.0, nodes + 1)
        edges = np.expm1(t * math.log1p(r_max))
        rm = 0.5 * (edges[:-1] + edges[1:])
        theta = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
        ring = _cell_masses(density.radial_density, edges, kinks) / n_theta
        atoms = np.stack(
            [np.outer(rm, np.cos(theta)).ravel(), np.outer(rm, np.sin(theta)).ravel()], axis=1
        )
        weights = np.repeat(ring, n_theta)
        dr = np.diff(edges)
        reach = np.repeat(0.5 * dr + edges[1:] * math.sin(min(math.pi / n_theta, math.pi / 2)), n_theta)
    truncation = float(density.tail(r_max))
    m_err = abs(float(weights.sum()) - (1.0 - truncation))
    if weights.sum() > 1.0 + MASS_TOL:
        raise ValueError("discretised mass exceeds 1; refine the grid")
    q_err = float(weights @ reach) + m_err
    return Discretized(DiscreteMeasure(atoms, weights), r_max, nodes, truncation, m_err, q_err)


def tail_mass(measure, R: float) -> float:
    """Mass outside the closed ball of radius ``R``."""
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    if isinstance(measure, DiscreteMeasure):
        far = np.linalg.norm(measure.atoms, axis=1) > R
        return float(measure.weights[far].sum())
    if isinstance(measure, (PowerLawDensity, TiltedDensity)):
        return float(measure.tail(R))
    raise TypeError(f"unsupported measure type {type(measure).__name__}")


# -- config grammar ---------------------------------------------------------------


def _vec(value, dim: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (dim,):
        raise GrammarError(f"{what} must be a vector of length {dim}, got {value!r}")
    return arr


def _read_atoms_csv(path: str | Path, dim: int) -> DiscreteMeasure:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            cells = [c.strip() for c in row if c.strip()]
            if not cells or cells[0].startswith("#"):
                continue
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                continue  # header line
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != dim + 1:
        raise GrammarError(f"{path}: expected {dim} coordinate columns plus a weight column")
    return make_discrete(arr[:, :dim], arr[:, dim], dim=dim)


_MEASURE_KEYS = {
    "dirac": {"x", "w"},
    "atoms": {"x", "w", "file", "normalize"},
    "powerlaw": {"m", "dim", "r_max", "nodes", "n_theta"},
    "tilt": {"m", "dim", "n", "r_max", "nodes", "n_theta"},
    "satellite": {"base", "eps", "z"},
}


def _build(call: Call, dim: int, base_dir: Path, grid: dict) -> DiscreteMeasure:
    kw = dict(call.kwargs)
    if call.name not in _MEASURE_KEYS:
        raise GrammarError(f"unknown measure kind {call.name!r}")
    extra = set(kw) - _MEASURE_KEYS[call.name]
    if extra:
        raise GrammarError(f"unexpected {call.name}(...) parameter(s) {sorted(extra)}")
    try:
        if call.name == "dirac":
            return make_discrete(_vec(kw.get("x", 0.0), dim, "dirac x")[None, :], [float(kw.get("w", 1.0))])
        if call.name == "atoms":
            if "file" in kw:
                return _read_atoms_csv(base_dir / str(kw["file"]), dim)
            if "x" not in kw:
                raise GrammarError("atoms(...) needs file= or x=")
            xs = np.asarray(kw["x"], dtype=float)
            xs = xs.reshape(-1, 1) if dim == 1 else xs.reshape(-1, dim)
            return make_discrete(xs, kw.get("w"), dim=dim, normalize=bool(kw.get("normalize", False)))
        if call.name in ("powerlaw", "tilt"):
            d = int(kw.get("dim", dim))
            if d != dim:
                raise GrammarError(f"{call.name} dim={d} disagrees with dim={dim}")
            dens = PowerLawDensity(float(kw.get("m", d + 2)), d)
            if call.name == "tilt":
                if "n" not in kw:
                    raise GrammarError("tilt(...) needs n=")
                dens = tilt_density(dens, int(kw["n"]))
            disc = discretize_density(
                dens,
                r_max=kw.get("r_max", grid.get("r_max")),
                nodes=int(kw.get("nodes", grid.get("nodes", 4000))),
                n_theta=int(kw.get("n_theta", grid.get("n_theta", 64))),
            )
            return disc.measure.normalized()
        if call.name == "satellite":
            base = kw.get("base")
            if not isinstance(base, Call):
                raise GrammarError("satellite(...) needs base=<measure>")
            p = _build(base, dim, base_dir, grid)
            return satellite(p, float(kw["eps"]), _vec(kw["z"], dim, "satellite z"))
    except GrammarError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise GrammarError(f"invalid {call.name}(...) measure: {exc}") from exc


def parse_measure(text: str, dim: int, base_dir: str | Path = ".", grid: dict | None = None) -> DiscreteMeasure:
    """Build a measure from ``dirac(x=..)``, ``atoms(file=..)`` / ``atoms(x=[..], w=[..])``,
    ``powerlaw(m=..,dim=..)``, ``tilt(m=..,n=..)`` or ``satellite(base=..,eps=..,z=..)``.

    Continuous densities are discretised (``grid`` supplies ``nodes`` / ``r_max``)
    and renormalised to probability measures.
    """
    return _build(parse_call(text), int(dim), Path(base_dir), grid or {})
