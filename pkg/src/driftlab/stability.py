"""Overlap scalar, anchor observables, defect-ray estimates and a particle drift simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import companion_potential, drift_batch, field_grid_report, kernel_mass
from .kernels import KernelSpec
from .measures import DiscreteMeasure, make_discrete

__all__ = [
    "overlap_scalar",
    "DefectEstimate",
    "defect_ray_estimate",
    "default_anchor_points",
    "AnchorObservable",
    "AnchorVerdict",
    "anchor_check",
    "SimulationResult",
    "drift_simulate",
    "empirical_measure",
]

ANCHOR_KINDS = ("kernel_section", "companion_section", "overlap")
DEFAULT_WINDOW_FRACTION = 0.25


def overlap_scalar(spec: KernelSpec, p: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    """``Z_p(mu) = int u_p d mu = sum_ij w^mu_i w^p_j kappa(x_i - y_j)``."""
    if p.dim != mu.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {mu.dim}")
    u, _ = kernel_mass(spec, p, mu.atoms)
    return float(np.dot(mu.weights, u))


def default_anchor_points(spec: KernelSpec, p: DiscreteMeasure, limit: int = 64) -> np.ndarray:
    """The origin plus the atoms of ``p`` (heaviest first, at most ``limit`` in all)."""
    order = np.argsort(-p.weights, kind="stable")
    pts = np.vstack([np.zeros((1, p.dim)), p.atoms[order]])
    _, idx = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(idx)][:limit]


@dataclass(frozen=True)
class DefectEstimate:
    c_hat: float
    dispersion: float
    anchor_points: np.ndarray
    ratios: np.ndarray


def defect_ray_estimate(spec: KernelSpec, p: DiscreteMeasure, q: DiscreteMeasure, anchor_points=None, allow_subprobability: bool = False) -> DefectEstimate:
    """Estimate ``c`` in ``q ~ c p`` from ``u_q(x) / u_p(x)`` at anchor points.

    ``c_hat`` is the median ratio and ``dispersion`` the spread ``max - min``;
    a small spread says ``u_q`` is close to a multiple of ``u_p``.
    """
    if not p.is_probability:
        raise ValueError("p must be a probability measure")
    if not (q.is_probability or allow_subprobability):
        raise ValueError("q must be a probability measure (pass allow_subprobability=True for c * p inputs)")
    pts = default_anchor_points(spec, p) if anchor_points is None else np.asarray(anchor_points, dtype=float).reshape(-1, p.dim)
    if len(pts) < 3:
        raise ValueError("need at least 3 anchor points")
    _, lp = kernel_mass(spec, p, pts)
    _, lq = kernel_mass(spec, q, pts)
    ratios = np.exp(lq - lp)
    return DefectEstimate(float(np.median(ratios)), float(ratios.max() - ratios.min()), pts, ratios)


@dataclass(frozen=True)
class AnchorObservable:
    """A positive observable ``F`` with its value at the target.

    ``kernel_section`` is ``F(q) = u_q(x*)``, ``companion_section`` is
    ``Psi_q(x*)`` and ``overlap`` is ``Z_p(q)``.
    """

    kind: str
    reference_value: float
    point: tuple | None = None

    def __post_init__(self):
        if self.kind not in ANCHOR_KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}; expected one of {ANCHOR_KINDS}")
        if self.kind != "overlap" and self.point is None:
            raise ValueError(f"{self.kind} needs an anchor point x*")
        if not self.reference_value > 0:
            raise ValueError("anchor observables must be strictly positive at the target")

    @classmethod
    def for_target(cls, kind: str, spec: KernelSpec, p: DiscreteMeasure, point=None) -> "AnchorObservable":
        pt = None if point is None else tuple(np.asarray(point, dtype=float).reshape(-1).tolist())
        if kind not in ANCHOR_KINDS:
            raise ValueError(f"unknown observable kind {kind!r}; expected one of {ANCHOR_KINDS}")
        if kind != "overlap" and pt is None:
            pt = (0.0,) * p.dim
        probe = cls(kind, 1.0, pt)
        return cls(kind, probe.evaluate(spec, p, p), pt)

    def evaluate(self, spec: KernelSpec, p: DiscreteMeasure, q: DiscreteMeasure) -> float:
        if self.kind == "overlap":
            return overlap_scalar(spec, p, q)
        x = np.asarray(self.point, dtype=float)
        if self.kind == "kernel_section":
            return float(kernel_mass(spec, q, x)[0])
        return float(companion_potential(spec, q, x)[0])


@dataclass
class AnchorVerdict:
    observable: str
    reference_value: float
    values: list
    window: int
    proxy: float
    tolerance: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def anchor_check(spec: KernelSpec, p: DiscreteMeasure, q_sequence, observable: AnchorObservable, tol: float = 1e-12, window: int | None = None) -> AnchorVerdict:
    """Compare ``liminf F(q_n)`` with ``F(p)``.

    The liminf is approximated by the minimum over the last ``window`` terms
    (default: the last ceil(25%) of the sequence).  PASS iff that minimum is at
    least ``F(p) - tol``.
    """
    qs = list(q_sequence)
    if not qs:
        raise ValueError("empty measure sequence")
    if window is None:
        window = max(1, math.ceil(DEFAULT_WINDOW_FRACTION * len(qs)))
    if not 1 <= window <= len(qs):
        raise ValueError(f"window must lie in [1, {len(qs)}], got {window}")
    values = [observable.evaluate(spec, p, q) for q in qs]
    proxy = min(values[-window:])
    ok = proxy >= observable.reference_value - tol
    return AnchorVerdict(observable.kind, observable.reference_value, values, window, proxy, tol, "PASS" if ok else "FAIL")


# -- particle simulator ------------------------------------------------------------


def empirical_measure(particles: np.ndarray) -> DiscreteMeasure:
    n = len(particles)
    return make_discrete(particles, np.full(n, 1.0 / n), dim=particles.shape[1])


_fsum3 = np.frompyfunc(lambda a, b, c: math.fsum((a, b, c)), 3, 1)


@dataclass
class SimulationResult:
    trajectory: np.ndarray  # (steps + 1, particles, dim)
    overlap: np.ndarray  # (steps + 1,)
    anchors: np.ndarray  # (steps + 1, anchor points)
    anchor_points: np.ndarray
    field_sup: np.ndarray  # (steps + 1,)
    diagnostic_grid: np.ndarray
    step_size: float
    notes: dict = field(default_factory=dict)

    def trajectory_rows(self):
        steps, n, d = self.trajectory.shape
        for k in range(steps):
            for j in range(n):
                yield [k, j, *self.trajectory[k, j]]

    def diagnostics_rows(self):
        for k in range(len(self.overlap)):
            yield [k, self.overlap[k], *self.anchors[k], self.field_sup[k]]


def _diagnostic_grid(spec: KernelSpec, p: DiscreteMeasure, particles: np.ndarray) -> np.ndarray:
    pts = np.vstack([p.atoms, particles])
    pad = 3.0 * spec.length_scale
    per_axis = {1: 201, 2: 41}.get(spec.dim, 11)
    axes = [np.linspace(lo - pad, hi + pad, per_axis) for lo, hi in zip(pts.min(axis=0), pts.max(axis=0))]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def drift_simulate(
    spec: KernelSpec,
    p: DiscreteMeasure,
    particles0,
    steps: int,
    step_size: float = 0.5,
    anchor_points=None,
    diagnostic_grid=None,
    threads: int = 1,
) -> SimulationResult:
    """Move equally weighted particles along ``V_{p, q_k}`` where ``q_k`` is their empirical law.

    Every particle advances from the same state (synchronous update)
    ``x <- x + step_size * (a_p(x) - a_{q_k}(x))``.  The update is evaluated
    as a correctly rounded sum of ``x``, ``step_size * a_p`` and
    ``-step_size * a_q``, so fixed points stay fixed bit for bit and a unit
    step onto a barycenter lands on it exactly.
    """
    if int(steps) != steps or steps < 0:
        raise ValueError(f"steps must be a non-negative integer, got {steps}")
    if not 0 < step_size <= 1:
        raise ValueError(f"step_size must lie in (0, 1], got {step_size}")
    x = np.array(particles0, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if spec.dim == 1 else x[None, :]
    if len(x) == 0 or x.shape[1] != spec.dim:
        raise ValueError(f"need at least one particle of dimension {spec.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial particle positions must be finite")
    anchors = default_anchor_points(spec, p) if anchor_points is None else np.asarray(anchor_points, dtype=float).reshape(-1, spec.dim)
    grid = _diagnostic_grid(spec, p, x) if diagnostic_grid is None else np.asarray(diagnostic_grid, dtype=float).reshape(-1, spec.dim)

    traj = [x.copy()]
    overlap, anchor_vals, sups = [], [], []

    def diagnose(state):
        q = empirical_measure(state)
        overlap.append(overlap_scalar(spec, p, q))
        anchor_vals.append(kernel_mass(spec, q, anchors)[0])
        sups.append(field_grid_report(spec, p, q, grid, threads=threads).sup_norm)
        return q

    q = diagnose(x)
    for k in range(int(steps)):
        b = drift_batch(spec, p, q, x)
        x = _fsum3(x, step_size * b["a_p"], -step_size * b["a_q"]).astype(float)
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise FloatingPointError(f"particle {bad[0]} left the finite range at step {k + 1}")
        traj.append(x.copy())
        q = diagnose(x)
    return SimulationResult(
        trajectory=np.stack(traj),
        overlap=np.array(overlap),
        anchors=np.array(anchor_vals),
        anchor_points=anchors,
        field_sup=np.array(sups),
        diagnostic_grid=grid,
        step_size=step_size,
        notes={"field_sup_is_grid_proxy": True, "grid_points": len(grid)},
    )
