"""Kernel mass, barycenter, drift field and companion potential.

All sums over atoms are done on log-weights ``log w_i + log kappa(x - y_i)``
shifted by their maximum, so barycenters stay well defined in the far field
where the kernel mass itself underflows.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernels import KernelSpec, companion_constants, radial_log_profiles
from .measures import DiscreteMeasure

__all__ = [
    "FieldSample",
    "GridReport",
    "kernel_mass",
    "barycenter",
    "drift",
    "drift_batch",
    "companion_potential",
    "field_grid_report",
]

# rows * atoms handled per block; bounds the temporary (rows, atoms) arrays
_BLOCK = 2_000_000


def _points(spec: KernelSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and (x.ndim == 0 or x.shape[0] == spec.dim)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[None, :] if single else x[:, None]
    if x.shape[-1] != spec.dim:
        raise ValueError(f"points have dimension {x.shape[-1]}, kernel has dim={spec.dim}")
    return x, single


def _check(spec: KernelSpec, r: DiscreteMeasure) -> None:
    if r.dim != spec.dim:
        raise ValueError(f"measure has dimension {r.dim}, kernel has dim={spec.dim}")


def _blocks(n_rows: int, n_atoms: int):
    step = max(1, _BLOCK // max(n_atoms, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def _log_terms(spec: KernelSpec, r: DiscreteMeasure, x: np.ndarray, companion: bool = False) -> np.ndarray:
    """``log w_j + log kappa(x_i - y_j)`` (or ``log eta``) as an ``(len(x), n_atoms)`` array."""
    diff = x[:, None, :] - r.atoms[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    lk, le = radial_log_profiles(spec, dist)
    with np.errstate(divide="ignore"):
        logw = np.log(r.weights)
    return (le if companion else lk) + logw[None, :]


def _row_dot(e: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """``e @ atoms`` reduced row by row, so a row's value does not depend on the block shape (unlike BLAS)."""
    return np.stack([(e * atoms[:, k]).sum(axis=1) for k in range(atoms.shape[1])], axis=1)


def _mass_and_barycenter(spec: KernelSpec, r: DiscreteMeasure, x: np.ndarray):
    log_u = np.empty(len(x))
    bary = np.empty((len(x), spec.dim))
    for sl in _blocks(len(x), r.size):
        lt = _log_terms(spec, r, x[sl])
        top = lt.max(axis=1, keepdims=True)
        e = np.exp(lt - top)
        s = e.sum(axis=1)
        log_u[sl] = top[:, 0] + np.log(s)
        bary[sl] = _row_dot(e, r.atoms) / s[:, None]
    return log_u, bary


def kernel_mass(spec: KernelSpec, r: DiscreteMeasure, x):
    """``u_r(x) = sum_i w_i kappa(x - y_i)`` and its logarithm.

    Returns ``(value, log_value)``; ``log_value`` stays finite when ``value``
    underflows.  ``x`` may be one point or an array of points.
    """
    _check(spec, r)
    pts, single = _points(spec, x)
    log_u = np.concatenate([logsumexp(_log_terms(spec, r, pts[sl]), axis=1) for sl in _blocks(len(pts), r.size)])
    if single:
        return float(np.exp(log_u[0])), float(log_u[0])
    return np.exp(log_u), log_u


def barycenter(spec: KernelSpec, r: DiscreteMeasure, x) -> np.ndarray:
    """Local barycenter ``a_r(x) = m_r(x) / u_r(x)`` from softmax weights."""
    _check(spec, r)
    pts, single = _points(spec, x)
    _, bary = _mass_and_barycenter(spec, r, pts)
    if not np.all(np.isfinite(bary)):  # pragma: no cover - guarded by the max shift
        raise ArithmeticError("barycenter weights vanished after shifting")
    return bary[0] if single else bary


@dataclass(frozen=True)
class FieldSample:
    x: np.ndarray
    u_p: float
    u_q: float
    a_p: np.ndarray
    a_q: np.ndarray
    V: np.ndarray
    log_u_p: float
    log_u_q: float


def drift_batch(spec: KernelSpec, p: DiscreteMeasure, q: DiscreteMeasure, x) -> dict:
    """Vectorised drift: arrays ``u_p, u_q, a_p, a_q, V, log_u_p, log_u_q`` over points ``x``."""
    _check(spec, p)
    _check(spec, q)
    pts, _ = _points(spec, x)
    lp, ap = _mass_and_barycenter(spec, p, pts)
    lq, aq = _mass_and_barycenter(spec, q, pts)
    return dict(x=pts, u_p=np.exp(lp), u_q=np.exp(lq), a_p=ap, a_q=aq, V=ap - aq, log_u_p=lp, log_u_q=lq)


def drift(spec: KernelSpec, p: DiscreteMeasure, q: DiscreteMeasure, x) -> FieldSample:
    """Drift ``V_{p,q}(x) = a_p(x) - a_q(x)`` at a single point."""
    for name, m in (("p", p), ("q", q)):
        if not m.is_probability:
            raise ValueError(f"drift needs probability measures; {name} has mass {m.mass!r}")
    b = drift_batch(spec, p, q, x)
    if len(b["x"]) != 1:
        raise ValueError("drift() takes one point; use drift_batch for many")
    return FieldSample(
        x=b["x"][0],
        u_p=float(b["u_p"][0]),
        u_q=float(b["u_q"][0]),
        a_p=b["a_p"][0],
        a_q=b["a_q"][0],
        V=b["V"][0],
        log_u_p=float(b["log_u_p"][0]),
        log_u_q=float(b["log_u_q"][0]),
    )


def companion_potential(spec: KernelSpec, r: DiscreteMeasure, x):
    """``Psi_r(x) = sum_i w_i eta(x - y_i)`` and ``grad Psi_r(x) = sum_i w_i grad eta(x - y_i)``.

    The gradient uses the closed form ``grad eta(z) = -z kappa(z) / c1`` atom
    by atom.
    """
    _check(spec, r)
    pts, single = _points(spec, x)
    c1 = companion_constants(spec).c1
    val = np.empty(len(pts))
    grad = np.empty((len(pts), spec.dim))
    for sl in _blocks(len(pts), r.size):
        le = _log_terms(spec, r, pts[sl], companion=True)
        top = le.max(axis=1, keepdims=True)
        val[sl] = np.exp(top[:, 0]) * np.exp(le - top).sum(axis=1)
        wk = np.exp(_log_terms(spec, r, pts[sl]))
        # sum_i w_i kappa_i (y_i - x) / c1
        grad[sl] = (_row_dot(wk, r.atoms) - wk.sum(axis=1)[:, None] * pts[sl]) / c1
    if single:
        return float(val[0]), grad[0]
    return val, grad


@dataclass
class GridReport:
    """Per-point drift samples on a grid with the sup of ``|V|``."""

    columns: dict
    sup_norm: float
    argmax: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        return self.columns["normV"]

    def header(self) -> list[str]:
        return list(self.columns)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        cols = [np.asarray(c) for c in self.columns.values()]
        for i in range(len(cols[0])):
            w.writerow([f"{c[i]:.17g}" for c in cols])
        return buf.getvalue()


def field_grid_report(spec: KernelSpec, p: DiscreteMeasure, q: DiscreteMeasure, grid, threads: int = 1) -> GridReport:
    """Evaluate the drift on every grid point (row-major order) and take the sup of ``|V|``.

    With ``threads > 1`` the grid is split into contiguous blocks evaluated
    concurrently; every per-point value is computed independently, so the
    output does not depend on the schedule.
    """
    pts, _ = _points(spec, grid)
    if len(pts) == 0:
        raise ValueError("empty grid")
    threads = max(1, int(threads))
    if threads == 1:
        parts = [drift_batch(spec, p, q, pts)]
    else:
        chunks = np.array_split(pts, min(threads, len(pts)))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: drift_batch(spec, p, q, c), chunks))
    b = {k: np.concatenate([part[k] for part in parts]) for k in parts[0]}
    d = spec.dim
    cols = {}
    for k in range(d):
        cols[f"x_{k + 1}"] = b["x"][:, k]
    cols["u_p"] = b["u_p"]
    cols["u_q"] = b["u_q"]
    for name in ("a_p", "a_q", "V"):
        for k in range(d):
            cols[f"{name}_{k + 1}"] = b[name][:, k]
    norms = np.linalg.norm(b["V"], axis=1)
    cols["normV"] = norms
    i = int(np.argmax(norms))
    return GridReport(cols, float(norms[i]), b["x"][i].copy())
