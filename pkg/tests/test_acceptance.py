"""End-to-end acceptance suite.

Each test covers one acceptance criterion and prints a single PASS/FAIL line
with its measured figures.  Seeds are fixed, so the figures are reproducible.
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from driftlab.counterexamples import SatelliteSchedule, TiltSchedule, lattice, satellite_experiment, tilt_experiment
from driftlab.identities import (
    check_elliptic_identity,
    check_field_axioms,
    check_gradient_bound,
    check_gradient_identity,
    check_spectral,
)
from driftlab.kernels import KernelSpec, companion_constants
from driftlab.measures import PowerLawDensity, discretize_density, make_discrete, satellite, tilt_density
from driftlab.specfun import bessel_k
from driftlab.stability import AnchorObservable, anchor_check, defect_ray_estimate, drift_simulate, overlap_scalar

from conftest import FAMILY_SPECS, make_spec

SEED = 20240611
LAP = KernelSpec.laplace(1.0)
PAIR = make_discrete([-1.0, 1.0], [0.5, 0.5])


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def random_measure(rng, dim, scale, max_atoms=32):
    n = int(rng.integers(1, max_atoms + 1))
    return make_discrete(rng.normal(scale=1.5 * scale, size=(n, dim)), rng.dirichlet(np.ones(n)), dim=dim)


def test_criterion_1_bessel(report):
    s = np.logspace(-2, np.log10(30), 50)
    closed = np.sqrt(np.pi / (2 * s)) * np.exp(-s)
    closed_err = float(np.max(np.abs(bessel_k(0.5, s) - closed) / closed))
    rec_err = 0.0
    for mu in (0.5, 1.0, 1.5, 2.0):
        # K_{mu+1} = K_{mu-1} + (2 mu / s) K_mu, with K_{-nu} = K_nu
        lhs = bessel_k(mu + 1, s)
        rhs = bessel_k(abs(mu - 1), s) + 2 * mu / s * bessel_k(mu, s)
        rec_err = max(rec_err, float(np.max(np.abs(lhs - rhs) / lhs)))
    ok = closed_err <= 1e-10 and rec_err <= 1e-8
    report(1, ok, f"K_1/2 closed form rel err {closed_err:.2e} (<= 1e-10); recurrence residual {rec_err:.2e} (<= 1e-8)")


def test_criterion_2_companion_identities(report):
    rng = np.random.default_rng(SEED)
    worst_grad = worst_ell = 0.0
    failures = []
    violations = 0
    for family, scale, nu in FAMILY_SPECS:
        for dim in (1, 2, 3):
            spec = make_spec(family, scale, nu, dim=dim)
            ell = spec.length_scale
            for _ in range(20):
                r = random_measure(rng, dim, ell)
                x = rng.normal(scale=2 * ell, size=(10, dim))
                g = check_gradient_identity(spec, r, x)
                e = check_elliptic_identity(spec, r, x)
                worst_grad = max(worst_grad, g.max_rel)
                worst_ell = max(worst_ell, e.max_rel)
                if not (g.passed and e.passed):
                    failures.append((str(spec), g.max_rel, e.max_rel))
                if family == "laplace":
                    b = check_gradient_bound(spec, r, x)
                    violations += b.details["violations"]
    ok = not failures and violations == 0 and worst_grad <= 1e-6 and worst_ell <= 1e-4
    report(
        2,
        ok,
        f"600 configurations: gradient identity max rel {worst_grad:.2e} (<= 1e-6); "
        f"elliptic max rel {worst_ell:.2e} (<= 1e-4); gradient-bound violations {violations}; failures {failures[:3]}",
    )


def test_criterion_3_spectral(report):
    xi = np.linspace(-5, 5, 21)
    worst_transform = worst_ode = 0.0
    failed = []
    for family, scale, nu in FAMILY_SPECS:
        rep = check_spectral(make_spec(family, scale, nu, dim=1), xi)
        worst_transform = max(worst_transform, rep.details["transform_max_rel"])
        worst_ode = max(worst_ode, rep.details["ode_max_rel"])
        if not rep.passed:
            failed.append(f"{family}({scale},{nu}) d=1")
        for dim in (2, 3):
            pts = np.stack([xi] + [xi[::-1] * 0.5] * (dim - 1), axis=1)
            rep = check_spectral(make_spec(family, scale, nu, dim=dim), pts)
            worst_ode = max(worst_ode, rep.details["ode_max_rel"])
            if not rep.passed:
                failed.append(f"{family}({scale},{nu}) d={dim}")
    exponents_ok = True
    for family, scale, nu in FAMILY_SPECS:
        if family == "gaussian":
            continue
        for dim in (1, 2, 3):
            expected = Fraction(0.5 if family == "laplace" else nu) + Fraction(dim, 2)
            exponents_ok &= companion_constants(make_spec(family, scale, nu, dim)).exact_spectral_exponent() == expected
    ok = not failed and worst_transform <= 1e-6 and worst_ode <= 1e-6 and exponents_ok
    report(
        3,
        ok,
        f"cosine transform max rel {worst_transform:.2e}, ODE residual max rel {worst_ode:.2e} (<= 1e-6); "
        f"c1c2/(2 lambda1) = nu + d/2 exactly: {exponents_ok}; failed {failed}",
    )


def test_criterion_4_field_axioms(report):
    rng = np.random.default_rng(SEED + 4)
    worst_anti = worst_zero = 0.0
    ok = True
    for k in range(100):
        family, scale, nu = FAMILY_SPECS[k % len(FAMILY_SPECS)]
        dim = 1 + k % 3
        spec = make_spec(family, scale, nu, dim=dim)
        p = random_measure(rng, dim, spec.length_scale)
        q = random_measure(rng, dim, spec.length_scale)
        x = rng.normal(scale=3 * spec.length_scale, size=(10, dim))
        a = check_field_axioms(spec, p, q, x, search_grid=x)
        z = check_field_axioms(spec, p, p, x)
        worst_anti = max(worst_anti, a.details["antisymmetry_max"], z.details["antisymmetry_max"])
        worst_zero = max(worst_zero, z.details["zero_field_max"])
        ok &= a.details["antisymmetry_max"] <= 1e-12 and z.passed
    witness_min = math.inf
    for k in range(20):
        family, scale, nu = FAMILY_SPECS[k % len(FAMILY_SPECS)]
        dim = 1 + k % 2
        spec = make_spec(family, scale, nu, dim=dim)
        while True:
            p = random_measure(rng, dim, spec.length_scale, max_atoms=4)
            q = random_measure(rng, dim, spec.length_scale, max_atoms=4)
            if not p.same_as(q):
                break
        rep = check_field_axioms(spec, p, q, p.atoms)
        witness_min = min(witness_min, rep.details["witness_max"])
        ok &= rep.passed
    ok = bool(ok and worst_anti <= 1e-12 and worst_zero <= 1e-12 and witness_min > 1e-10)
    report(
        4,
        ok,
        f"antisymmetry max {worst_anti:.1e}, p=q field max {worst_zero:.1e} (<= 1e-12) on 100 configurations; "
        f"smallest witness over 20 distinct pairs {witness_min:.2e} (> 1e-10)",
    )


def test_criterion_5_satellite(report):
    z = 4.0 * np.arange(1, 9)[:, None]
    sched = SatelliteSchedule(base=PAIR, eps=0.3, satellite_positions=z, compact_grid=lattice(-5, 5, 0.1))
    rep = satellite_experiment(LAP, sched)
    rows = rep.rows
    excess = max(r["sup_V_grid"] - r["analytic_bound"] for r in rows if not r["flag"])
    bound_ok = all(r["sup_V_grid"] <= r["analytic_bound"] + 1e-10 for r in rows if not r["flag"])
    last = rows[-1]["sup_V_grid"]
    tails_ok = all(r["tail_mass"] == 0.3 for r in rows if r["n"] >= 2)
    ok = bound_ok and last <= 1e-6 and tails_ok and rows[0]["flag"] != ""
    report(
        5,
        ok,
        f"max(sup - bound) {excess:.2e} (<= 1e-10); sup at n=8 {last:.2e} (<= 1e-6); "
        f"tail mass == 0.3 exactly for n >= 2: {tails_ok}",
    )


def test_criterion_6_tilt(report):
    base = PowerLawDensity(3, 1)
    t_err = max(abs(tilt_density(base, n).t_n - (1 + 2 * n) ** -2.0) for n in (2, 4, 8, 16))
    sched = TiltSchedule(m=3, dim=1, n_values=(2, 4, 8, 16), eval_grid=lattice(-10, 10, 0.1), lam=0.75)
    rep = tilt_experiment(LAP, sched)
    tz = max(abs(r["tail_times_Z"] - 1) for r in rep.rows)
    tail_min = min(r["tail_mass"] for r in rep.rows)
    sups = rep.column("sup_V_grid")
    ratio = sups[-1] / sups[0]
    ok = t_err <= 1e-8 and tz <= 1e-6 and tail_min >= 0.2 and ratio <= 0.2
    report(
        6,
        ok,
        f"t_n error {t_err:.1e} (<= 1e-8); |tail*Z_n - 1| {tz:.1e} (<= 1e-6); min tail {tail_min:.4f} (>= 0.2); "
        f"sup ratio n=16/n=2 {ratio:.2e} (<= 0.2)",
    )


def test_criterion_7_stability(report):
    rng = np.random.default_rng(SEED + 7)
    lin_err = 0.0
    for _ in range(20):
        p = random_measure(rng, 2, 1.0)
        mu = random_measure(rng, 2, 1.0)
        spec = KernelSpec.matern(1.5, 1.0, 2)
        base = overlap_scalar(spec, p, mu)
        for c in (0.1, 0.25, 0.5, 0.9, 1.0):
            lin_err = max(lin_err, abs(overlap_scalar(spec, p, mu.scaled(c)) - c * base))
    zp = overlap_scalar(LAP, PAIR, PAIR)
    # the zero measure has no atoms, so Z_p(0 p) = 0 by linearity
    scaled = {c: (0.0 if c == 0 else overlap_scalar(LAP, PAIR, PAIR.scaled(c))) for c in (0.0, 0.25, 0.5, 0.9)}
    separation = all(v < zp for v in scaled.values())

    sat_seq = [satellite(PAIR, 0.3, [4.0 * n]) for n in range(1, 11)]
    est = defect_ray_estimate(LAP, PAIR, sat_seq[-1], anchor_points=np.linspace(-2, 2, 9))
    fail = anchor_check(LAP, PAIR, sat_seq, AnchorObservable.for_target("overlap", LAP, PAIR))

    dens = PowerLawDensity(3, 1)
    ref = discretize_density(dens, r_max=200, nodes=8000)
    discs = [discretize_density(dens, r_max=200, nodes=n) for n in (500, 1000, 2000, 4000)]
    target = ref.measure.normalized()
    # Laplace tau=1: u_p <= 1 and Lip(u_p) <= 1, so each discretisation's
    # quadrature error (plus renormalised truncation) bounds the overlap error
    slack = lambda d: d.quadrature_error + 2 * d.truncation_bound
    tol = slack(ref) + slack(discs[-1])
    passed = anchor_check(LAP, target, [d.measure.normalized() for d in discs], AnchorObservable.for_target("overlap", LAP, target), tol=tol)

    ok = lin_err <= 1e-12 and separation and abs(est.c_hat - 0.7) <= 1e-3 and fail.verdict == "FAIL" and passed.verdict == "PASS"
    report(
        7,
        ok,
        f"linearity err {lin_err:.1e} (<= 1e-12); Z_p(cp) < Z_p(p) for c in {{0,.25,.5,.9}}: {separation}; "
        f"c_hat at n=10 {est.c_hat:.6f} (|c-0.7| <= 1e-3); satellite anchor {fail.verdict}; "
        f"refinement anchor {passed.verdict} (gap {passed.reference_value - passed.proxy:.1e}, tol {tol:.1e})",
    )


def test_criterion_8_simulator(report):
    rng = np.random.default_rng(SEED + 8)
    atoms = rng.normal(size=(12, 2))
    p = make_discrete(atoms, dim=2)
    still = drift_simulate(KernelSpec.gaussian(1.0, 2), p, atoms, steps=10, step_size=0.5)
    drift_max = float(np.max(np.abs(still.trajectory - atoms)))

    jump = drift_simulate(LAP, make_discrete([0.3]), [[0.1]], steps=3, step_size=1.0)
    jump_exact = bool(np.all(jump.trajectory[1:, 0, 0] == 0.3))

    run = drift_simulate(LAP, make_discrete([0.0]), np.full((64, 1), -5.0), steps=20, step_size=0.5)
    dist = np.abs(run.trajectory.mean(axis=1)[:, 0])
    monotone = bool(np.all(np.diff(dist) < 0))
    ok = drift_max <= 1e-12 and jump_exact and monotone
    report(
        8,
        ok,
        f"stationary drift {drift_max:.1e} (<= 1e-12); jump lands exactly: {jump_exact}; "
        f"mean distance strictly decreasing over 20 steps: {monotone} ({dist[0]:g} -> {dist[-1]:.2e})",
    )
