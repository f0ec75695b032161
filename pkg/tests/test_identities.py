import json
import math

import numpy as np
import pytest

from driftlab.identities import (
    VerifierReport,
    check_barycenter_identity,
    check_elliptic_identity,
    check_field_axioms,
    check_gradient_bound,
    check_gradient_identity,
    check_spectral,
    cosine_transform,
)
from driftlab.kernels import KernelSpec
from driftlab.measures import make_discrete

from conftest import FAMILY_SPECS, make_spec

LAP = KernelSpec.laplace(1.0)
DIRAC = make_discrete([0.0])
PAIR = make_discrete([-1.0, 1.0], [0.5, 0.5])


def random_measure(rng, dim, n):
    return make_discrete(rng.normal(scale=1.5, size=(n, dim)), rng.dirichlet(np.ones(n)), dim=dim)


# -- gradient identity -----------------------------------------------------------


def test_gradient_identity_dirac_example():
    rep = check_gradient_identity(LAP, DIRAC, [1.0], h=1e-5)
    assert rep.passed and rep.max_rel <= 1e-6
    assert rep.points == 1 and rep.tolerance == 1e-6


def test_gradient_identity_gaussian_2d(rng):
    spec = KernelSpec.gaussian(1.0, 2)
    r = random_measure(rng, 2, 16)
    rep = check_gradient_identity(spec, r, rng.normal(scale=2, size=(40, 2)))
    assert rep.passed, rep


@pytest.mark.parametrize("h", [0.0, -1e-5, float("nan")])
def test_gradient_identity_rejects_step(h):
    with pytest.raises(ValueError):
        check_gradient_identity(LAP, DIRAC, [1.0], h=h)


@pytest.mark.parametrize("family,scale,nu", FAMILY_SPECS)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_gradient_identity_all_families(family, scale, nu, dim, rng):
    spec = make_spec(family, scale, nu, dim=dim)
    r = random_measure(rng, dim, 8)
    x = rng.normal(scale=2 * spec.length_scale, size=(20, dim))
    assert check_gradient_identity(spec, r, x).passed


@pytest.mark.parametrize("family,scale,nu", [f for f in FAMILY_SPECS if f[0] != "laplace" and f[2] != 0.5])
def test_gradient_step_halving(family, scale, nu):
    # second-order stencil: halving h cuts the error by about 4 where truncation dominates
    spec = make_spec(family, scale, nu, dim=1)
    ell = spec.length_scale
    x = np.array([[0.37 * ell], [1.3 * ell], [-0.8 * ell]])
    r = make_discrete([0.0, 0.5 * ell], [0.6, 0.4])
    h = 5e-2 * ell
    e1 = check_gradient_identity(spec, r, x, h=h).max_abs
    e2 = check_gradient_identity(spec, r, x, h=h / 2).max_abs
    assert e2 <= 0.5 * e1


def test_gradient_step_halving_laplace_smooth_side():
    # away from atoms the Laplace companion is smooth as well
    r = make_discrete([0.0])
    x = np.array([[1.5], [2.5], [-3.0]])
    e1 = check_gradient_identity(LAP, r, x, h=5e-2).max_abs
    e2 = check_gradient_identity(LAP, r, x, h=2.5e-2).max_abs
    assert e2 <= 0.5 * e1


# -- elliptic identity ------------------------------------------------------------


def test_elliptic_dirac_example():
    rep = check_elliptic_identity(LAP, DIRAC, [0.7], h=1e-3)
    assert rep.passed and rep.max_rel <= 1e-4


def test_elliptic_gaussian_exact(rng):
    spec = KernelSpec.gaussian(1.3, 2)
    rep = check_elliptic_identity(spec, random_measure(rng, 2, 10), rng.normal(size=(30, 2)))
    assert rep.tolerance == 1e-12 and rep.passed
    assert "h" not in rep.details


def test_elliptic_matern_example(rng):
    spec = KernelSpec.matern(1.5, 1.0, 2)
    rep = check_elliptic_identity(spec, random_measure(rng, 2, 8), rng.normal(scale=2, size=(30, 2)))
    assert rep.passed, rep


@pytest.mark.parametrize("family,scale,nu", FAMILY_SPECS)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_elliptic_all_families(family, scale, nu, dim, rng):
    spec = make_spec(family, scale, nu, dim=dim)
    r = random_measure(rng, dim, 8)
    x = rng.normal(scale=2 * spec.length_scale, size=(20, dim))
    assert check_elliptic_identity(spec, r, x).passed


@pytest.mark.parametrize("spec", [KernelSpec.matern(0.5, 1.0, 1), LAP])
def test_elliptic_cusp_exclusion(spec):
    x = np.array([[0.0], [0.005], [0.5], [2.0]])
    rep = check_elliptic_identity(spec, DIRAC, x)
    assert rep.details["excluded_near_atoms"] == 2
    assert rep.points == 2 and rep.passed


def test_elliptic_smooth_kernels_keep_all_points():
    rep = check_elliptic_identity(KernelSpec.matern(1.5, 1.0, 1), DIRAC, [[0.0], [0.005]])
    assert rep.points == 2 and "excluded_near_atoms" not in rep.details


def test_elliptic_rejects_step():
    with pytest.raises(ValueError):
        check_elliptic_identity(LAP, DIRAC, [1.0], h=0)


# -- barycenter identity -----------------------------------------------------------


@pytest.mark.parametrize("family,scale,nu", FAMILY_SPECS)
def test_barycenter_identity(family, scale, nu, rng):
    spec = make_spec(family, scale, nu, dim=2)
    r = random_measure(rng, 2, 6)
    x = rng.normal(scale=2 * spec.length_scale, size=(30, 2))
    rep = check_barycenter_identity(spec, r, x)
    assert rep.passed, rep


# -- gradient bound ------------------------------------------------------------------


def test_gradient_bound_dirac_ratio():
    x = np.array([[0.5], [2.0], [10.0]])
    rep = check_gradient_bound(LAP, DIRAC, x)
    assert rep.passed
    z = np.abs(x[:, 0])
    assert rep.max_rel == pytest.approx(np.max(z / (1 + z)), rel=1e-14)
    assert rep.max_rel < 1


def test_gradient_bound_random(rng):
    for tau in (0.5, 1.0, 2.0):
        for d in (1, 2, 3):
            spec = KernelSpec.laplace(tau, d)
            rep = check_gradient_bound(spec, random_measure(rng, d, 10), rng.normal(scale=3, size=(100, d)))
            assert rep.passed and rep.details["violations"] == 0


def test_gradient_bound_at_atom():
    rep = check_gradient_bound(LAP, DIRAC, [0.0])
    assert rep.passed and rep.max_rel == 0.0


def test_gradient_bound_rejects_other_families():
    with pytest.raises(ValueError):
        check_gradient_bound(KernelSpec.gaussian(1.0), DIRAC, [0.0])


# -- spectral law ----------------------------------------------------------------------


def test_spectral_gaussian_example():
    spec = KernelSpec.gaussian(1.0)
    rep = check_spectral(spec, [2.0])
    assert rep.passed
    assert cosine_transform(spec, 2.0, rep.details["L"]) / cosine_transform(spec, 0.0, rep.details["L"]) == pytest.approx(math.exp(-2), rel=1e-6)


def test_spectral_laplace_example():
    rep = check_spectral(LAP, [0.0, 1.0])
    assert rep.passed and rep.details["transform_max_rel"] <= 1e-6
    L = rep.details["L"]
    assert cosine_transform(LAP, 1.0, L) / cosine_transform(LAP, 0.0, L) == pytest.approx(0.5, rel=1e-6)


def test_spectral_zero_frequency_ratio_is_one():
    rep = check_spectral(KernelSpec.matern(1.5, 1.0, 1), [0.0])
    assert rep.max_abs == 0.0


@pytest.mark.parametrize("family,scale,nu", [f for f in FAMILY_SPECS if f[0] != "matern"])
def test_spectral_fast_families(family, scale, nu):
    assert check_spectral(make_spec(family, scale, nu), np.linspace(-5, 5, 11)).passed


def test_spectral_extended_precision_is_recorded():
    rep = check_spectral(KernelSpec.gaussian(2.0), [0.0, 2.0, 5.0])
    assert rep.passed
    assert rep.details["extended_precision_xi"] == [5.0]


@pytest.mark.parametrize("dim", [2, 3])
def test_spectral_ode_higher_dim(dim, rng):
    for family, scale, nu in FAMILY_SPECS:
        rep = check_spectral(make_spec(family, scale, nu, dim=dim), rng.normal(scale=2, size=(10, dim)))
        assert rep.passed and "L" not in rep.details


def test_spectral_errors():
    with pytest.raises(ValueError):
        check_spectral(LAP, [float("inf")])
    with pytest.raises(ValueError):
        check_spectral(LAP.with_dim(2), [[1.0, 0.0]], transform=True)
    with pytest.raises(ValueError):
        cosine_transform(LAP, 1.0, 10.0, precision="quad")


# -- field axioms ------------------------------------------------------------------------


def test_field_axioms_equal_measures():
    rep = check_field_axioms(LAP, PAIR, PAIR, np.linspace(-4, 4, 33))
    assert rep.passed and rep.details["same_measure"]
    assert rep.details["zero_field_max"] <= 1e-12


def test_field_axioms_dirac_pair():
    rep = check_field_axioms(LAP, DIRAC, make_discrete([2.0]), [0.0, 1.0])
    assert rep.passed and rep.details["witness_max"] == 2.0


def test_field_axioms_witness_on_grid():
    grid = np.linspace(-3, 3, 61)
    rep = check_field_axioms(LAP, PAIR, DIRAC, [0.0, 0.5], search_grid=grid)
    assert rep.passed and rep.details["witness_max"] > 0
    assert -3 <= rep.details["witness"][0] <= 3


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_field_axioms_random(dim, rng):
    spec = KernelSpec.matern(2.5, 1.0, dim)
    p, q = random_measure(rng, dim, 5), random_measure(rng, dim, 7)
    assert check_field_axioms(spec, p, q, rng.normal(size=(20, dim))).passed


def test_field_axioms_requires_probability():
    with pytest.raises(ValueError):
        check_field_axioms(LAP, make_discrete([0.0], [0.5]), PAIR, [0.0])


# -- reports -----------------------------------------------------------------------------


def test_report_json_schema():
    rep = check_gradient_identity(LAP, DIRAC, [1.0, 2.0])
    data = json.loads(rep.to_json())
    for key in ("check", "tolerance", "points", "max_abs", "max_rel", "worst_point", "pass"):
        assert key in data
    assert data["pass"] is True and "passed" not in data
    assert isinstance(rep, VerifierReport)


def test_checks_are_deterministic(rng):
    spec = KernelSpec.matern(1.0, 1.0, 2)
    r = random_measure(rng, 2, 5)
    x = rng.normal(size=(10, 2))
    assert check_elliptic_identity(spec, r, x).to_json() == check_elliptic_identity(spec, r, x).to_json()
