"""Kernel drift fields: companion identities, non-tightness counterexamples and stability diagnostics."""

from .field import FieldSample, barycenter, companion_potential, drift, drift_batch, field_grid_report, kernel_mass
from .kernels import KernelSpec, companion_constants, companion_eval, companion_grad, kernel_eval, parse_kernel, spectral_density
from .measures import (
    DiscreteMeasure,
    PowerLawDensity,
    TiltedDensity,
    discretize_density,
    make_discrete,
    mixture,
    parse_measure,
    satellite,
    tail_mass,
    tilt_density,
)
from .specfun import bessel_k, bessel_k_log, gamma_fn

__version__ = "0.1.0"
