import numpy as np
import pytest

from modlock.locking import compute_G, find_singular_points
from modlock.model import ForcingProfile, make_vdp_laser
from modlock.orbit import (
    compute_adjoint,
    compute_floquet,
    compute_phase_offsets,
    default_orbit_guess,
    find_periodic_orbit,
)
from modlock.sim import build_cycle_table

# second-harmonic-dominant profile realizing the four-extremum case; the weak
# first harmonic breaks the |a|^2 symmetry so the two maxima differ
CASE_II_FORCING = ForcingProfile((1.0, 0.08, 0.55))


@pytest.fixture(scope="session")
def vdp_model():
    return make_vdp_laser()


@pytest.fixture(scope="session")
def vdp_orbit(vdp_model):
    return find_periodic_orbit(vdp_model, default_orbit_guess(vdp_model))


@pytest.fixture(scope="session")
def vdp_floquet(vdp_model, vdp_orbit):
    return compute_floquet(vdp_model, vdp_orbit)


@pytest.fixture(scope="session")
def vdp_adjoint(vdp_model, vdp_orbit, vdp_floquet):
    return compute_adjoint(vdp_model, vdp_orbit, vdp_floquet)


@pytest.fixture(scope="session")
def vdp_offsets(vdp_model, vdp_orbit):
    return compute_phase_offsets(vdp_model, vdp_orbit)


@pytest.fixture(scope="session")
def vdp_G(vdp_orbit, vdp_adjoint, vdp_model):
    return find_singular_points(compute_G(vdp_orbit, vdp_adjoint, vdp_model.forcing))


@pytest.fixture(scope="session")
def vdp_G_case2(vdp_orbit, vdp_adjoint):
    return find_singular_points(compute_G(vdp_orbit, vdp_adjoint, CASE_II_FORCING))


@pytest.fixture(scope="session")
def vdp_table(vdp_orbit):
    return build_cycle_table(vdp_orbit)


def trapezoid_G_oracle(orbit, adjoint, model, forcing, n_grid=512, n_oracle=8192):
    """Brute-force double sampling of the locking integral (trapezoid = rectangle
    rule on periodic data); independent of the Gauss-Legendre implementation path."""
    s = np.linspace(0.0, 2 * np.pi, n_oracle, endpoint=False)
    p = adjoint.p(s)
    z = orbit.z0(s)
    n = orbit.dim - 1
    q = np.array([p[i, :n] @ model.g(z[i, :n]) for i in range(n_oracle)])
    w = forcing.intensity(s)
    step = n_oracle // n_grid
    idx = np.arange(n_oracle)
    out = np.empty(n_grid)
    for i in range(n_grid):
        out[i] = np.mean(q[(idx + step * i) % n_oracle] * w)
    return out
