"""Unforced planar periodic orbit: Newton shooting, Floquet data, normalized adjoint,
internal wave frequency alpha0 and the phase offset phi(psi).

The cycle is parametrized by scaled time psi = beta0 * t with psi = 0 anchored
at the point of maximal r0 along the cycle (ties broken by smallest first x
coordinate) -- a reproducibility convention; the phase origin is mathematically
free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    AssumptionViolationError,
    DegenerateOrbitError,
    InvalidOrbitError,
    NoConvergenceError,
)
from .integrate import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    DenseOutput,
    VectorField,
    integrate_adaptive,
    integrate_with_matrix,
)
from .model import ModelDef
from .quadrature import gl_points

TWO_PI = 2.0 * np.pi


def planar_rhs(model: ModelDef, z):
    """Unforced planar field F(z) = (f(x) + g(x) r^2, Re h(x) r) for z = (x, r)."""
    x, r = z[: model.n], z[model.n]
    hx = model.h(x)
    return np.concatenate((model.f(x) + model.g(x) * r * r, [hx.real * r]))


def planar_jacobian(model: ModelDef, z):
    x, r = z[: model.n], z[model.n]
    n = model.n
    J = np.empty((n + 1, n + 1))
    J[:n, :n] = np.asarray(model.df(x)) + np.asarray(model.dg(x)) * r * r
    J[:n, n] = 2.0 * np.asarray(model.g(x)) * r
    dh = np.asarray(model.dh(x))
    J[n, :n] = dh.real * r
    J[n, n] = model.h(x).real
    return J


def planar_field(model: ModelDef) -> VectorField:
    return VectorField(
        dim=model.n + 1,
        rhs=lambda t, z: planar_rhs(model, z),
        jacobian=lambda t, z: planar_jacobian(model, z),
    )


def _scaled_field(field: VectorField, beta0: float) -> VectorField:
    """Field in the psi = beta0 * t parametrization: dz/dpsi = F(z)/beta0."""
    jac = None
    if field.jacobian is not None:
        jac = lambda t, z: np.asarray(field.jacobian(t, z)) / beta0
    return VectorField(field.dim, lambda t, z: np.asarray(field.rhs(t, z)) / beta0, jac)


class PeriodicInterpolant:
    """Dense periodic function of psi in [0, 2pi), evaluated with wrap-around."""

    def __init__(self, dense: DenseOutput):
        self._dense = dense

    def __call__(self, psi):
        return self._dense.eval(np.mod(psi, TWO_PI))


@dataclass(frozen=True)
class PeriodicOrbit:
    """Periodic orbit z0(psi) with period T in time, beta0 = 2pi/T."""

    field: VectorField
    T: float
    beta0: float
    z0: PeriodicInterpolant
    anchor_state: np.ndarray
    model: Optional[ModelDef] = None
    closure_residual: float = 0.0

    @property
    def dim(self):
        return self.field.dim

    def rhs(self, z):
        return np.asarray(self.field.rhs(0.0, z), dtype=float)

    def jac(self, z):
        return np.asarray(self.field.jacobian(0.0, z), dtype=float)

    def z0_prime(self, psi):
        """dz0/dpsi = F(z0)/beta0, exact via the orbit ODE."""
        z = self.z0(psi)
        if z.ndim == 1:
            return self.rhs(z) / self.beta0
        return np.stack([self.rhs(zi) for zi in z]) / self.beta0

    def z0_second(self, psi):
        """d^2 z0/dpsi^2 = J_F(z0) z0'/beta0."""
        z = self.z0(psi)
        if z.ndim == 1:
            return self.jac(z) @ self.rhs(z) / self.beta0**2
        return np.stack([self.jac(zi) @ self.rhs(zi) for zi in z]) / self.beta0**2

    def x0(self, psi):
        z = self.z0(psi)
        return z[..., : self.dim - 1]

    def r0(self, psi):
        z = self.z0(psi)
        return z[..., self.dim - 1]

    @property
    def r_min(self):
        return float(np.min(self.z0(np.linspace(0, TWO_PI, 1024))[:, -1]))


def orbit_from_point(field: VectorField, z_point, T, model=None,
                     rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> PeriodicOrbit:
    """Build the dense psi-parametrized orbit through z_point with period T."""
    beta0 = TWO_PI / T
    dense = integrate_adaptive(_scaled_field(field, beta0), np.asarray(z_point, dtype=float),
                               (0.0, TWO_PI), rtol=rtol, atol=atol)
    closure = float(np.linalg.norm(dense.eval(TWO_PI) - dense.eval(0.0)))
    return PeriodicOrbit(
        field=field, T=float(T), beta0=beta0, z0=PeriodicInterpolant(dense),
        anchor_state=np.asarray(z_point, dtype=float), model=model,
        closure_residual=closure,
    )


def _anchor_at_max_r(field, z_start, T, model, rtol, atol):
    """Shift the orbit's time origin to the global max of the last component (r)."""
    dense = integrate_adaptive(field, z_start, (0.0, T), rtol=rtol, atol=atol)
    ts = np.linspace(0.0, T, 2048, endpoint=False)
    samples = dense.eval(ts)
    r = samples[:, -1]
    rmax = r.max()
    near = np.flatnonzero(r > rmax - 1e-9 * max(1.0, abs(rmax)))
    # ties broken by smallest first x coordinate
    i_best = near[np.argmin(samples[near, 0])]

    # polish: dr/dt = 0 via sign change of the r-component of F around the max
    def drdt(t):
        return field.rhs(t, dense.eval(t))[-1]

    dt = T / 2048
    t_lo, t_hi = ts[i_best] - dt, ts[i_best] + dt
    f_lo, f_hi = drdt(max(t_lo, 0.0)), drdt(min(t_hi, T))
    t_star = ts[i_best]
    if f_lo > 0 > f_hi:
        from scipy.optimize import brentq

        t_star = brentq(drdt, max(t_lo, 0.0), min(t_hi, T), xtol=1e-13)
    return dense.eval(t_star)


def find_periodic_orbit(target, guess, tol=1e-10, max_iter=50,
                        rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> PeriodicOrbit:
    """Single-shooting Newton for an isolated cycle of a planar-type field.

    target is a ModelDef (its unforced (x, r) subsystem is used) or a raw
    VectorField with jacobian. guess = (z_init, T_init). Unknowns (z(0), T)
    with phase condition <F(z_init), z(0) - z_init> = 0; converged when
    ||z(T) - z(0)|| <= tol.
    """
    model = target if isinstance(target, ModelDef) else None
    field = planar_field(model) if model is not None else target
    z_init, T_init = guess
    z_init = np.asarray(z_init, dtype=float)
    d = field.dim

    c = np.asarray(field.rhs(0.0, z_init), dtype=float)  # phase-condition covector
    z, T = z_init.copy(), float(T_init)
    residual = np.inf
    for _ in range(max_iter):
        if not T > 0:
            raise NoConvergenceError(f"period iterate became nonpositive (T={T})",
                                     residual=residual)
        base, mat = integrate_with_matrix(field, z, np.eye(d), (0.0, T),
                                          rtol=rtol, atol=atol, mode="variational")
        zT = base.eval(T)
        M = mat.eval(T)
        R = np.concatenate((zT - z, [float(c @ (z - z_init))]))
        residual = float(np.linalg.norm(zT - z))
        if residual <= tol and abs(R[-1]) <= max(tol, 1e-9):
            break
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = M - np.eye(d)
        J[:d, d] = field.rhs(T, zT)
        J[d, :d] = c
        sing = np.linalg.svd(J, compute_uv=False)
        if sing[-1] < 1e-10 * max(sing[0], 1.0):
            raise DegenerateOrbitError(
                "singular shooting matrix: cycle is not isolated "
                f"(smallest singular value {sing[-1]:.2e})"
            )
        step = np.linalg.solve(J, -R)
        z = z + step[:d]
        T = T + step[d]
    else:
        raise NoConvergenceError(
            f"shooting Newton did not converge in {max_iter} iterations",
            residual=residual,
        )

    z_anchor = _anchor_at_max_r(field, z, T, model, rtol, atol)
    orbit = orbit_from_point(field, z_anchor, T, model=model, rtol=rtol, atol=atol)
    if model is not None and orbit.r_min <= 0:
        raise InvalidOrbitError(f"cycle reaches r <= 0 (min r = {orbit.r_min:.3e})")
    return orbit


def default_orbit_guess(model: ModelDef, t_transient=150.0, z_start=None,
                        rtol=1e-8, atol=1e-10):
    """Transient integration into the basin; returns (z_guess, T_guess)."""
    field = planar_field(model)
    if z_start is None:
        z_start = np.concatenate((0.3 * np.ones(model.n), [1.1]))
    dense = integrate_adaptive(field, np.asarray(z_start, dtype=float),
                               (0.0, t_transient), rtol=rtol, atol=atol)
    z_end = dense.eval(t_transient)
    # crude period estimate from successive maxima of the last component
    ts = np.linspace(0.7 * t_transient, t_transient, 4096)
    r = dense.eval(ts)[:, -1]
    peaks = np.flatnonzero((r[1:-1] > r[:-2]) & (r[1:-1] > r[2:])) + 1
    if len(peaks) >= 2:
        T_guess = float(np.mean(np.diff(ts[peaks])))
    else:
        T_guess = TWO_PI / np.sqrt(2.0)
    return z_end, T_guess


@dataclass(frozen=True)
class FloquetData:
    """Monodromy of the variational system over one period in psi, with multipliers."""

    monodromy: np.ndarray
    multipliers: np.ndarray
    trivial_multiplier_error: float
    hyperbolic: bool
    spectral_gap: float


def compute_floquet(target, orbit: PeriodicOrbit, rtol=DEFAULT_RTOL,
                    atol=DEFAULT_ATOL) -> FloquetData:
    """Integrate dz/dpsi = A(psi) z over [0, 2pi] with M(0) = I; eigendata of M(2pi)."""
    field_psi = _scaled_field(orbit.field, orbit.beta0)
    _, mat = integrate_with_matrix(field_psi, orbit.z0(0.0), np.eye(orbit.dim),
                                   (0.0, TWO_PI), rtol=rtol, atol=atol, mode="variational")
    M = mat.eval(TWO_PI)
    multipliers = np.linalg.eigvals(M)
    i_triv = int(np.argmin(np.abs(multipliers - 1.0)))
    triv_err = float(np.abs(multipliers[i_triv] - 1.0))
    others = np.abs(np.delete(multipliers, i_triv))
    simple = bool(np.all(np.abs(np.delete(multipliers, i_triv) - 1.0) > 1e-3))
    hyperbolic = bool(simple and np.all(others < 1.0) and triv_err < 1e-4)
    gap = float(others.max()) if len(others) else 0.0
    return FloquetData(
        monodromy=M, multipliers=multipliers, trivial_multiplier_error=triv_err,
        hyperbolic=hyperbolic, spectral_gap=gap,
    )


class AdjointOrbit:
    """Normalized periodic solution p(psi) of dp/dpsi = -A^T(psi) p."""

    def __init__(self, orbit: PeriodicOrbit, propagator, p0: np.ndarray,
                 normalization_residual: float):
        self.orbit = orbit
        self._prop = propagator  # MatrixDenseOutput over [0, 2pi]
        self.p0 = p0
        self.normalization_residual = normalization_residual

    def p(self, psi):
        W = self._prop.eval(np.mod(psi, TWO_PI))
        if W.ndim == 2:
            return W @ self.p0
        return W @ self.p0

    def p_prime(self, psi):
        """dp/dpsi = -A^T(psi) p(psi) with A = J_F(z0)/beta0."""
        psi_arr = np.atleast_1d(np.asarray(psi, dtype=float))
        pv = np.atleast_2d(self.p(psi_arr))
        z = np.atleast_2d(self.orbit.z0(psi_arr))
        out = np.empty_like(pv)
        for i in range(len(psi_arr)):
            A = self.orbit.jac(z[i]) / self.orbit.beta0
            out[i] = -A.T @ pv[i]
        return out[0] if np.ndim(psi) == 0 else out


def compute_adjoint(target, orbit: PeriodicOrbit, floquet: FloquetData,
                    rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> AdjointOrbit:
    """Periodic adjoint solution normalized so that p(psi)^T z0'(psi) = 1."""
    if not floquet.hyperbolic:
        raise AssumptionViolationError(
            "adjoint requires a hyperbolic orbit (trivial multiplier simple, others inside "
            "the unit circle)"
        )
    MT = floquet.monodromy.T
    lam, vecs = np.linalg.eig(MT)
    order = np.argsort(np.abs(lam - 1.0))
    if len(order) > 1 and abs(lam[order[1]] - 1.0) < 1e-4:
        raise AssumptionViolationError(
            "eigenvalue 1 of the transposed monodromy is not simple: "
            f"cluster {lam[order[:2]]}"
        )
    v = vecs[:, order[0]]
    # rotate the complex phase away and insist on a real eigenvector
    v = v / v[np.argmax(np.abs(v))]
    if np.max(np.abs(v.imag)) > 1e-8:
        raise AssumptionViolationError("adjoint eigenvector is not real")
    v = v.real

    zp0 = orbit.z0_prime(0.0)
    scale = float(v @ zp0)
    if abs(scale) < 1e-12:
        raise AssumptionViolationError("adjoint eigenvector orthogonal to the orbit tangent")
    p0 = v / scale

    field_psi = _scaled_field(orbit.field, orbit.beta0)
    _, prop = integrate_with_matrix(field_psi, orbit.z0(0.0), np.eye(orbit.dim),
                                    (0.0, TWO_PI), rtol=rtol, atol=atol, mode="adjoint")
    adj = AdjointOrbit(orbit, prop, p0, normalization_residual=np.nan)
    grid = np.linspace(0.0, TWO_PI, 512, endpoint=False)
    dots = np.einsum("ij,ij->i", adj.p(grid), orbit.z0_prime(grid))
    adj.normalization_residual = float(np.max(np.abs(dots - 1.0)))
    return adj


@dataclass(frozen=True)
class PhaseOffsets:
    """alpha0 = mean of Im h over the cycle; phi(psi) the periodic wave-phase offset."""

    alpha0: float
    phi: object  # callable psi -> phi(psi), 2pi-periodic
    orbit: PeriodicOrbit

    def y0(self, psi):
        """Torus section y0(psi) = r0(psi) exp(i phi(psi)) (global phase chosen 0)."""
        return self.orbit.r0(psi) * np.exp(1j * self.phi(psi))

    def y0_prime(self, psi):
        """dy0/dpsi = (r0' + i r0 phi') exp(i phi)."""
        zp = self.orbit.z0_prime(psi)
        r0p = zp[..., -1]
        x0 = self.orbit.x0(psi)
        if x0.ndim == 1:
            imh = self.orbit.model.h(x0).imag
        else:
            imh = np.array([self.orbit.model.h(xi).imag for xi in x0])
        phip = (imh - self.alpha0) / self.orbit.beta0
        return (r0p + 1j * self.orbit.r0(psi) * phip) * np.exp(1j * self.phi(psi))


def compute_phase_offsets(model: ModelDef, orbit: PeriodicOrbit,
                          n_panels=64, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> PhaseOffsets:
    """alpha0 by quadrature; phi(psi) = (1/beta0) int_0^psi [Im h(x0) - alpha0] dxi."""

    def imh(psis):
        return np.array([model.h(orbit.x0(p)).imag for p in np.atleast_1d(psis)])

    pts, wts = gl_points(0.0, TWO_PI, n_panels)
    alpha0 = float(np.dot(wts, imh(pts))) / TWO_PI

    phi_field = VectorField(1, lambda psi, y: np.array(
        [(model.h(orbit.x0(psi)).imag - alpha0) / orbit.beta0]))
    dense = integrate_adaptive(phi_field, np.zeros(1), (0.0, TWO_PI), rtol=rtol, atol=atol)

    def phi(psi):
        val = dense.eval(np.mod(psi, TWO_PI))
        return val[..., 0]

    return PhaseOffsets(alpha0=alpha0, phi=phi, orbit=orbit)


def trace_integral(orbit: PeriodicOrbit, n_panels=64):
    """int_0^{2pi} tr A(psi) dpsi with A = J_F(z0)/beta0 (Liouville oracle input)."""
    pts, wts = gl_points(0.0, TWO_PI, n_panels)
    traces = np.array([np.trace(orbit.jac(orbit.z0(p))) for p in pts]) / orbit.beta0
    return float(np.dot(wts, traces))
