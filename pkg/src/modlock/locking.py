"""Locking function G(psi), its critical structure, locking-region membership,
boundary cross-sections, and the averaged phase dynamics psi' = mu^2 (G(psi) - Delta).

G is the circular cross-correlation of q(s) = p_x(s)^T g(x0(s)) with the forcing
intensity |a|^2:  G(psi) = (1/2pi) int_0^{2pi} q(xi + psi) |a(xi)|^2 dxi.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import BoundUnavailableError, ContractViolationError, NondegeneracyError
from .integrate import DEFAULT_ATOL, DEFAULT_RTOL, VectorField, integrate_adaptive
from .model import ForcingProfile
from .orbit import AdjointOrbit, PeriodicOrbit
from .quadrature import gl_points

logger = logging.getLogger("modlock.locking")

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SingularPoint:
    theta: float
    value: float
    curvature: float  # G'' at theta


@dataclass(frozen=True)
class LockingFunction:
    """Sampled G with analytic G' on a uniform grid, plus critical-point data."""

    psi: np.ndarray          # uniform grid on [0, 2pi), size >= 256
    G: np.ndarray
    Gp: np.ndarray
    beta0: float
    G_minus: float
    G_plus: float
    singular_points: tuple = ()
    degenerate: bool = False
    _exact: Optional[object] = field(default=None, repr=False, compare=False)
    _spline: object = field(default=None, repr=False, compare=False)
    _spline_p: object = field(default=None, repr=False, compare=False)

    @staticmethod
    def from_samples(psi, G, Gp, beta0, exact=None):
        psi = np.asarray(psi, dtype=float)
        G = np.asarray(G, dtype=float)
        Gp = np.asarray(Gp, dtype=float)
        sp = _periodic_spline(psi, G)
        spp = _periodic_spline(psi, Gp)
        return LockingFunction(
            psi=psi, G=G, Gp=Gp, beta0=float(beta0),
            G_minus=float(G.min()), G_plus=float(G.max()),
            _exact=exact, _spline=sp, _spline_p=spp,
        )

    @property
    def S(self):
        """Set of singular values {G(theta_j)}."""
        return np.array([s.value for s in self.singular_points])

    @property
    def n_pairs(self):
        return len(self.singular_points) // 2

    def eval(self, psi):
        return self._spline(np.mod(psi, TWO_PI))

    def eval_prime(self, psi):
        return self._spline_p(np.mod(psi, TWO_PI))

    def eval_second(self, psi):
        return self._spline_p(np.mod(psi, TWO_PI), 1)

    __call__ = eval


def _periodic_spline(psi, vals):
    x = np.concatenate((psi, [psi[0] + TWO_PI]))
    y = np.concatenate((vals, [vals[0]]))
    return CubicSpline(x, y, bc_type="periodic")


class _ExactG:
    """Quadrature evaluator for G and G' at arbitrary psi (kept for root polishing).

    The integrand q(s) = p_x(s)^T g(x0(s)) and its analytic derivative are sampled
    once on a fine uniform table and interpolated at the Gauss-Legendre nodes
    (Hermite for q with the exact q'; periodic cubic spline for q'): interpolation
    error ~1e-13, far below the quadrature target.
    """

    TABLE_SIZE = 4096

    def __init__(self, orbit: PeriodicOrbit, adjoint: AdjointOrbit,
                 forcing: ForcingProfile, n_quad: int):
        self.orbit = orbit
        self.adjoint = adjoint
        self.forcing = forcing
        n_panels = max(8, int(np.ceil(n_quad / 8)))
        self.xi, self.w = gl_points(0.0, TWO_PI, n_panels)
        self.wa = self.w * forcing.intensity(self.xi) / TWO_PI
        s_tab = np.linspace(0.0, TWO_PI, self.TABLE_SIZE, endpoint=False)
        q_tab, qp_tab = self._q_qp_direct(s_tab)
        self._h_tab = TWO_PI / self.TABLE_SIZE
        self._q_tab = q_tab
        self._qp_tab = qp_tab
        self._qp_spline = _periodic_spline(s_tab, qp_tab)

    def _q_qp_direct(self, s):
        """q(s) and q'(s) from the orbit/adjoint interpolants and model derivatives."""
        s = np.mod(np.asarray(s, dtype=float), TWO_PI)
        orbit = self.orbit
        n = orbit.dim - 1
        p = np.atleast_2d(self.adjoint.p(s))
        z = np.atleast_2d(orbit.z0(s))
        q = np.empty(len(s))
        qp = np.empty(len(s))
        beta0 = orbit.beta0
        model = orbit.model
        for i in range(len(s)):
            x = z[i, :n]
            gx = np.asarray(model.g(x), dtype=float)
            px = p[i, :n]
            q[i] = px @ gx
            A = orbit.jac(z[i]) / beta0
            pp = -(A.T @ p[i])
            x0p = orbit.rhs(z[i])[:n] / beta0
            qp[i] = pp[:n] @ gx + px @ (np.asarray(model.dg(x), dtype=float) @ x0p)
        return q, qp

    def _q_qp(self, s):
        s = np.mod(np.asarray(s, dtype=float), TWO_PI)
        f = s / self._h_tab
        i0 = np.minimum(f.astype(int), self.TABLE_SIZE - 1)
        i1 = (i0 + 1) % self.TABLE_SIZE
        u = f - i0
        h = self._h_tab
        u2, u3 = u * u, u * u * u
        q = ((2 * u3 - 3 * u2 + 1) * self._q_tab[i0]
             + (u3 - 2 * u2 + u) * h * self._qp_tab[i0]
             + (-2 * u3 + 3 * u2) * self._q_tab[i1]
             + (u3 - u2) * h * self._qp_tab[i1])
        return q, self._qp_spline(s)

    def G(self, psi):
        psi_arr = np.atleast_1d(np.asarray(psi, dtype=float))
        pts = (self.xi[None, :] + psi_arr[:, None]).ravel()
        q, _ = self._q_qp(pts)
        vals = q.reshape(len(psi_arr), -1) @ self.wa
        return vals[0] if np.ndim(psi) == 0 else vals

    def Gp(self, psi):
        psi_arr = np.atleast_1d(np.asarray(psi, dtype=float))
        pts = (self.xi[None, :] + psi_arr[:, None]).ravel()
        _, qp = self._q_qp(pts)
        vals = qp.reshape(len(psi_arr), -1) @ self.wa
        return vals[0] if np.ndim(psi) == 0 else vals

    def both(self, psi):
        psi_arr = np.atleast_1d(np.asarray(psi, dtype=float))
        pts = (self.xi[None, :] + psi_arr[:, None]).ravel()
        q, qp = self._q_qp(pts)
        return q.reshape(len(psi_arr), -1) @ self.wa, qp.reshape(len(psi_arr), -1) @ self.wa


def compute_G(orbit: PeriodicOrbit, adjoint: AdjointOrbit, forcing: ForcingProfile,
              n_grid=512, n_quad=512) -> LockingFunction:
    """Sample G and its analytic derivative on a uniform grid of size n_grid.

    The xi-integral uses composite Gauss-Legendre with ~n_quad nodes per period;
    G' differentiates the integrand via p' = -A^T p / 1 and x0' (no finite
    differences of G).
    """
    if adjoint.orbit is not orbit and abs(adjoint.orbit.T - orbit.T) > 1e-9:
        raise ContractViolationError("adjoint was computed for a different orbit")
    if not np.isfinite(adjoint.normalization_residual) or adjoint.normalization_residual > 1e-5:
        raise ContractViolationError(
            f"adjoint normalization residual too large: {adjoint.normalization_residual:.3e}"
        )
    if n_grid < 256:
        raise ContractViolationError("n_grid must be at least 256")
    exact = _ExactG(orbit, adjoint, forcing, n_quad)
    psi = np.linspace(0.0, TWO_PI, n_grid, endpoint=False)
    G, Gp = exact.both(psi)
    return LockingFunction.from_samples(psi, G, Gp, orbit.beta0, exact=exact)


def find_singular_points(lf: LockingFunction, nondeg_tol=None) -> LockingFunction:
    """Locate all roots of G' in [0, 2pi), check nondegeneracy, assemble S.

    Roots are bracketed by sign changes on the sample grid and polished to
    ~1e-10 with brentq on the analytic G' when available (spline otherwise).
    """
    scale = float(np.max(np.abs(lf.G))) if len(lf.G) else 0.0
    if nondeg_tol is None:
        nondeg_tol = 1e-4 * scale
    gp_fun = lf._exact.Gp if lf._exact is not None else lf.eval_prime

    flat = (np.max(lf.G) - np.min(lf.G) < 1e-9 * max(1.0, scale)
            or np.max(np.abs(lf.Gp)) < 1e-9 * max(1.0, scale))
    if flat:
        warnings.warn("locking function is (numerically) constant: degenerate G, "
                      "no singular structure", stacklevel=2)
        return replace(lf, singular_points=(), degenerate=True,
                       G_minus=float(np.min(lf.G)), G_plus=float(np.max(lf.G)))

    gp = lf.Gp
    roots = []
    n = len(lf.psi)
    h = TWO_PI / n
    for i in range(n):
        a, b = lf.psi[i], lf.psi[i] + h
        fa, fb = gp[i], gp[(i + 1) % n]
        if fa == 0.0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(brentq(lambda t: float(gp_fun(t)), a, b, xtol=1e-12))
    roots = sorted(np.mod(r, TWO_PI) for r in roots)
    dedup = []
    for r in roots:
        if not dedup or (r - dedup[-1]) > 1e-8:
            dedup.append(r)
    if len(dedup) >= 2 and (dedup[0] + TWO_PI - dedup[-1]) <= 1e-8:
        dedup.pop()

    fd = 1e-5
    points = []
    for theta in dedup:
        curv = float((gp_fun(theta + fd) - gp_fun(theta - fd)) / (2 * fd))
        if abs(curv) <= nondeg_tol:
            raise NondegeneracyError(
                f"critical point at psi={theta:.8f} is degenerate: |G''|={abs(curv):.3e} "
                f"<= tol {nondeg_tol:.3e}"
            )
        value = float(lf._exact.G(theta)) if lf._exact is not None else float(lf.eval(theta))
        points.append(SingularPoint(theta=float(theta), value=value, curvature=curv))

    if len(points) % 2 != 0:
        raise NondegeneracyError(
            f"odd number of critical points located ({len(points)}): refine the grid"
        )
    for i in range(len(points)):
        if points[i].curvature * points[(i + 1) % len(points)].curvature >= 0:
            raise NondegeneracyError("critical points do not alternate max/min")

    values = [p.value for p in points]
    g_minus = min(values) if values else float(np.min(lf.G))
    g_plus = max(values) if values else float(np.max(lf.G))
    return replace(lf, singular_points=tuple(points), G_minus=g_minus, G_plus=g_plus)


@dataclass(frozen=True)
class RegionSpec:
    """Knobs of the locking-region conditions: amplitude window and singular margin.

    The amplitude window is mu_star_low / alpha < gamma < mu_star_high * alpha;
    margin is the distance condition (17) keeps from the singular values. The
    underlying theory asserts these constants exist but fixes no values; margin
    None resolves to 0.05 * (G_plus - G_minus).
    """

    mu_star_low: float = 0.5
    mu_star_high: float = 0.1
    margin: Optional[float] = None

    def __post_init__(self):
        if not (self.mu_star_low > 0 and self.mu_star_high > 0):
            raise ContractViolationError("amplitude-window constants must be positive")
        if self.margin is not None and not self.margin > 0:
            raise ContractViolationError("margin must be positive")

    def resolved_margin(self, lf: LockingFunction):
        if self.margin is not None:
            return self.margin
        return 0.05 * (lf.G_plus - lf.G_minus)


@dataclass(frozen=True)
class Verdict:
    inside: bool
    reasons: tuple
    delta: float

    def __bool__(self):
        return self.inside


def in_locking_region(params, lf: LockingFunction, spec: RegionSpec) -> Verdict:
    """Evaluate conditions (amplitude window, detuning window, singular margin)."""
    reasons = []
    alpha, gamma = params.alpha, params.gamma
    window_ok = gamma > spec.mu_star_low / alpha and gamma < spec.mu_star_high * alpha
    if not window_ok:
        reasons.append("amplitude-window")
    if gamma <= 0:
        return Verdict(False, tuple(reasons), np.nan)
    if params.beta is None:
        raise ContractViolationError("params.beta must be set for a region verdict")
    delta = (alpha**2 / gamma**2) * (params.beta - lf.beta0)
    if not (lf.G_minus < delta < lf.G_plus):
        reasons.append("detuning")
    margin = spec.resolved_margin(lf)
    if len(lf.S) and np.min(np.abs(lf.S - delta)) <= margin:
        reasons.append("singular-margin")
    return Verdict(not reasons, tuple(reasons), float(delta))


@dataclass(frozen=True)
class AlphaSection:
    alpha: float


@dataclass(frozen=True)
class BetaSection:
    beta: float


@dataclass(frozen=True)
class Polyline:
    label: str
    kind: str  # "sqrt" | "line"
    u: np.ndarray  # beta (alpha_const) or 1/alpha (beta_const)
    gamma: np.ndarray


@dataclass(frozen=True)
class BoundarySection:
    polylines: tuple
    diagnostic: Optional[str] = None


def _gtilde_candidates(lf: LockingFunction, margin):
    """Shifted critical values bounding the detuning window, labeled per branch."""
    cands = [("Gminus+eps", lf.G_minus + margin), ("Gplus-eps", lf.G_plus - margin)]
    interior = [p.value for p in lf.singular_points
                if p.value not in (lf.G_minus, lf.G_plus)]
    for i, s in enumerate(sorted(interior), start=1):
        cands.append((f"S{i}-eps", s - margin))
        cands.append((f"S{i}+eps", s + margin))
    return cands


def boundary_curves(lf: LockingFunction, spec: RegionSpec, section, grid) -> BoundarySection:
    """Emit the square-root boundary branches and the amplitude-window lines.

    alpha_const: gamma(beta) = alpha sqrt((beta - beta0)/Gtilde) over the beta grid;
    beta_const: the corresponding curves in the (1/alpha, gamma) plane over the
    1/alpha grid. Branches are clipped to the amplitude window.
    """
    if not lf.singular_points and not lf.degenerate:
        raise ContractViolationError("boundary_curves needs singular data: "
                                     "run find_singular_points first")
    margin = spec.resolved_margin(lf)
    grid = np.asarray(grid, dtype=float)
    polylines = []
    cands = _gtilde_candidates(lf, margin)

    if isinstance(section, AlphaSection):
        alpha = section.alpha
        g_lo, g_hi = spec.mu_star_low / alpha, spec.mu_star_high * alpha
        for label, gt in cands:
            if gt == 0:
                continue
            db = grid - lf.beta0
            mask = np.sign(db) == np.sign(gt)
            gamma = np.full_like(grid, np.nan)
            gamma[mask] = alpha * np.sqrt(db[mask] / gt)
            mask &= (gamma >= g_lo) & (gamma <= g_hi)
            if np.any(mask):
                polylines.append(Polyline(label, "sqrt", grid[mask], gamma[mask]))
        polylines.append(Polyline("window-low", "line", grid, np.full_like(grid, g_lo)))
        polylines.append(Polyline("window-high", "line", grid, np.full_like(grid, g_hi)))
    elif isinstance(section, BetaSection):
        db = section.beta - lf.beta0
        nu = grid  # grid of 1/alpha
        for label, gt in cands:
            if gt == 0 or np.sign(db) != np.sign(gt):
                continue
            mu_branch = np.sqrt(db / gt)
            gamma = mu_branch / nu
            mask = (gamma >= spec.mu_star_low * nu) & (gamma <= spec.mu_star_high / nu)
            if np.any(mask):
                polylines.append(Polyline(label, "sqrt", nu[mask], gamma[mask]))
        polylines.append(Polyline("window-low", "line", nu, spec.mu_star_low * nu))
        polylines.append(Polyline("window-high", "line", nu, spec.mu_star_high / nu))
    else:
        raise ContractViolationError(f"unknown section spec {section!r}")

    diagnostic = None
    if not any(p.kind == "sqrt" for p in polylines):
        diagnostic = ("empty section: no square-root branch intersects the amplitude "
                      "window on the requested grid")
        logger.warning(diagnostic)
    return BoundarySection(tuple(polylines), diagnostic)


@dataclass(frozen=True)
class Equilibrium:
    theta: float
    stable: bool
    slope: float  # G'(theta)


@dataclass(frozen=True)
class AveragedPhaseModel:
    """Averaged relative-phase dynamics psi' = mu^2 (G(psi) - Delta)."""

    Delta: float
    G: LockingFunction
    equilibria: tuple
    regime: str  # "locking" | "drifting"

    def stable_equilibria(self):
        return tuple(e for e in self.equilibria if e.stable)

    def unstable_equilibria(self):
        return tuple(e for e in self.equilibria if not e.stable)


def averaged_equilibria(Delta, lf: LockingFunction, ill_cond_tol=None) -> AveragedPhaseModel:
    """All solutions of G(theta) = Delta with stability from the sign of G'."""
    Delta = float(Delta)
    if ill_cond_tol is None:
        ill_cond_tol = 1e-6 * max(lf.G_plus - lf.G_minus, 1e-12)
    if len(lf.S) and np.min(np.abs(lf.S - Delta)) < ill_cond_tol:
        warnings.warn(
            f"Delta={Delta} is within {ill_cond_tol:.2e} of a singular value: "
            "equilibria are ill-conditioned", stacklevel=2)
    if not (lf.G_minus < Delta < lf.G_plus):
        return AveragedPhaseModel(Delta, lf, (), "drifting")

    g_fun = lf._exact.G if lf._exact is not None else lf.eval
    vals = lf.G - Delta
    n = len(lf.psi)
    h = TWO_PI / n
    thetas = []
    for i in range(n):
        fa, fb = vals[i], vals[(i + 1) % n]
        if fa == 0.0:
            thetas.append(lf.psi[i])
        elif fa * fb < 0:
            thetas.append(brentq(lambda t: float(g_fun(t)) - Delta,
                                 lf.psi[i], lf.psi[i] + h, xtol=1e-12))
    thetas = sorted(np.mod(t, TWO_PI) for t in thetas)

    eqs = []
    for t in thetas:
        slope = float(lf._exact.Gp(t)) if lf._exact is not None else float(lf.eval_prime(t))
        eqs.append(Equilibrium(theta=float(t), stable=slope < 0, slope=slope))
    if len(eqs) % 2 != 0:
        raise ContractViolationError(f"odd number of equilibria located ({len(eqs)})")
    for i in range(len(eqs)):
        if eqs[i].stable == eqs[(i + 1) % len(eqs)].stable:
            raise ContractViolationError("equilibria do not alternate in stability")
    # index so the first equilibrium is unstable (G' > 0), matching the pairing
    # (theta_{2k-1}, theta_{2k}) = (unstable, stable)
    if eqs and eqs[0].stable:
        eqs = eqs[1:] + eqs[:1]
    return AveragedPhaseModel(Delta, lf, tuple(eqs), "locking")


def integrate_averaged_phase(apm: AveragedPhaseModel, mu, psi0, horizon,
                             rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
    """Integrate psi' = mu^2 (G(psi) - Delta); G from the periodic cubic interpolant."""
    if not mu > 0:
        raise ContractViolationError("mu must be positive")
    lf, Delta = apm.G, apm.Delta
    fld = VectorField(1, lambda t, y: np.array([mu**2 * (float(lf.eval(y[0])) - Delta)]))
    return integrate_adaptive(fld, np.array([float(psi0)]), (0.0, float(horizon)),
                              rtol=rtol, atol=atol)


def transit_time_bound(lf: LockingFunction, Delta, delta, mu, m0=0.0):
    """Upper bound 2pi / (mu^2 (m - m0)) for the unstable -> stable passage.

    m is the minimum of G - Delta over the ascending intervals
    [theta_{2k-1} + delta, theta_{2k} - delta]; the bound is uniform over k.
    """
    if not (delta > 0 and mu > 0):
        raise ContractViolationError("delta and mu must be positive")
    apm = averaged_equilibria(Delta, lf)
    if apm.regime != "locking" or not apm.equilibria:
        raise BoundUnavailableError("no averaged equilibria: drifting regime")
    m = np.inf
    eqs = apm.equilibria
    for k in range(0, len(eqs), 2):
        theta_u = eqs[k].theta
        theta_s = eqs[(k + 1) % len(eqs)].theta
        if theta_s < theta_u:  # ascending interval straddles the 2pi wrap
            theta_s += TWO_PI
        lo, hi = theta_u + delta, theta_s - delta
        if hi <= lo:
            raise BoundUnavailableError(f"delta={delta} empties the interval at pair {k // 2}")
        seg = np.linspace(lo, hi, 2048)
        m = min(m, float(np.min(lf.eval(seg) - apm.Delta)))
    if m <= m0:
        raise BoundUnavailableError(f"margin m={m:.3e} does not exceed m0={m0:.3e}")
    return TWO_PI / (mu**2 * (m - m0))
