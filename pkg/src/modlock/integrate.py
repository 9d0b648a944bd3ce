"""Adaptive ODE integration with dense output, plus co-propagated matrix equations.

Backed by scipy's embedded Dormand-Prince RK45 pair (free quartic interpolant).
Matrix (variational / adjoint) propagation flattens the matrix into one
augmented state vector so the base trajectory and the matrix share the same
step sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ContractViolationError, IntegrationFailureError, InvalidFieldError

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-11
SWEEP_RTOL = 1e-7


@dataclass(frozen=True)
class VectorField:
    """Right-hand side of an autonomous or time-dependent ODE system.

    rhs maps (t, y) -> dy/dt with len(y) == dim; the optional jacobian maps
    (t, y) -> (dim, dim).
    """

    dim: int
    rhs: Callable
    jacobian: Optional[Callable] = None


class DenseOutput:
    """Continuous trajectory on [t_start, t_end]: exact at knots, interpolated between."""

    def __init__(self, knots, states, interpolant, order=4):
        self.knots = np.asarray(knots, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.t_start = float(self.knots[0])
        self.t_end = float(self.knots[-1])
        self.order = order
        self._interpolant = interpolant

    def eval(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.t_start, self.t_end
        pad = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(t_arr < lo - pad) or np.any(t_arr > hi + pad):
            raise ValueError(f"evaluation time outside [{lo}, {hi}]")
        t_clip = np.clip(t_arr, lo, hi)
        if self._interpolant is None:
            out = np.repeat(self.states[:1], len(t_arr), axis=0)
        else:
            out = np.asarray(self._interpolant(t_clip)).T.copy()
        # snap exact knot hits to the stored states
        pos = np.searchsorted(self.knots, t_arr)
        hit = pos < len(self.knots)
        hit[hit] = self.knots[pos[hit]] == t_arr[hit]
        if np.any(hit):
            out[hit] = self.states[pos[hit]]
        if np.isscalar(t) or np.ndim(t) == 0:
            return out[0]
        return out

    __call__ = eval


class MatrixDenseOutput:
    """Matrix-valued dense output; eval(t) returns (dim, dim) or (m, dim, dim)."""

    def __init__(self, dense: DenseOutput, dim: int):
        self._dense = dense
        self.dim = dim
        self.knots = dense.knots

    @property
    def t_start(self):
        return self._dense.t_start

    @property
    def t_end(self):
        return self._dense.t_end

    def eval(self, t):
        flat = self._dense.eval(t)
        if flat.ndim == 1:
            return flat.reshape(self.dim, self.dim)
        return flat.reshape(len(flat), self.dim, self.dim)

    __call__ = eval


def _guard(rhs):
    def guarded(t, y):
        dy = np.asarray(rhs(t, y), dtype=float)
        if not np.all(np.isfinite(dy)):
            raise InvalidFieldError(f"non-finite right-hand side at t={t}")
        return dy

    return guarded


def _run(rhs, y0, t0, t1, rtol, atol, max_step):
    sol = solve_ivp(
        _guard(rhs),
        (t0, t1),
        np.asarray(y0, dtype=float),
        method="RK45",
        rtol=rtol,
        atol=atol,
        dense_output=True,
        max_step=max_step,
    )
    if sol.status == -1:
        raise IntegrationFailureError(
            f"integration failed at t={sol.t[-1]}: {sol.message}", t_last=float(sol.t[-1])
        )
    return sol


def integrate_adaptive(field: VectorField, y0, span, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL,
                       max_step=np.inf) -> DenseOutput:
    """Integrate field over span=(t0, t1), t1 >= t0, returning dense output."""
    t0, t1 = float(span[0]), float(span[1])
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (field.dim,):
        raise ContractViolationError(f"y0 has shape {y0.shape}, expected ({field.dim},)")
    if rtol <= 0 or atol <= 0:
        raise ContractViolationError("rtol and atol must be positive")
    if t1 < t0:
        raise ContractViolationError("backward spans are not supported")
    if t1 == t0:
        return DenseOutput([t0], [y0], None)
    sol = _run(field.rhs, y0, t0, t1, rtol, atol, max_step)
    return DenseOutput(sol.t, sol.y.T, sol.sol)


def integrate_with_matrix(field: VectorField, y0, M0, span, rtol=DEFAULT_RTOL,
                          atol=DEFAULT_ATOL, mode="variational", max_step=np.inf):
    """Co-integrate the base trajectory with Mdot = J M (variational) or -J^T M (adjoint).

    Returns (base DenseOutput, MatrixDenseOutput) sharing one step sequence.
    """
    if field.jacobian is None:
        raise ContractViolationError("integrate_with_matrix requires field.jacobian")
    if mode not in ("variational", "adjoint"):
        raise ContractViolationError(f"unknown mode {mode!r}")
    d = field.dim
    y0 = np.asarray(y0, dtype=float)
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != (d, d):
        raise ContractViolationError(f"M0 has shape {M0.shape}, expected ({d}, {d})")
    t0, t1 = float(span[0]), float(span[1])
    if t1 < t0:
        raise ContractViolationError("backward spans are not supported")

    def rhs_aug(t, s):
        y = s[:d]
        M = s[d:].reshape(d, d)
        dy = np.asarray(field.rhs(t, y), dtype=float)
        J = np.asarray(field.jacobian(t, y), dtype=float)
        dM = J @ M if mode == "variational" else -J.T @ M
        return np.concatenate((dy, dM.ravel()))

    s0 = np.concatenate((y0, M0.ravel()))
    if t1 == t0:
        base = DenseOutput([t0], [y0], None)
        mat = MatrixDenseOutput(DenseOutput([t0], [M0.ravel()], None), d)
        return base, mat
    sol = _run(rhs_aug, s0, t0, t1, rtol, atol, max_step)

    base_interp = _Slice(sol.sol, 0, d)
    mat_interp = _Slice(sol.sol, d, d + d * d)
    base = DenseOutput(sol.t, sol.y[:d].T, base_interp)
    mat = MatrixDenseOutput(DenseOutput(sol.t, sol.y[d:].T, mat_interp), d)
    return base, mat


class _Slice:
    """Component slice of a vector-valued interpolant."""

    def __init__(self, sol, lo, hi):
        self._sol = sol
        self._lo = lo
        self._hi = hi

    def __call__(self, t):
        return self._sol(t)[self._lo:self._hi]


def check_jacobian(field: VectorField, t, y, tol=1e-6, h=1e-7):
    """Finite-difference consistency check of field.jacobian at one point.

    Returns the max abs deviation, scaled by max(1, ||J||).
    """
    y = np.asarray(y, dtype=float)
    J = np.asarray(field.jacobian(t, y), dtype=float)
    J_fd = np.empty_like(J)
    for j in range(field.dim):
        e = np.zeros(field.dim)
        e[j] = h
        J_fd[:, j] = (np.asarray(field.rhs(t, y + e)) - np.asarray(field.rhs(t, y - e))) / (2 * h)
    scale = max(1.0, np.max(np.abs(J)))
    dev = np.max(np.abs(J - J_fd)) / scale
    return dev, dev <= tol
