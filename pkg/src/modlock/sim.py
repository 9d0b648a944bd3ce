"""Direct simulation of the full forced system, slow-phase extraction, lock
classification, and quantitative validation of the averaged phase prediction."""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fastsim
from .errors import (
    BracketFailureError,
    ContractViolationError,
    DomainError,
    IntegrationFailureError,
)
from .integrate import SWEEP_RTOL, VectorField, integrate_adaptive
from .locking import (
    AveragedPhaseModel,
    LockingFunction,
    RegionSpec,
    averaged_equilibria,
    in_locking_region,
)
from .model import (
    ControlParams,
    FullState,
    ModelDef,
    remove_forcing_oscillation,
    restore_forcing_oscillation,
)
from .orbit import PeriodicOrbit, PhaseOffsets

logger = logging.getLogger("modlock.sim")

TWO_PI = 2.0 * np.pi

LOCK_BAND_DEFAULT = 0.15
TAIL_FRACTION_DEFAULT = 0.5


@dataclass(frozen=True)
class CycleTable:
    """Uniform-psi table of the cycle and its first two psi-derivatives."""

    z: np.ndarray    # (N, d)
    zp: np.ndarray
    zpp: np.ndarray

    @property
    def size(self):
        return self.z.shape[0]


def build_cycle_table(orbit: PeriodicOrbit, n=4096) -> CycleTable:
    psi = np.linspace(0.0, TWO_PI, n, endpoint=False)
    z = orbit.z0(psi)
    zp = orbit.z0_prime(psi)
    zpp = orbit.z0_second(psi)
    return CycleTable(z=z, zp=zp, zpp=zpp)


def torus_init(offsets: PhaseOffsets, psi, normal_offset=0.0) -> FullState:
    """Initial condition on the invariant torus at orbit phase psi.

    normal_offset displaces (x, r) along the outward normal of the cycle in
    the (x, r) plane (used to exercise the attraction of the torus).
    """
    orbit = offsets.orbit
    z = orbit.z0(psi)
    if normal_offset != 0.0:
        tangent = orbit.z0_prime(psi)
        tangent = tangent / np.linalg.norm(tangent)
        normal = np.array([-tangent[-1], tangent[0]]) if orbit.dim == 2 else None
        if normal is None:
            raise DomainError("normal displacement implemented for planar cycles only")
        z = z + normal_offset * normal
    x = z[: orbit.dim - 1]
    r = z[orbit.dim - 1]
    return FullState(x, r * np.exp(1j * float(offsets.phi(psi))))


@dataclass(frozen=True)
class Trajectory:
    """Strided samples (t, x(t), y(t)) of the full forced system."""

    t: np.ndarray
    x: np.ndarray        # (m, n)
    y: np.ndarray        # (m,) complex
    params: ControlParams


def full_field(model: ModelDef, params: ControlParams) -> VectorField:
    """The forced system as a real vector field on (x, Re y, Im y)."""
    n = model.n
    gamma, alpha = params.gamma, params.alpha
    beta = params.beta

    def rhs(t, v):
        x = v[:n]
        y = complex(v[n], v[n + 1])
        dy = model.h(x) * y
        if gamma > 0:
            dy = dy + gamma * np.exp(1j * alpha * t) * model.forcing.eval(beta * t)
        dx = model.f(x) + model.g(x) * abs(y) ** 2
        return np.concatenate((dx, [dy.real, dy.imag]))

    return VectorField(n + 2, rhs)


def default_stride(params: ControlParams, samples_per_period=32):
    if params.beta is None:
        raise DomainError("stride needs params.beta")
    return TWO_PI / (samples_per_period * params.beta)


def _deforced_init(model, params, t0, s: FullState):
    y1 = remove_forcing_oscillation(params, t0, s.y, model.forcing)
    return np.concatenate((s.x, [y1.real, y1.imag]))


def simulate_full(model: ModelDef, params: ControlParams, init: FullState, horizon,
                  rtol=SWEEP_RTOL, atol=1e-10, stride=None, backend="auto") -> Trajectory:
    """Simulate the forced system over [0, horizon] at the given output stride.

    backend "fast" integrates the exactly de-forced variable with the compiled
    stepper (available for built-in families); "generic" integrates the raw
    system with the adaptive library integrator; "auto" prefers fast.
    """
    if params.gamma > 0 and params.beta is None:
        raise DomainError("params.beta must be set when gamma > 0")
    if stride is None:
        stride = default_stride(params) if params.beta is not None else horizon / 4096
    m = max(2, int(np.floor(horizon / stride)) + 1)
    ts = np.arange(m) * stride
    ts[-1] = min(ts[-1], horizon)

    use_fast = backend == "fast" or (backend == "auto" and model.family in fastsim.KERNELS)
    n = model.n
    if use_fast:
        if model.family not in fastsim.KERNELS:
            raise ContractViolationError(f"no compiled kernel for family {model.family!r}")
        rhs, pack = fastsim.KERNELS[model.family]
        pars = pack(model, params)
        y0 = _deforced_init(model, params, 0.0, init)
        ys = np.empty((m, n + 2))
        ys[0] = y0
        status, t_end, _, _ = fastsim.dp45_stride(rhs, pars, 0.0, y0, 1e-4, ts[1:], ys[1:],
                                                  rtol, atol)
        if status != fastsim.STATUS_OK:
            raise IntegrationFailureError(
                f"compiled integration failed (status {status}) at t={t_end}", t_last=t_end)
        y1 = ys[:, n] + 1j * ys[:, n + 1]
        y = restore_forcing_oscillation(params, ts, y1, model.forcing)
    else:
        dense = integrate_adaptive(full_field(model, params),
                                   np.concatenate((init.x, [init.y.real, init.y.imag])),
                                   (0.0, horizon), rtol=rtol, atol=atol)
        vals = dense.eval(ts)
        ys = vals
        y = vals[:, n] + 1j * vals[:, n + 1]
    return Trajectory(t=ts, x=ys[:, :n].copy(), y=np.asarray(y), params=params)


class LeftNeighborhoodError(DomainError):
    """Trajectory left the projection neighborhood of the torus."""


def _global_phase_seed(table: CycleTable, z):
    d2 = np.sum((table.z - z[None, :]) ** 2, axis=1)
    return TWO_PI * np.argmin(d2) / table.size


def extract_phase(orbit: PeriodicOrbit, offsets: PhaseOffsets, model: ModelDef,
                  params: ControlParams, traj: Trajectory, delta_proj=0.4,
                  table: CycleTable | None = None):
    """Orbit-phase series from a trajectory: de-force y, project (x, |y1|) onto the
    cycle, Newton-polish, unwrap; returns (psi_hat, psi1_hat) with psi1 = psi - beta t.
    """
    if table is None:
        table = build_cycle_table(orbit)
    y1 = remove_forcing_oscillation(params, traj.t, traj.y, model.forcing)
    states = np.column_stack((traj.x, y1.real, y1.imag))
    z0 = np.concatenate((traj.x[0], [abs(y1[0])]))
    seed = _global_phase_seed(table, z0)
    beta = params.beta if params.beta is not None else orbit.beta0
    dt = float(traj.t[1] - traj.t[0]) if len(traj.t) > 1 else 0.0
    psi = np.empty(len(traj.t))
    dist = np.empty(len(traj.t))
    bad = fastsim.extract_phase_kernel(states, table.z, table.zp, table.zpp, seed,
                                       beta * dt, delta_proj, psi, dist)
    if bad >= 0:
        raise LeftNeighborhoodError(
            f"trajectory left the cycle neighborhood at t={traj.t[bad]:.6g} "
            f"(distance {dist[bad]:.3g} > {delta_proj})")
    psi1 = psi - beta * traj.t
    return psi, psi1


@dataclass(frozen=True)
class Classification:
    kind: str                   # "locked" | "drifting" | "indeterminate"
    theta_lock: float = np.nan  # circular mean of the tail, mod 2pi
    drift_rate: float = np.nan
    tail_range: float = np.nan
    tail_slope: float = np.nan
    nearest_equilibrium: Optional[float] = None
    parity: Optional[int] = None  # 0 = stable (even index), 1 = unstable

    @property
    def locked(self):
        return self.kind == "locked"


def _circular_mean(vals):
    return float(np.mod(np.angle(np.mean(np.exp(1j * vals))), TWO_PI))


def classify_locking(t, psi1, tail_fraction=TAIL_FRACTION_DEFAULT,
                     lock_band=LOCK_BAND_DEFAULT, drift_threshold=None,
                     equilibria=None) -> Classification:
    """Locked / drifting / indeterminate verdict for a relative-phase series.

    Locked: tail oscillation range <= lock_band and |tail slope| <= drift_threshold.
    Drifting: total change >= 2pi with consistent sign. Otherwise indeterminate.
    """
    t = np.asarray(t, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    if len(psi1) < 1000:
        return Classification("indeterminate")
    total = psi1[-1] - psi1[0]
    duration = t[-1] - t[0]
    rate = total / duration if duration > 0 else np.nan

    i0 = int(len(psi1) * (1.0 - tail_fraction))
    tail_t, tail = t[i0:], psi1[i0:]
    tail_range = float(tail.max() - tail.min())
    slope = float(np.polyfit(tail_t - tail_t[0], tail, 1)[0])
    if drift_threshold is None:
        drift_threshold = max(2.0 * lock_band / max(duration * tail_fraction, 1e-300), 1e-300)

    if tail_range <= lock_band and abs(slope) <= drift_threshold:
        theta = _circular_mean(np.mod(tail, TWO_PI))
        nearest, parity = None, None
        if equilibria:
            diffs = [abs(np.angle(np.exp(1j * (theta - e.theta)))) for e in equilibria]
            k = int(np.argmin(diffs))
            nearest, parity = equilibria[k].theta, (0 if equilibria[k].stable else 1)
        return Classification("locked", theta_lock=theta, drift_rate=slope,
                              tail_range=tail_range, tail_slope=slope,
                              nearest_equilibrium=nearest, parity=parity)

    if abs(total) >= TWO_PI:
        nseg = 8
        seg = np.array_split(psi1, nseg)
        seg_changes = np.array([s[-1] - s[0] for s in seg])
        if np.sum(np.sign(seg_changes) == np.sign(total)) >= nseg - 1:
            return Classification("drifting", drift_rate=rate, tail_range=tail_range,
                                  tail_slope=slope)
    return Classification("indeterminate", drift_rate=rate, tail_range=tail_range,
                          tail_slope=slope)


@dataclass(frozen=True)
class SimResult:
    """Outcome of one forced run: phase series, verdict, locked offset, residual."""

    trajectory: Trajectory
    psi_hat: np.ndarray
    psi1_hat: np.ndarray
    classification: Classification
    sigma_hat: float = np.nan
    residual: float = np.nan


def lock_residual(orbit: PeriodicOrbit, offsets: PhaseOffsets, traj: Trajectory,
                  sigma, tail_fraction=TAIL_FRACTION_DEFAULT):
    """sup over the tail of ||x(t) - x0(beta t + sigma)|| + ||y(t)| - |y0(beta t + sigma)||."""
    i0 = int(len(traj.t) * (1.0 - tail_fraction))
    t = traj.t[i0:]
    beta = traj.params.beta if traj.params.beta is not None else orbit.beta0
    zref = orbit.z0(beta * t + sigma)
    dx = np.linalg.norm(traj.x[i0:] - zref[:, :-1], axis=1)
    dr = np.abs(np.abs(traj.y[i0:]) - zref[:, -1])
    return float(np.max(dx + dr))


def analyze_forced_run(model, params, orbit, offsets, init: FullState, horizon,
                       rtol=SWEEP_RTOL, atol=1e-10, lock_band=LOCK_BAND_DEFAULT,
                       drift_threshold=None, tail_fraction=TAIL_FRACTION_DEFAULT,
                       equilibria=None, table=None, backend="auto") -> SimResult:
    """simulate_full + extract_phase + classify + locked-state residual in one call."""
    traj = simulate_full(model, params, init, horizon, rtol=rtol, atol=atol, backend=backend)
    psi, psi1 = extract_phase(orbit, offsets, model, params, traj, table=table)
    cls = classify_locking(traj.t, psi1, tail_fraction=tail_fraction, lock_band=lock_band,
                           drift_threshold=drift_threshold, equilibria=equilibria)
    sigma = np.nan
    resid = np.nan
    if cls.locked:
        sigma = cls.theta_lock
        resid = lock_residual(orbit, offsets, traj, sigma, tail_fraction)
    return SimResult(traj, psi, psi1, cls, sigma_hat=sigma, residual=resid)


# --- chunked long-run driver --------------------------------------------------


@dataclass
class ProbeResult:
    t: np.ndarray
    psi1: np.ndarray
    classification: Classification
    horizon_used: float
    left_neighborhood: bool = False


def default_transient_cut(params: ControlParams, apm: AveragedPhaseModel):
    """max(20/(mu^2 min|G'| at equilibria), 50 modulation periods)."""
    beta = params.beta
    periods = 50 * TWO_PI / beta
    slopes = [abs(e.slope) for e in apm.equilibria]
    if not slopes or params.mu == 0:
        return periods
    return max(20.0 / (params.mu**2 * min(slopes)), periods)


def default_drift_threshold(params: ControlParams, beta0, g_range=None):
    """|beta - beta0|/10, with a small mu^2-scaled floor for beta == beta0."""
    base = abs((params.beta if params.beta is not None else beta0) - beta0) / 10.0
    floor = 0.0
    if g_range is not None:
        floor = params.mu**2 * 0.002 * g_range
    return max(base, floor, 1e-300)


def run_lock_probe(model, params, orbit, offsets, psi_init, *, table=None,
                   max_horizon, transient, tail, lock_band=LOCK_BAND_DEFAULT,
                   drift_threshold=None, rtol=1e-6, atol=1e-9,
                   samples_per_period=8, keep_every=4, normal_offset=0.0,
                   equilibria=None) -> ProbeResult:
    """Integrate from the torus phase psi_init until a verdict or max_horizon.

    Runs in chunks with early exit: drifting as soon as the relative phase wraps
    3pi, locked once past transient + tail with a stable tail window.
    """
    if model.family not in fastsim.KERNELS:
        raise ContractViolationError(f"no compiled kernel for family {model.family!r}")
    if params.beta is None:
        raise DomainError("params.beta must be set")
    if table is None:
        table = build_cycle_table(orbit)
    rhs, pack = fastsim.KERNELS[model.family]
    pars = pack(model, params)
    beta = params.beta

    dt = TWO_PI / (samples_per_period * beta)
    chunk_samples = 8192
    init = torus_init(offsets, psi_init, normal_offset=normal_offset)
    y = _deforced_init(model, params, 0.0, init)

    z0 = np.concatenate((init.x, [np.hypot(y[-2], y[-1])]))
    psi_prev = _global_phase_seed(table, z0)
    # polish the first seed on the raw initial state
    st0 = np.array([y])
    p0 = np.empty(1)
    d0 = np.empty(1)
    fastsim.extract_phase_kernel(st0, table.z, table.zp, table.zpp, psi_prev, 0.0,
                                 np.inf, p0, d0)
    psi_prev = float(p0[0])

    t_now = 0.0
    h_last = 1e-4
    kept_t = [0.0]
    kept_psi1 = [psi_prev]
    psi1_start = psi_prev
    cls = Classification("indeterminate")
    left = False
    min_horizon = transient + tail
    while t_now < max_horizon:
        m = int(min(chunk_samples, np.ceil((max_horizon - t_now) / dt)))
        if m <= 0:
            break
        ts = t_now + dt * np.arange(1, m + 1)
        ys = np.empty((m, len(y)))
        status, t_end, y_end, h_last = fastsim.dp45_stride(rhs, pars, t_now, y, h_last,
                                                           ts, ys, rtol, atol)
        if status != fastsim.STATUS_OK:
            raise IntegrationFailureError(
                f"compiled integration failed (status {status}) at t={t_end}",
                t_last=t_end)
        psi = np.empty(m)
        dist = np.empty(m)
        bad = fastsim.extract_phase_kernel(ys, table.z, table.zp, table.zpp,
                                           psi_prev + beta * dt, beta * dt, 0.4, psi, dist)
        if bad >= 0:
            left = True
            break
        psi_prev = float(psi[-1])
        y = y_end
        t_now = float(ts[-1])
        kept_t.extend(ts[keep_every - 1::keep_every])
        kept_psi1.extend((psi - beta * ts)[keep_every - 1::keep_every])

        change = kept_psi1[-1] - psi1_start
        if abs(change) >= 3 * np.pi:
            break
        if t_now >= min_horizon:
            t_arr = np.asarray(kept_t)
            p_arr = np.asarray(kept_psi1)
            sel = t_arr >= transient
            cls_try = classify_locking(t_arr[sel], p_arr[sel],
                                       lock_band=lock_band,
                                       drift_threshold=drift_threshold,
                                       equilibria=equilibria)
            if cls_try.locked:
                cls = cls_try
                break

    t_arr = np.asarray(kept_t)
    p_arr = np.asarray(kept_psi1)
    if not cls.locked and not left:
        sel = t_arr >= min(transient, 0.5 * t_arr[-1])
        cls = classify_locking(t_arr[sel], p_arr[sel], lock_band=lock_band,
                               drift_threshold=drift_threshold, equilibria=equilibria)
        if cls.kind == "indeterminate" and abs(p_arr[-1] - p_arr[0]) >= TWO_PI:
            # wrap completed inside the transient window: judge the full series
            cls = classify_locking(t_arr, p_arr, lock_band=lock_band,
                                   drift_threshold=drift_threshold,
                                   equilibria=equilibria)
    if left:
        cls = Classification("indeterminate")
    return ProbeResult(t=t_arr, psi1=p_arr, classification=cls,
                       horizon_used=t_now, left_neighborhood=left)


# --- averaged-drift validation -------------------------------------------------


@dataclass(frozen=True)
class DriftWindowStats:
    psi_mid: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray


@dataclass(frozen=True)
class DriftReport:
    mean_rel_dev: float
    max_rel_dev: float
    scale: float
    scaling_ratio: Optional[float]
    mu: float
    nu: float
    Delta: float
    n_windows: int


def _smooth_series(psi1, dt, window):
    """Centered moving average over one window; annihilates window-periodic ripple.

    Returns (offset, smoothed) where offset is the number of samples trimmed at
    each end.
    """
    k = max(2, int(round(window / dt)))
    kernel = np.full(k, 1.0 / k)
    sm = np.convolve(psi1, kernel, mode="valid")
    return k // 2, sm


def _window_slopes(t, psi1, window, hop):
    """Least-squares slopes of the smoothed series over sliding windows.

    The raw series carries an O(mu^2) modulation-periodic wobble (manifold
    correction + the unaveraged part of the phase equation); a plain window
    slope leaks it, so the series is moving-averaged over exactly one window
    length first.
    """
    dt = t[1] - t[0]
    off, sm = _smooth_series(psi1, dt, window)
    t_sm = t[off:off + len(sm)]
    mids, slopes = [], []
    t0 = t_sm[0]
    while t0 + window <= t_sm[-1] + 1e-12:
        sel = (t_sm >= t0) & (t_sm <= t0 + window)
        if np.count_nonzero(sel) >= 8:
            tt, pp = t_sm[sel], sm[sel]
            slopes.append(np.polyfit(tt - tt[0], pp, 1)[0])
            mids.append(0.5 * (tt[0] + tt[-1]))
        t0 += hop
    return np.asarray(mids), np.asarray(slopes)


def _drift_probe_windows(model, params, orbit, offsets, G, psi_list, horizon,
                         settle, rtol, table):
    stats = []
    mu2 = params.mu**2
    Delta = params.delta(orbit.beta0)
    window = TWO_PI / params.beta
    for psi0 in psi_list:
        traj = simulate_full(model, params, torus_init(offsets, psi0), horizon,
                             rtol=rtol, atol=rtol * 1e-3, backend="fast")
        _, psi1 = extract_phase(orbit, offsets, model, params, traj, table=table)
        sel = traj.t >= settle
        mids, slopes = _window_slopes(traj.t[sel], psi1[sel], window, window / 4)
        if len(mids) == 0:
            continue
        # psi1 at window midpoints (for evaluating the predicted drift)
        pmid = np.interp(mids, traj.t[sel], psi1[sel])
        pred = mu2 * (G.eval(np.mod(pmid, TWO_PI)) - Delta)
        stats.append(DriftWindowStats(np.mod(pmid, TWO_PI), slopes, pred))
    return stats


def validate_averaged_drift(model, params, orbit, adjoint, offsets, G: LockingFunction,
                            n_probe=8, horizon=None, settle=None, rtol=1e-8,
                            with_scaling=True, table=None) -> DriftReport:
    """Compare measured d psi1/dt against mu^2 (G(psi1) - Delta) over probe runs.

    Deviations are normalized by the sup of the predicted drift magnitude
    (pointwise relative deviation is ill-conditioned at the zeros of G - Delta).
    The scaling probe reruns at gamma/2 with beta - beta0 scaled by 1/4 (fixed
    Delta) and reports the median drift ratio over matched phase bins.
    """
    params = params.resolve_beta(orbit.beta0)
    if adjoint.orbit is not orbit:
        raise ContractViolationError("adjoint was computed for a different orbit")
    mu, nu = params.mu, params.nu
    if mu > 0.1 or nu > 1e-2:
        raise DomainError(f"outside the averaging regime: mu={mu:.4g} (<= 0.1 required), "
                          f"nu={nu:.4g} (<= 1e-2 required)")
    if table is None:
        table = build_cycle_table(orbit)
    Delta = params.delta(orbit.beta0)
    scale = float(params.mu**2 * np.max(np.abs(G.G - Delta)))
    if horizon is None:
        horizon = 80 * TWO_PI / params.beta
    if settle is None:
        settle = 8 * TWO_PI / params.beta
    psi_list = np.linspace(0.0, TWO_PI, n_probe, endpoint=False)
    stats = _drift_probe_windows(model, params, orbit, offsets, G, psi_list, horizon,
                                 settle, rtol, table)
    devs = np.concatenate([np.abs(s.measured - s.predicted) for s in stats]) / scale
    ratio = None
    if with_scaling:
        gamma_half = params.gamma / 2
        beta_half = orbit.beta0 + (params.beta - orbit.beta0) / 4
        params_half = ControlParams(params.alpha, gamma_half, beta_half)
        stats_half = _drift_probe_windows(model, params_half, orbit, offsets, G, psi_list,
                                          horizon * 2, settle, rtol, table)
        ratio = _binned_drift_ratio(stats, stats_half, G, Delta)
    return DriftReport(
        mean_rel_dev=float(np.mean(devs)), max_rel_dev=float(np.max(devs)),
        scale=scale, scaling_ratio=ratio, mu=mu, nu=nu, Delta=Delta,
        n_windows=int(sum(len(s.measured) for s in stats)),
    )


def _binned_drift_ratio(stats_full, stats_half, G, Delta, n_bins=32):
    """Median ratio of measured drifts at matched phase bins (half-mu over full-mu)."""
    gmax = np.max(np.abs(G.G - Delta))
    edges = np.linspace(0.0, TWO_PI, n_bins + 1)

    def fill(stats):
        sums = np.zeros(n_bins)
        cnts = np.zeros(n_bins, dtype=int)
        for s in stats:
            keep = np.abs(G.eval(s.psi_mid) - Delta) > 0.3 * gmax
            idx = np.clip(np.digitize(s.psi_mid[keep], edges) - 1, 0, n_bins - 1)
            np.add.at(sums, idx, s.measured[keep])
            np.add.at(cnts, idx, 1)
        return sums, cnts

    s_f, c_f = fill(stats_full)
    s_h, c_h = fill(stats_half)
    ok = (c_f > 0) & (c_h > 0)
    if not np.any(ok):
        return None
    ratios = (s_h[ok] / c_h[ok]) / (s_f[ok] / c_f[ok])
    return float(np.median(ratios))


# --- locking boundary and sweeps ------------------------------------------------


@dataclass(frozen=True)
class BoundaryResult:
    beta_c: float
    delta_c: float
    iterations: int
    bracket: tuple
    side: str


def _probe_at_beta(model, params, orbit, offsets, G, table, *, lock_band, rtol,
                   max_horizon=None, drift_threshold=None, horizon_cap=5e6):
    """Classify the run at params.beta, starting on the predicted attractor.

    Transients use a few e-foldings of the local averaged contraction rate
    (the probe starts at the predicted stable phase, not at an arbitrary one,
    so the full 20-e-fold cut of arbitrary-start classification is unneeded).
    All windows are capped by horizon_cap: cells whose mu^2-scaled time scales
    exceed it classify as indeterminate rather than hanging.
    """
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")  # Delta may sit arbitrarily close to S here
        apm = averaged_equilibria(params.delta(orbit.beta0), G)
    equilibria = apm.equilibria
    g_range = max(G.G_plus - G.G_minus, 1e-12)
    periods = TWO_PI / params.beta
    if equilibria:
        psi_init = apm.stable_equilibria()[0].theta
        slope_min = min(abs(e.slope) for e in apm.stable_equilibria())
        transient = max(4.0 / (params.mu**2 * slope_min), 50 * periods)
    else:
        psi_init = 0.0
        transient = 50 * periods
    tail = max(60 * periods, 8.0 / (params.mu**2 * g_range))
    if max_horizon is None:
        max_horizon = max(2 * np.pi / (params.mu**2 * 0.01 * g_range),
                          2 * (transient + tail))
    max_horizon = min(max(max_horizon, 1.5 * (transient + tail)), horizon_cap)
    transient = min(transient, 0.4 * max_horizon)
    tail = min(tail, 0.25 * max_horizon)
    if drift_threshold is None:
        drift_threshold = default_drift_threshold(params, orbit.beta0, g_range)
    probe = run_lock_probe(model, params, orbit, offsets, psi_init, table=table,
                           max_horizon=max_horizon, transient=transient, tail=tail,
                           lock_band=lock_band, drift_threshold=drift_threshold, rtol=rtol,
                           equilibria=equilibria)
    return probe


def find_locking_boundary(model, params: ControlParams, orbit, offsets,
                          G: LockingFunction, side="upper", bisection_tol=None,
                          lock_band=LOCK_BAND_DEFAULT, rtol=1e-6,
                          table=None, delta_bracket=None) -> BoundaryResult:
    """Bisect on beta between a locked anchor (Delta at the window midpoint) and a
    drifting anchor (1.5x the predicted boundary); returns beta_c and Delta_c.

    delta_bracket=(lo, hi) overrides the anchors in Delta units (e.g. to warm-start
    from a boundary already measured at a different mu); both endpoints are still
    verified by classification.
    """
    if table is None:
        table = build_cycle_table(orbit)
    mu2 = params.mu**2
    beta0 = orbit.beta0
    target = G.G_plus if side == "upper" else G.G_minus
    if delta_bracket is not None:
        beta_lock = beta0 + mu2 * delta_bracket[0]
        beta_drift = beta0 + mu2 * delta_bracket[1]
    else:
        beta_lock = beta0 + mu2 * 0.5 * (G.G_minus + G.G_plus)
        beta_drift = beta0 + mu2 * 1.5 * target
    if bisection_tol is None:
        bisection_tol = mu2 * 0.05 * abs(target)
    # worst-case rotation time at the saddle-node ghost one tolerance away
    tol_delta = bisection_tol / mu2
    curv = min((abs(s.curvature) for s in G.singular_points), default=1.0)
    budget = max(3 * TWO_PI / (mu2 * np.sqrt(max(tol_delta * curv, 1e-30))),
                 200 * TWO_PI / (params.beta or beta0))
    # catch the slow creep past the ghost at tolerance distance (rate mu^2 tol_delta)
    thr = 0.3 * mu2 * tol_delta

    def verdict(beta):
        p = _probe_at_beta(model, params.with_beta(beta), orbit, offsets, G, table,
                           lock_band=lock_band, rtol=rtol, max_horizon=budget,
                           drift_threshold=thr)
        return p.classification.kind

    v_lock = verdict(beta_lock)
    v_drift = verdict(beta_drift)
    if not (v_lock == "locked" and v_drift == "drifting"):
        raise BracketFailureError(
            f"invalid bracket: beta={beta_lock} -> {v_lock}, beta={beta_drift} -> {v_drift}",
            verdicts=(v_lock, v_drift))
    lo, hi = beta_lock, beta_drift
    iters = 0
    while abs(hi - lo) > bisection_tol:
        mid = 0.5 * (lo + hi)
        iters += 1
        if verdict(mid) == "drifting":
            hi = mid
        else:
            lo = mid
    beta_c = 0.5 * (lo + hi)
    return BoundaryResult(beta_c=beta_c, delta_c=(beta_c - beta0) / mu2,
                          iterations=iters, bracket=(lo, hi), side=side)


@dataclass(frozen=True)
class SweepCell:
    alpha: float
    beta: float
    gamma: float
    mu: float
    Delta: float
    classification: str
    theta_lock: float
    drift_rate: float
    wall_time: float
    predicted_inside: bool
    error: Optional[str] = None


def _sweep_cell(model, params, orbit, offsets, G, spec, table, lock_band, rtol,
                budget_factor):
    t0 = _time.perf_counter()
    pred = in_locking_region(params, G, spec)
    g_range = max(G.G_plus - G.G_minus, 1e-12)
    budget = budget_factor * 2 * np.pi / (max(params.mu, 1e-12)**2 * 0.01 * g_range)
    try:
        probe = _probe_at_beta(model, params, orbit, offsets, G, table,
                               lock_band=lock_band, rtol=rtol,
                               max_horizon=budget)
        cls = probe.classification
        err = None
        kind = cls.kind
        theta, rate = cls.theta_lock, cls.drift_rate
    except Exception as exc:  # individual cell failures never abort the sweep
        kind, theta, rate = "error", np.nan, np.nan
        err = f"{type(exc).__name__}: {exc}"
    return SweepCell(
        alpha=params.alpha, beta=params.beta, gamma=params.gamma, mu=params.mu,
        Delta=(params.beta - orbit.beta0) / params.mu**2 if params.mu > 0 else np.nan,
        classification=kind, theta_lock=theta, drift_rate=rate,
        wall_time=_time.perf_counter() - t0, predicted_inside=bool(pred), error=err,
    )


def sweep_grid(model, alpha, beta_values, gamma_values, spec: RegionSpec,
               G: LockingFunction, orbit, offsets, jobs=1,
               lock_band=LOCK_BAND_DEFAULT, rtol=1e-6, budget_factor=0.25,
               table=None) -> list:
    """Classify every (beta, gamma) cell at fixed alpha; cells run independently
    (thread pool; the compiled stepper releases the GIL) and are returned in
    row-major cell order regardless of completion order."""
    if table is None:
        table = build_cycle_table(orbit)
    cells = [(i, ControlParams(alpha, g, b))
             for i, (b, g) in enumerate((b, g) for b in beta_values for g in gamma_values)]

    def work(item):
        _, params = item
        return _sweep_cell(model, params, orbit, offsets, G, spec, table, lock_band,
                           rtol, budget_factor)

    if jobs <= 1:
        return [work(c) for c in cells]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(work, cells))
    return results
