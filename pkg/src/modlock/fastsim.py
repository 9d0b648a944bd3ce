"""Compiled hot loops for long forced-system runs: a Dormand-Prince 5(4) stepper
with strided output and a cycle-table phase extractor.

The forced system is integrated in the de-forced variable y1 = y + i mu e^{i alpha t}
a(beta t) (an exact change of variables), which shrinks the fast-oscillatory term
from amplitude gamma to ~mu and lets the stepper take much larger steps. States
are converted back to y at the interface.
"""

import numpy as np
from numba import njit

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200,
                                22 / 525, -1 / 40)

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = -1
STATUS_NONFINITE = -2


@njit(cache=True, nogil=True)
def _vdp_deforced_rhs(t, s, pars, out):
    """De-forced vdp_laser right-hand side for s = (x, Re y1, Im y1).

    pars = [P, eta, c, om0, kap, alpha, beta, mu, K, a0_re, a0_im, a1_re, a1_im, ...]
    """
    P = pars[0]
    eta = pars[1]
    c = pars[2]
    om0 = pars[3]
    kap = pars[4]
    alpha = pars[5]
    beta = pars[6]
    mu = pars[7]
    K = int(pars[8])
    x = s[0]
    y1r = s[1]
    y1i = s[2]
    tau = beta * t
    ar = 0.0
    ai = 0.0
    apr = 0.0
    api = 0.0
    for k in range(K + 1):
        cre = pars[9 + 2 * k]
        cim = pars[10 + 2 * k]
        if k == 0:
            ar += cre
            ai += cim
        else:
            ck = np.cos(k * tau)
            sk = np.sin(k * tau)
            ar += cre * ck - cim * sk
            ai += cre * sk + cim * ck
            apr += -k * (cre * sk + cim * ck)
            api += k * (cre * ck - cim * sk)
    ce = np.cos(alpha * t)
    se = np.sin(alpha * t)
    hr = x
    hi = om0 + kap * x
    f = P + eta * x - x * x * x
    g = -c
    y1sq = y1r * y1r + y1i * y1i
    a2 = ar * ar + ai * ai
    ear = ce * ar - se * ai
    eai = ce * ai + se * ar
    wr = hr * ar - hi * ai - beta * apr
    wi = hr * ai + hi * ar - beta * api
    out[0] = f + g * (y1sq + mu * mu * a2) - 2.0 * mu * g * (y1i * ear - y1r * eai)
    out[1] = hr * y1r - hi * y1i + mu * (ce * wi + se * wr)
    out[2] = hr * y1i + hi * y1r - mu * (ce * wr - se * wi)


@njit(cache=True, nogil=True)
def dp45_stride(rhs, pars, t0, y0, h0, ts_out, ys_out, rtol, atol):
    """Adaptive DP45 from (t0, y0), writing the state at each ts_out (increasing, > t0).

    Steps clamp onto output times so samples are exact states, not interpolants.
    Returns (status, t_end, y_end, h_last).
    """
    n = y0.shape[0]
    m = ts_out.shape[0]
    y = y0.copy()
    yt = np.empty(n)
    yn = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    t = t0
    h = h0
    iout = 0
    rhs(t, y, pars, k1)
    while iout < m:
        gap = ts_out[iout] - t
        clamped = gap <= h
        ht = gap if clamped else h
        for i in range(n):
            yt[i] = y[i] + ht * _A21 * k1[i]
        rhs(t + _C2 * ht, yt, pars, k2)
        for i in range(n):
            yt[i] = y[i] + ht * (_A31 * k1[i] + _A32 * k2[i])
        rhs(t + _C3 * ht, yt, pars, k3)
        for i in range(n):
            yt[i] = y[i] + ht * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        rhs(t + _C4 * ht, yt, pars, k4)
        for i in range(n):
            yt[i] = y[i] + ht * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        rhs(t + _C5 * ht, yt, pars, k5)
        for i in range(n):
            yt[i] = y[i] + ht * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i]
                                 + _A65 * k5[i])
        rhs(t + ht, yt, pars, k6)
        for i in range(n):
            yn[i] = y[i] + ht * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i]
                                 + _B6 * k6[i])
        rhs(t + ht, yn, pars, k7)
        errn = 0.0
        ok = True
        for i in range(n):
            if not np.isfinite(yn[i]):
                ok = False
                break
            e = ht * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i]
                      + _E7 * k7[i])
            sc = atol + rtol * max(abs(y[i]), abs(yn[i]))
            errn += (e / sc) ** 2
        if not ok:
            return STATUS_NONFINITE, t, y, h
        errn = np.sqrt(errn / n)
        fac = 0.9 * errn ** (-0.2) if errn > 0.0 else 5.0
        if fac < 0.2:
            fac = 0.2
        if fac > 5.0:
            fac = 5.0
        if errn <= 1.0:
            t = ts_out[iout] if clamped else t + ht
            for i in range(n):
                y[i] = yn[i]
                k1[i] = k7[i]
            if clamped:
                for i in range(n):
                    ys_out[iout, i] = y[i]
                iout += 1
                # resume with the natural step: the clamped one says little
                h = max(h, ht * fac)
            else:
                h = ht * fac
        else:
            h = ht * fac
            if h < 1e-14 * max(1.0, abs(t)):
                return STATUS_STEP_UNDERFLOW, t, y, h
    return STATUS_OK, t, y, h


@njit(cache=True, nogil=True, inline="always")
def _hermite(vals, ders, htab, i0, u, j):
    """Cubic Hermite on table segment i0 at local coordinate u, component j."""
    nrow = vals.shape[0]
    i1 = (i0 + 1) % nrow
    u2 = u * u
    u3 = u2 * u
    h00 = 2 * u3 - 3 * u2 + 1
    h10 = u3 - 2 * u2 + u
    h01 = -2 * u3 + 3 * u2
    h11 = u3 - u2
    return (h00 * vals[i0, j] + h10 * htab * ders[i0, j]
            + h01 * vals[i1, j] + h11 * htab * ders[i1, j])


@njit(cache=True, nogil=True)
def extract_phase_kernel(states, ztab, zptab, zpptab, psi_start, advance,
                         delta_proj, psi_out, dist_out):
    """Project de-forced states (x..., Re y1, Im y1) onto the cycle table.

    psi_out gets the unwrapped phase; dist_out gets the projection distances.
    Returns the index of the first sample beyond delta_proj, or -1.
    """
    m = states.shape[0]
    d = ztab.shape[1]
    nrow = ztab.shape[0]
    htab = 2 * np.pi / nrow
    z = np.empty(d)
    psi_prev = psi_start
    for irow in range(m):
        for j in range(d - 1):
            z[j] = states[irow, j]
        yr = states[irow, d - 1]
        yi = states[irow, d]
        z[d - 1] = np.sqrt(yr * yr + yi * yi)
        seed = psi_prev + advance if irow > 0 else psi_start
        psi = seed
        # Newton on half the squared distance to the cycle
        for _ in range(4):
            pm = psi % (2 * np.pi)
            fi = pm / htab
            i0 = int(fi)
            if i0 >= nrow:
                i0 = nrow - 1
            u = fi - i0
            dp = 0.0
            dpp = 0.0
            for j in range(d):
                zj = _hermite(ztab, zptab, htab, i0, u, j)
                zpj = _hermite(zptab, zpptab, htab, i0, u, j)
                zppj = (1 - u) * zpptab[i0, j] + u * zpptab[(i0 + 1) % nrow, j]
                diff = z[j] - zj
                dp += -diff * zpj
                dpp += zpj * zpj - diff * zppj
            if dpp <= 1e-12:
                break
            step = -dp / dpp
            if step > 0.4:
                step = 0.4
            elif step < -0.4:
                step = -0.4
            psi = psi + step
            if abs(step) < 1e-13:
                break
        # distance at the solution
        pm = psi % (2 * np.pi)
        fi = pm / htab
        i0 = int(fi)
        if i0 >= nrow:
            i0 = nrow - 1
        u = fi - i0
        dist2 = 0.0
        for j in range(d):
            zj = _hermite(ztab, zptab, htab, i0, u, j)
            diff = z[j] - zj
            dist2 += diff * diff
        dist_out[irow] = np.sqrt(dist2)
        psi_out[irow] = psi
        psi_prev = psi
        if dist_out[irow] > delta_proj:
            return irow
    return -1


def pack_vdp_pars(model, params):
    """Parameter vector for _vdp_deforced_rhs."""
    p = dict(model.params)
    coeffs = model.forcing.coeffs
    beta = params.beta if params.beta is not None else 0.0
    head = [p["P"], p["eta"], p["c"], p["omega0"], p["kappa"],
            params.alpha, beta, params.mu, float(len(coeffs) - 1)]
    tail = []
    for c in coeffs:
        tail.extend((c.real, c.imag))
    return np.array(head + tail, dtype=float)


# registry hook: family name -> (rhs kernel, parameter packer)
KERNELS = {"vdp_laser": (_vdp_deforced_rhs, pack_vdp_pars)}
