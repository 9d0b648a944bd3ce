"""The equivariant system family: dx/dt = f(x) + g(x)|y|^2, dy/dt = h(x)y + forcing.

Models are built-in parametric families selected by config (registry hook for
more); complex quantities live as numpy complex scalars at the model level and
are expanded to real pairs in the ODE layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ForcingProfile:
    """2pi-periodic forcing profile a(tau) = sum_k coeffs[k] * exp(i k tau), k = 0..K."""

    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(complex(c) for c in self.coeffs))
        if len(self.coeffs) == 0:
            raise ConfigError("forcing profile needs at least coefficient a_0")

    @property
    def max_harmonic(self):
        return len(self.coeffs) - 1

    def eval(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.zeros(tau.shape, dtype=complex)
        for k, c in enumerate(self.coeffs):
            out += c * np.exp(1j * k * tau)
        return out if out.ndim else complex(out)

    def deriv(self, tau):
        tau = np.asarray(tau, dtype=float)
        out = np.zeros(tau.shape, dtype=complex)
        for k, c in enumerate(self.coeffs):
            out += 1j * k * c * np.exp(1j * k * tau)
        return out if out.ndim else complex(out)

    def intensity(self, tau):
        a = self.eval(tau)
        return np.abs(a) ** 2

    def intensity_coeffs(self):
        """Harmonics c_j of |a(tau)|^2 = sum_j c_j exp(i j tau), j = -K..K."""
        K = self.max_harmonic
        a = np.asarray(self.coeffs)
        c = np.zeros(2 * K + 1, dtype=complex)
        for j in range(-K, K + 1):
            for k in range(max(0, j), min(K, K + j) + 1):
                c[j + K] += a[k] * np.conj(a[k - j])
        return np.arange(-K, K + 1), c

    @property
    def is_zero(self):
        return all(abs(c) == 0.0 for c in self.coeffs)


@dataclass(frozen=True)
class ModelDef:
    """System definition: f, g: R^n -> R^n, h: R^n -> C, with first derivatives."""

    n: int
    f: Callable
    g: Callable
    h: Callable
    df: Callable  # (n, n)
    dg: Callable  # (n, n)
    dh: Callable  # complex gradient, (n,)
    forcing: ForcingProfile
    family: str = "custom"
    params: tuple = ()
    smoothness_class: int = 5  # documented, not enforced

    def with_forcing(self, forcing: ForcingProfile) -> "ModelDef":
        from dataclasses import replace

        return replace(self, forcing=forcing)


@dataclass(frozen=True)
class ControlParams:
    """Forcing control parameters: wave frequency alpha, modulation frequency beta,
    amplitude gamma. beta=None means 'resolve to the orbit's beta0 downstream'."""

    alpha: float
    gamma: float
    beta: Optional[float] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")

    @property
    def mu(self):
        return self.gamma / self.alpha

    @property
    def nu(self):
        return 1.0 / self.alpha

    def delta(self, beta0):
        """Rescaled detuning (beta - beta0) / mu^2; defined only for mu > 0."""
        if self.mu <= 0:
            raise DomainError("Delta is undefined for mu = 0")
        beta = self.beta if self.beta is not None else beta0
        return (beta - beta0) / self.mu**2

    def with_beta(self, beta):
        return ControlParams(self.alpha, self.gamma, beta)

    def resolve_beta(self, beta0):
        return self if self.beta is not None else self.with_beta(beta0)


@dataclass(frozen=True)
class FullState:
    """State of the full system: x in R^n, y in C."""

    x: np.ndarray
    y: complex

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", complex(self.y))
        if not (np.all(np.isfinite(self.x)) and np.isfinite(self.y)):
            raise DomainError("non-finite state")


def to_real(s: FullState):
    return np.concatenate((s.x, [s.y.real, s.y.imag]))


def from_real(v, n):
    return FullState(v[:n], complex(v[n], v[n + 1]))


def eval_full_rhs(model: ModelDef, params: ControlParams, t, s: FullState) -> FullState:
    """Right-hand side of the forced system, returned as a FullState derivative."""
    x, y = s.x, s.y
    force = 0.0
    if params.gamma > 0:
        if params.beta is None:
            raise DomainError("params.beta must be set when gamma > 0")
        force = params.gamma * np.exp(1j * params.alpha * t) * model.forcing.eval(params.beta * t)
    dx = model.f(x) + model.g(x) * abs(y) ** 2
    dy = model.h(x) * y + force
    return FullState(dx, dy)


def eval_polar_rhs(model: ModelDef, x, r):
    """Unforced polar form: (xdot, rdot, thetadot) = (f + g r^2, Re h * r, Im h)."""
    if r <= 0:
        raise DomainError(f"polar radius must be positive, got r={r}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    hx = model.h(x)
    return model.f(x) + model.g(x) * r**2, hx.real * r, hx.imag


def remove_forcing_oscillation(params: ControlParams, t, y, forcing: ForcingProfile):
    """First averaging transformation: y1 = y + i (gamma/alpha) e^{i alpha t} a(beta t).

    Exact change of variables (vectorized over t and y together).
    """
    if params.gamma == 0:
        return y if np.ndim(y) else complex(y)
    if params.beta is None:
        raise DomainError("params.beta must be set when gamma > 0")
    t = np.asarray(t, dtype=float)
    out = y + 1j * params.mu * np.exp(1j * params.alpha * t) * forcing.eval(params.beta * t)
    return out if np.ndim(out) else complex(out)


def restore_forcing_oscillation(params: ControlParams, t, y1, forcing: ForcingProfile):
    """Inverse map: y = y1 - i (gamma/alpha) e^{i alpha t} a(beta t)."""
    if params.gamma == 0:
        return y1 if np.ndim(y1) else complex(y1)
    if params.beta is None:
        raise DomainError("params.beta must be set when gamma > 0")
    t = np.asarray(t, dtype=float)
    out = y1 - 1j * params.mu * np.exp(1j * params.alpha * t) * forcing.eval(params.beta * t)
    return out if np.ndim(out) else complex(out)


DEFAULT_VDP_FORCING = ForcingProfile((1.0, 0.5))


def make_vdp_laser(P=1.0, eta=0.2, c=1.0, omega0=2.0, kappa=0.5,
                   forcing: ForcingProfile | None = None) -> ModelDef:
    """Scalar-x example family: f(x) = P + eta x - x^3, g(x) = -c, h(x) = x + i(omega0 + kappa x).

    The planar (x, r) subsystem has the fixed point (0, sqrt(P/c)); via v = ln r it
    reduces to a Van der Pol type oscillator with a stable limit cycle for small
    eta > 0. Cycle existence for eta <= 0 is not checked here; the orbit solver
    reports no-convergence in that case.
    """
    if not P > 0:
        raise ConfigError(f"vdp_laser requires P > 0, got {P}")
    if not c > 0:
        raise ConfigError(f"vdp_laser requires c > 0, got {c}")
    if forcing is None:
        forcing = DEFAULT_VDP_FORCING

    def f(x):
        return np.array([P + eta * x[0] - x[0] ** 3])

    def g(x):
        return np.array([-c])

    def h(x):
        return complex(x[0], omega0 + kappa * x[0])

    def df(x):
        return np.array([[eta - 3.0 * x[0] ** 2]])

    def dg(x):
        return np.array([[0.0]])

    def dh(x):
        return np.array([1.0 + 1j * kappa])

    return ModelDef(
        n=1, f=f, g=g, h=h, df=df, dg=dg, dh=dh, forcing=forcing,
        family="vdp_laser",
        params=(("P", P), ("eta", eta), ("c", c), ("omega0", omega0), ("kappa", kappa)),
    )


MODEL_FAMILIES = {"vdp_laser": make_vdp_laser}


def register_family(name, builder):
    """Registry hook for additional built-in model families."""
    MODEL_FAMILIES[name] = builder


def check_model_derivatives(model: ModelDef, points, tol=1e-6, h=1e-6):
    """Finite-difference check of df, dg, dh at the given x points (relative tol)."""
    worst = 0.0
    for x in points:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        for fun, dfun in ((model.f, model.df), (model.g, model.dg)):
            D = np.asarray(dfun(x), dtype=float)
            D_fd = np.empty_like(D)
            for j in range(model.n):
                e = np.zeros(model.n)
                e[j] = h
                D_fd[:, j] = (fun(x + e) - fun(x - e)) / (2 * h)
            worst = max(worst, np.max(np.abs(D - D_fd)) / max(1.0, np.max(np.abs(D))))
        Dh = np.asarray(model.dh(x), dtype=complex)
        Dh_fd = np.empty_like(Dh)
        for j in range(model.n):
            e = np.zeros(model.n)
            e[j] = h
            Dh_fd[j] = (model.h(x + e) - model.h(x - e)) / (2 * h)
        worst = max(worst, np.max(np.abs(Dh - Dh_fd)) / max(1.0, np.max(np.abs(Dh))))
    return worst, worst <= tol


# --- config files -----------------------------------------------------------
#
# UTF-8 text, `key = value` lines with dotted sections, `#` comments. Dot
# decimal separator regardless of locale. Unknown keys are rejected.

_MODEL_KEYS = {"model.family", "model.P", "model.eta", "model.c", "model.omega0", "model.kappa"}
_CONTROL_KEYS = {"control.alpha", "control.beta", "control.gamma"}
_NUMERIC_KEYS = {"numeric.rtol", "numeric.atol"}
_SHOOTING_KEYS = {"shooting.max_iter", "shooting.tol"}
_FORCING_RE = re.compile(r"^forcing\.a_(\d+)_(re|im)$")


@dataclass(frozen=True)
class NumericSettings:
    rtol: float = 1e-9
    atol: float = 1e-11
    shooting_max_iter: int = 50
    shooting_tol: float = 1e-10

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.shooting_tol > 0):
            raise ConfigError("numeric tolerances must be positive")
        if self.shooting_max_iter < 1:
            raise ConfigError("shooting.max_iter must be >= 1")


def _parse_float(key, raw):
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as a decimal") from None
    if not np.isfinite(val):
        raise ConfigError(f"{key}: value must be finite, got {raw!r}")
    return val


def _parse_int(key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as an integer") from None


def parse_config_text(text):
    """Parse config text into a flat {key: raw-string} dict, validating key names."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        known = (
            key in _MODEL_KEYS
            or key in _CONTROL_KEYS
            or key in _NUMERIC_KEYS
            or key in _SHOOTING_KEYS
            or _FORCING_RE.match(key)
        )
        if not known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = raw
    return entries


def load_model_config(path):
    """Load and validate a config file; returns (ModelDef, ControlParams, NumericSettings)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    entries = parse_config_text(text)

    family = entries.pop("model.family", "vdp_laser")
    if family not in MODEL_FAMILIES:
        raise ConfigError(f"model.family: unknown family {family!r}")

    model_kwargs = {}
    for key in list(entries):
        if key.startswith("model."):
            model_kwargs[key.split(".", 1)[1]] = _parse_float(key, entries.pop(key))

    forcing = None
    fkeys = [k for k in entries if k.startswith("forcing.")]
    if fkeys:
        parts = {}
        for key in fkeys:
            m = _FORCING_RE.match(key)
            parts[(int(m.group(1)), m.group(2))] = _parse_float(key, entries.pop(key))
        K = max(k for k, _ in parts)
        coeffs = [complex(parts.get((k, "re"), 0.0), parts.get((k, "im"), 0.0))
                  for k in range(K + 1)]
        forcing = ForcingProfile(tuple(coeffs))

    try:
        model = MODEL_FAMILIES[family](**model_kwargs, forcing=forcing)
    except TypeError as exc:
        raise ConfigError(f"model.*: {exc}") from None

    params = ControlParams(
        alpha=_parse_float("control.alpha", entries.pop("control.alpha", "100.0")),
        gamma=_parse_float("control.gamma", entries.pop("control.gamma", "0.0")),
        beta=(
            _parse_float("control.beta", entries.pop("control.beta"))
            if "control.beta" in entries
            else None
        ),
    )
    settings = NumericSettings(
        rtol=_parse_float("numeric.rtol", entries.pop("numeric.rtol", "1e-9")),
        atol=_parse_float("numeric.atol", entries.pop("numeric.atol", "1e-11")),
        shooting_max_iter=_parse_int(
            "shooting.max_iter", entries.pop("shooting.max_iter", "50")
        ),
        shooting_tol=_parse_float("shooting.tol", entries.pop("shooting.tol", "1e-10")),
    )
    if entries:
        raise ConfigError(f"unconsumed keys: {sorted(entries)}")
    return model, params, settings
