"""Command-line pipeline: orbit | gfun | region | simulate | validate | sweep.

Each command reads a config file, writes CSV/JSON artifacts plus a run manifest
into --out, and maps error classes to documented exit codes:

    0  success
    1  internal error / inconsistent inputs
    2  config error (parse, schema, out-of-domain value)
    3  no convergence (shooting Newton, bisection bracket)
    4  assumption violation (hyperbolicity, nondegeneracy, degenerate orbit)
    5  integration failure (step-size underflow, blow-up, non-finite field)

Set MODLOCK_LOG=DEBUG|INFO|WARNING for verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, sim
from .errors import ConfigError, ModlockError
from .locking import (
    AlphaSection,
    BetaSection,
    RegionSpec,
    averaged_equilibria,
    boundary_curves,
    compute_G,
    find_singular_points,
    in_locking_region,
)
from .model import load_model_config
from .orbit import (
    compute_adjoint,
    compute_floquet,
    compute_phase_offsets,
    default_orbit_guess,
    find_periodic_orbit,
)

logger = logging.getLogger("modlock")


def _fmt(x):
    """Stable decimal formatting for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if np.isnan(x):
            return "nan"
        return f"{float(x):.17g}"
    return str(x)


def _jsonify(obj):
    """Strict-JSON friendly payload: numpy scalars unwrapped, NaN/inf -> null."""
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


class Manifest:
    """Run manifest: config hash, command, parameters, outputs, wall time."""

    def __init__(self, command, config_path, config_text, params):
        self.command = command
        self.config_path = str(config_path)
        self.config_hash = hashlib.sha256(config_text.encode("utf-8")).hexdigest()
        self.params = dict(sorted(params.items()))
        self.outputs = []
        self._t0 = time.perf_counter()

    @property
    def hash(self):
        """Deterministic id over config + command + parameters (no timestamps)."""
        payload = json.dumps(
            {"command": self.command, "config_hash": self.config_hash,
             "params": self.params, "version": __version__},
            sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def header_lines(self):
        return [f"# manifest: {self.hash}",
                f"# command: {self.command}",
                f"# config: {self.config_hash}"]

    def write_csv(self, out_dir, name, columns, rows):
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.header_lines():
                fh.write(line + "\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        self.outputs.append(name)
        return path

    def write_json(self, out_dir, name, payload):
        path = os.path.join(out_dir, name)
        body = dict(payload)
        body["manifest"] = self.hash
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonify(body), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        self.outputs.append(name)
        return path

    def finalize(self, out_dir):
        payload = {
            "manifest_hash": self.hash,
            "command": self.command,
            "config_path": self.config_path,
            "config_hash": self.config_hash,
            "params": self.params,
            "tool_version": __version__,
            "outputs": sorted(self.outputs),
            "wall_time_s": time.perf_counter() - self._t0,
        }
        path = os.path.join(out_dir, f"{self.command}_manifest.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _setup_logging():
    level = os.environ.get("MODLOCK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load(args):
    model, params, settings = load_model_config(args.config)
    config_text = open(args.config, encoding="utf-8").read()
    os.makedirs(args.out, exist_ok=True)
    return model, params, settings, config_text


def _orbit_pipeline(model, settings):
    guess = default_orbit_guess(model)
    orbit = find_periodic_orbit(model, guess, tol=settings.shooting_tol,
                                max_iter=settings.shooting_max_iter,
                                rtol=settings.rtol, atol=settings.atol)
    floquet = compute_floquet(model, orbit, rtol=settings.rtol, atol=settings.atol)
    adjoint = compute_adjoint(model, orbit, floquet, rtol=settings.rtol, atol=settings.atol)
    offsets = compute_phase_offsets(model, orbit)
    return orbit, floquet, adjoint, offsets


def _gfun_pipeline(model, settings, n_grid=512, n_quad=512):
    orbit, floquet, adjoint, offsets = _orbit_pipeline(model, settings)
    G = find_singular_points(compute_G(orbit, adjoint, model.forcing,
                                       n_grid=n_grid, n_quad=n_quad))
    return orbit, floquet, adjoint, offsets, G


def cmd_orbit(args):
    model, params, settings, cfg_text = _load(args)
    man = Manifest("orbit", args.config, cfg_text, {"seed": args.seed})
    orbit, floquet, adjoint, offsets = _orbit_pipeline(model, settings)
    psi = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
    z = orbit.z0(psi)
    p = adjoint.p(psi)
    n = model.n
    columns = (["psi"] + [f"x{i}" for i in range(n)] + ["r"]
               + [f"p_x{i}" for i in range(n)] + ["p_r"])
    rows = [[psi[i], *z[i, :n], z[i, n], *p[i, :n], p[i, n]] for i in range(len(psi))]
    man.write_csv(args.out, "orbit.csv", columns, rows)
    man.write_json(args.out, "orbit.json", {
        "T": orbit.T,
        "beta0": orbit.beta0,
        "alpha0": offsets.alpha0,
        "multipliers": [[lam.real, lam.imag] for lam in floquet.multipliers],
        "trivial_multiplier_error": floquet.trivial_multiplier_error,
        "hyperbolic": floquet.hyperbolic,
        "spectral_gap": floquet.spectral_gap,
        "normalization_residual": adjoint.normalization_residual,
        "closure_residual": orbit.closure_residual,
    })
    man.finalize(args.out)
    return 0


def cmd_gfun(args):
    model, params, settings, cfg_text = _load(args)
    man = Manifest("gfun", args.config, cfg_text,
                   {"seed": args.seed, "n_grid": args.n_grid, "n_quad": args.n_quad})
    _, _, _, _, G = _gfun_pipeline(model, settings, args.n_grid, args.n_quad)
    rows = [[G.psi[i], G.G[i], G.Gp[i]] for i in range(len(G.psi))]
    man.write_csv(args.out, "gfun.csv", ["psi", "G", "dG"], rows)
    man.write_json(args.out, "gfun.json", {
        "G_minus": G.G_minus,
        "G_plus": G.G_plus,
        "singular_points": [s.theta for s in G.singular_points],
        "singular_values": [s.value for s in G.singular_points],
        "curvatures": [s.curvature for s in G.singular_points],
        "degenerate": G.degenerate,
        "beta0": G.beta0,
    })
    man.finalize(args.out)
    return 0


def _region_spec(args):
    return RegionSpec(mu_star_low=args.mu_star_low, mu_star_high=args.mu_star_high,
                      margin=args.margin)


def cmd_region(args):
    model, params, settings, cfg_text = _load(args)
    man = Manifest("region", args.config, cfg_text, {
        "seed": args.seed, "section": args.section, "var_min": args.var_min,
        "var_max": args.var_max, "var_steps": args.var_steps,
        "mu_star_low": args.mu_star_low, "mu_star_high": args.mu_star_high,
        "margin": args.margin})
    _, _, _, _, G = _gfun_pipeline(model, settings)
    spec = _region_spec(args)
    if args.section == "alpha":
        sec = AlphaSection(params.alpha)
        # tongue extent at the top of the amplitude window: beta - beta0 = mu_*^2 G
        span = 1.5 * args.mu_star_high**2 * max(abs(G.G_minus), abs(G.G_plus), 1e-12)
        lo = args.var_min if args.var_min is not None else G.beta0 - span
        hi = args.var_max if args.var_max is not None else G.beta0 + span
        ucol = "beta"
    else:
        beta = params.beta if params.beta is not None else G.beta0
        sec = BetaSection(beta)
        lo = args.var_min if args.var_min is not None else 1e-3
        hi = args.var_max if args.var_max is not None else 2e-2
        ucol = "inv_alpha"
    grid = np.linspace(lo, hi, args.var_steps)
    section = boundary_curves(G, spec, sec, grid)
    rows = []
    for pl in section.polylines:
        for u, g in zip(pl.u, pl.gamma):
            rows.append([u, g, pl.label])
    man.write_csv(args.out, "region.csv", [ucol, "gamma", "branch"], rows)
    man.write_json(args.out, "region.json", {
        "section": args.section,
        "branches": [pl.label for pl in section.polylines],
        "n_sqrt_branches": sum(1 for pl in section.polylines if pl.kind == "sqrt"),
        "diagnostic": section.diagnostic,
    })
    man.finalize(args.out)
    return 0


def cmd_simulate(args):
    model, params, settings, cfg_text = _load(args)
    man = Manifest("simulate", args.config, cfg_text, {
        "seed": args.seed, "horizon": args.horizon, "init_psi": args.init_psi,
        "normal_offset": args.normal_offset})
    orbit, floquet, adjoint, offsets = _orbit_pipeline(model, settings)
    params = params.resolve_beta(orbit.beta0)
    G = find_singular_points(compute_G(orbit, adjoint, model.forcing))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        apm = averaged_equilibria(params.delta(orbit.beta0), G) if params.mu > 0 else None
    horizon = args.horizon
    if horizon is None:
        horizon = 200 * 2 * np.pi / params.beta
        if apm is not None and apm.equilibria:
            # arbitrary-phase start: cover the transit to the attractor plus the
            # post-transient classification window
            horizon = max(horizon, 2.0 * sim.default_transient_cut(params, apm))
    init = sim.torus_init(offsets, args.init_psi, normal_offset=args.normal_offset)
    result = sim.analyze_forced_run(
        model, params, orbit, offsets, init, horizon,
        equilibria=apm.equilibria if apm else None)
    traj = result.trajectory
    sigma = result.sigma_hat
    if np.isnan(sigma):
        res_series = np.full(len(traj.t), np.nan)
    else:
        zref = orbit.z0(params.beta * traj.t + sigma)
        res_series = (np.linalg.norm(traj.x - zref[:, :-1], axis=1)
                      + np.abs(np.abs(traj.y) - zref[:, -1]))
    rows = [[traj.t[i], result.psi1_hat[i], res_series[i]] for i in range(len(traj.t))]
    man.write_csv(args.out, "simulate.csv", ["t", "psi1_hat", "residual"], rows)
    cls = result.classification
    man.write_json(args.out, "simulate.json", {
        "classification": cls.kind,
        "theta_lock": cls.theta_lock,
        "drift_rate": cls.drift_rate,
        "sigma_hat": result.sigma_hat,
        "residual_sup_tail": result.residual,
        "mu": params.mu,
        "Delta": params.delta(orbit.beta0) if params.mu > 0 else None,
    })
    man.finalize(args.out)
    return 0


def cmd_validate(args):
    model, params, settings, cfg_text = _load(args)
    man = Manifest("validate", args.config, cfg_text, {
        "seed": args.seed, "n_probe": args.n_probe,
        "with_boundary": args.with_boundary})
    orbit, floquet, adjoint, offsets = _orbit_pipeline(model, settings)
    params = params.resolve_beta(orbit.beta0)
    G = find_singular_points(compute_G(orbit, adjoint, model.forcing))
    table = sim.build_cycle_table(orbit)
    report = sim.validate_averaged_drift(model, params, orbit, adjoint, offsets, G,
                                         n_probe=args.n_probe, table=table)
    payload = {
        "mean_rel_dev": report.mean_rel_dev,
        "max_rel_dev": report.max_rel_dev,
        "scaling_ratio": report.scaling_ratio,
        "scale": report.scale,
        "mu": report.mu,
        "nu": report.nu,
        "Delta": report.Delta,
        "n_windows": report.n_windows,
    }
    if args.with_boundary:
        upper = sim.find_locking_boundary(model, params, orbit, offsets, G,
                                          side="upper", table=table)
        payload["boundary_upper"] = {
            "delta_c": upper.delta_c, "beta_c": upper.beta_c,
            "predicted": G.G_plus,
            "rel_dev": (upper.delta_c - G.G_plus) / G.G_plus,
        }
    man.write_json(args.out, "validate.json", payload)
    man.finalize(args.out)
    return 0


def cmd_sweep(args):
    model, params, settings, cfg_text = _load(args)
    man = Manifest("sweep", args.config, cfg_text, {
        "seed": args.seed, "beta_min": args.beta_min, "beta_max": args.beta_max,
        "beta_steps": args.beta_steps, "gamma_min": args.gamma_min,
        "gamma_max": args.gamma_max, "gamma_steps": args.gamma_steps,
        "budget_factor": args.budget_factor})
    orbit, floquet, adjoint, offsets = _orbit_pipeline(model, settings)
    G = find_singular_points(compute_G(orbit, adjoint, model.forcing))
    spec = _region_spec(args)
    beta0 = orbit.beta0
    betas = np.linspace(args.beta_min if args.beta_min is not None else beta0 - 1e-4,
                        args.beta_max if args.beta_max is not None else beta0 + 1e-4,
                        args.beta_steps)
    gammas = np.linspace(args.gamma_min, args.gamma_max, args.gamma_steps)
    cells = sim.sweep_grid(model, params.alpha, betas, gammas, spec, G, orbit, offsets,
                           jobs=args.jobs, budget_factor=args.budget_factor)
    columns = ["alpha", "beta", "gamma", "mu", "Delta", "classification",
               "theta_lock", "drift_rate", "predicted_inside"]
    rows = [[c.alpha, c.beta, c.gamma, c.mu, c.Delta, c.classification,
             c.theta_lock, c.drift_rate, c.predicted_inside] for c in cells]
    man.write_csv(args.out, "sweep.csv", columns, rows)
    man.write_json(args.out, "sweep.json", {
        "n_cells": len(cells),
        "n_locked": sum(1 for c in cells if c.classification == "locked"),
        "n_drifting": sum(1 for c in cells if c.classification == "drifting"),
        "n_error": sum(1 for c in cells if c.classification == "error"),
        "agreement": sum(1 for c in cells
                         if (c.classification == "locked") == c.predicted_inside),
    })
    man.finalize(args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="modlock",
        description="Frequency-locking analysis of forced S1-equivariant oscillators")
    parser.add_argument("--version", action="version", version=f"modlock {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)

    def region_knobs(p):
        p.add_argument("--mu-star-low", type=float, default=0.5, dest="mu_star_low")
        p.add_argument("--mu-star-high", type=float, default=0.1, dest="mu_star_high")
        p.add_argument("--margin", type=float, default=None)

    p = sub.add_parser("orbit", help="periodic orbit, Floquet data, adjoint")
    common(p)
    p.set_defaults(fn=cmd_orbit)

    p = sub.add_parser("gfun", help="locking function G and singular structure")
    common(p)
    p.add_argument("--n-grid", type=int, default=512, dest="n_grid")
    p.add_argument("--n-quad", type=int, default=512, dest="n_quad")
    p.set_defaults(fn=cmd_gfun)

    p = sub.add_parser("region", help="locking-region boundary cross-sections")
    common(p)
    region_knobs(p)
    p.add_argument("--section", choices=("alpha", "beta"), default="alpha")
    p.add_argument("--var-min", type=float, default=None, dest="var_min")
    p.add_argument("--var-max", type=float, default=None, dest="var_max")
    p.add_argument("--var-steps", type=int, default=256, dest="var_steps")
    p.set_defaults(fn=cmd_region)

    p = sub.add_parser("simulate", help="forced run with lock classification")
    common(p)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--init-psi", type=float, default=0.0, dest="init_psi")
    p.add_argument("--normal-offset", type=float, default=0.0, dest="normal_offset")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate", help="averaged-drift validation report")
    common(p)
    p.add_argument("--n-probe", type=int, default=8, dest="n_probe")
    p.add_argument("--with-boundary", action="store_true", dest="with_boundary")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("sweep", help="grid classification over (beta, gamma)")
    common(p)
    region_knobs(p)
    p.add_argument("--beta-min", type=float, default=None, dest="beta_min")
    p.add_argument("--beta-max", type=float, default=None, dest="beta_max")
    p.add_argument("--beta-steps", type=int, default=3, dest="beta_steps")
    p.add_argument("--gamma-min", type=float, required=True, dest="gamma_min")
    p.add_argument("--gamma-max", type=float, required=True, dest="gamma_max")
    p.add_argument("--gamma-steps", type=int, default=3, dest="gamma_steps")
    p.add_argument("--budget-factor", type=float, default=0.25, dest="budget_factor")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ModlockError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
