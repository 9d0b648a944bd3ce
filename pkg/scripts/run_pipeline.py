#!/usr/bin/env python3
"""End-to-end demo: orbit -> Floquet/adjoint -> locking function -> forced run.

Usage: python3 scripts/run_pipeline.py [--mu 0.05] [--alpha 100] [--delta-frac 0.5]
"""

import argparse

import numpy as np

from modlock import sim
from modlock.locking import RegionSpec, averaged_equilibria, compute_G, find_singular_points, in_locking_region
from modlock.model import ControlParams, make_vdp_laser
from modlock.orbit import (
    compute_adjoint,
    compute_floquet,
    compute_phase_offsets,
    default_orbit_guess,
    find_periodic_orbit,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mu", type=float, default=0.05)
    ap.add_argument("--alpha", type=float, default=100.0)
    ap.add_argument("--delta-frac", type=float, default=0.5,
                    help="detuning position inside (G-, G+): 0 = G-, 1 = G+")
    ap.add_argument("--init-psi", type=float, default=0.3)
    args = ap.parse_args()

    model = make_vdp_laser()
    orbit = find_periodic_orbit(model, default_orbit_guess(model))
    print(f"orbit: T={orbit.T:.9f}  beta0={orbit.beta0:.9f}  "
          f"closure={orbit.closure_residual:.2e}")
    floquet = compute_floquet(model, orbit)
    print(f"multipliers: {np.round(floquet.multipliers, 8)}  "
          f"hyperbolic={floquet.hyperbolic}")
    adjoint = compute_adjoint(model, orbit, floquet)
    offsets = compute_phase_offsets(model, orbit)
    print(f"adjoint normalization residual: {adjoint.normalization_residual:.2e}  "
          f"alpha0={offsets.alpha0:.6f}")

    G = find_singular_points(compute_G(orbit, adjoint, model.forcing))
    print(f"G range: [{G.G_minus:.6f}, {G.G_plus:.6f}]  "
          f"singular points: {[round(s.theta, 4) for s in G.singular_points]}")

    Delta = G.G_minus + args.delta_frac * (G.G_plus - G.G_minus)
    params = ControlParams(alpha=args.alpha, gamma=args.mu * args.alpha,
                           beta=orbit.beta0 + args.mu**2 * Delta)
    verdict = in_locking_region(params, G, RegionSpec())
    print(f"Delta={Delta:.6f}  predicted: "
          f"{'inside' if verdict.inside else 'outside ' + str(verdict.reasons)}")
    apm = averaged_equilibria(Delta, G)
    for e in apm.equilibria:
        print(f"  averaged equilibrium theta={e.theta:.4f} "
              f"{'stable' if e.stable else 'unstable'} (G'={e.slope:+.4f})")

    horizon = 1.5 * sim.default_transient_cut(params, apm) if apm.equilibria else 2e4
    result = sim.analyze_forced_run(model, params, orbit, offsets,
                                    sim.torus_init(offsets, args.init_psi), horizon,
                                    equilibria=apm.equilibria)
    cls = result.classification
    print(f"forced run (horizon {horizon:.0f}): {cls.kind}")
    if cls.kind == "locked":
        print(f"  locked offset sigma={result.sigma_hat:.4f}, nearest equilibrium "
              f"{cls.nearest_equilibrium:.4f}, lock residual {result.residual:.4f}")
    elif cls.kind == "drifting":
        print(f"  drift rate {cls.drift_rate:.3e} rad/unit time")


if __name__ == "__main__":
    main()
