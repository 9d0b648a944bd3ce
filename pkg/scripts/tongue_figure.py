#!/usr/bin/env python3
"""Produce the data behind an alpha = const cross-section of the locking region:
predicted boundary curves plus a measured classification grid, written as CSVs.

Usage: python3 scripts/tongue_figure.py --out tongue_data [--alpha 100]
       [--gamma-min 2] [--gamma-max 8] [--grid 7x7] [--jobs 4]
"""

import argparse
import os

import numpy as np

from modlock import sim
from modlock.locking import AlphaSection, RegionSpec, boundary_curves, compute_G, find_singular_points
from modlock.model import make_vdp_laser
from modlock.orbit import (
    compute_adjoint,
    compute_floquet,
    compute_phase_offsets,
    default_orbit_guess,
    find_periodic_orbit,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tongue_data")
    ap.add_argument("--alpha", type=float, default=100.0)
    ap.add_argument("--gamma-min", type=float, default=2.0)
    ap.add_argument("--gamma-max", type=float, default=8.0)
    ap.add_argument("--grid", default="7x7")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--budget-factor", type=float, default=0.3)
    args = ap.parse_args()
    nb, ng = (int(v) for v in args.grid.split("x"))

    model = make_vdp_laser()
    orbit = find_periodic_orbit(model, default_orbit_guess(model))
    adjoint = compute_adjoint(model, orbit, compute_floquet(model, orbit))
    offsets = compute_phase_offsets(model, orbit)
    G = find_singular_points(compute_G(orbit, adjoint, model.forcing))
    spec = RegionSpec()

    os.makedirs(args.out, exist_ok=True)
    mu_hi = args.gamma_max / args.alpha
    span = 1.3 * mu_hi**2 * max(abs(G.G_minus), abs(G.G_plus))
    betas_fine = np.linspace(orbit.beta0 - span, orbit.beta0 + span, 512)
    section = boundary_curves(G, spec, AlphaSection(args.alpha), betas_fine)
    with open(os.path.join(args.out, "boundary.csv"), "w", encoding="utf-8") as fh:
        fh.write("beta,gamma,branch\n")
        for pl in section.polylines:
            for u, g in zip(pl.u, pl.gamma):
                fh.write(f"{u:.17g},{g:.17g},{pl.label}\n")

    betas = np.linspace(orbit.beta0 - span, orbit.beta0 + span, nb)
    gammas = np.linspace(args.gamma_min, args.gamma_max, ng)
    cells = sim.sweep_grid(model, args.alpha, betas, gammas, spec, G, orbit, offsets,
                           jobs=args.jobs, budget_factor=args.budget_factor)
    with open(os.path.join(args.out, "grid.csv"), "w", encoding="utf-8") as fh:
        fh.write("beta,gamma,classification,predicted_inside,theta_lock,drift_rate\n")
        for c in cells:
            fh.write(f"{c.beta:.17g},{c.gamma:.17g},{c.classification},"
                     f"{str(c.predicted_inside).lower()},{c.theta_lock:.17g},"
                     f"{c.drift_rate:.17g}\n")
    agree = sum(1 for c in cells if (c.classification == "locked") == c.predicted_inside)
    print(f"wrote {args.out}/boundary.csv and {args.out}/grid.csv; "
          f"prediction agreement {agree}/{len(cells)}")


if __name__ == "__main__":
    main()
