#!/usr/bin/env python3
"""Frequency-domain sweeps of the frozen-coefficient symbol machinery.

Samples the accretivity form, the reduced velocity-symbol ellipticity margin,
and the half-space boundary determinant over random and structured frequency
grids, printing worst cases and optionally writing the raw sweeps to CSV.
"""

import argparse
import csv

import numpy as np

from elflow.linear_analysis import (
    FrozenCoefficients,
    accretivity,
    lopatinskii_determinant,
    stokes_symbol,
)
from elflow.thermo import CoefficientSet, FreeEnergyModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    model = FreeEnergyModel(c_v=1.0, lambda_0=0.04, b=0.01, theta_ref=1.0)
    coeffs = CoefficientSet.from_values(mu_s=0.1, mu_V=0.3, mu_D=0.2,
                                        mu_P=0.15, mu_L=0.05, mu_0=0.02,
                                        gamma=0.3, alpha=0.1)
    rng = np.random.default_rng(args.seed)
    fc = FrozenCoefficients.from_model(model, coeffs, 1.0,
                                       np.array([0.6, 0.8]),
                                       0.3 * rng.standard_normal((2, 2)))

    rows = []
    acc_min, stokes_min = np.inf, np.inf
    for _ in range(args.samples):
        z = complex(rng.uniform(0, 10), rng.uniform(-10, 10))
        xi = rng.uniform(-10, 10, size=2)
        v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        v /= np.linalg.norm(v)
        acc = accretivity(fc, z, xi, v)["lhs"]
        margin = stokes_symbol(fc, z, xi)["ellipticity_margin"]
        acc_min = min(acc_min, acc)
        stokes_min = min(stokes_min, margin)
        rows.append((z.real, z.imag, xi[0], xi[1], acc, margin))
    print(f"accretivity min {acc_min:.3e} over {args.samples} samples")
    print(f"Stokes ellipticity margin min {stokes_min:.3e}")

    nu = np.array([0.0, 1.0])
    ls_min, ls_arg = np.inf, None
    for phase in np.linspace(-0.45 * np.pi, 0.45 * np.pi, 9):
        for xt in np.linspace(-10.0, 10.0, 41):
            z = np.exp(1j * phase)
            val = abs(lopatinskii_determinant(fc, z, np.array([xt, 0.0]), nu))
            if val < ls_min:
                ls_min, ls_arg = val, (phase, xt)
    print(f"boundary determinant min {ls_min:.3e} "
          f"at phase {ls_arg[0]:.3f}, tangential {ls_arg[1]:.2f}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re_z", "im_z", "xi_x", "xi_y", "accretivity",
                        "stokes_margin"])
            w.writerows(rows)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
