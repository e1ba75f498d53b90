"""Simulate the PDC far-field correlation and print the mode statistics.

    python3 scripts/pdc_theory.py --n-s 1.66 --grid 64 --out pdc_modes.mkms
"""
import argparse
import warnings

import numpy as np

from modekit import io
from modekit.core import PixelGrid
from modekit.modes import decompose, exponential_fit, schmidt_number
from modekit.pdc_sim import NegativityWarning, PdcParams, g1_pdc


def fwhm(x, y):
    above = x[y >= 0.5 * y.max()]
    return above.max() - above.min()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-s", type=float, default=1.66)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--half-angle", type=float, default=35e-3)
    ap.add_argument("--nodes", type=int, nargs=2, default=(128, 160))
    ap.add_argument("--out")
    args = ap.parse_args()

    grid = PixelGrid.centered(args.grid, args.grid, 2 * args.half_angle / (args.grid - 1), unit="rad")
    params = PdcParams(n_s=args.n_s, angle_grid=grid, rho_nodes=tuple(args.nodes))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativityWarning)
        g1 = g1_pdc(params)
    intensity = g1.diagonal_image()
    mid = args.grid // 2
    print(f"min/max of G1 before abs: {g1.meta['min_ratio']:.2e}")
    print(f"intensity FWHM x: {fwhm(grid.x, intensity[mid]) * 1e3:.1f} mrad, "
          f"y: {fwhm(grid.y, intensity[:, mid]) * 1e3:.1f} mrad (pixel {grid.dx * 1e3:.2f} mrad)")
    modes = decompose(g1, overwrite=True)
    w = modes.weights
    rate, _, r2 = exponential_fit(w, 50)
    print(f"K(200) = {schmidt_number(w, 200):.2f}  K(all) = {schmidt_number(w):.2f}")
    print(f"exp fit over 50 modes: rate {rate:.4f}, R^2 {r2:.4f}")
    for n in (52, 70, 200):
        print(f"intensity captured by {n} modes: {w[:n].sum() / w.sum():.1%}")
    print("first weights:", np.array2string(w[:10], precision=4))
    if args.out:
        io.write_bundle(args.out, modes.truncated(200))


if __name__ == "__main__":
    main()
