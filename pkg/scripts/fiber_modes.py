"""LP mode census of the step-index fiber over a range of numerical apertures.

    python3 scripts/fiber_modes.py --radius 4.1e-6 --wavelength 532e-9
"""
import argparse

import numpy as np

from modekit.fiber_sim import FiberParams, approx_mode_count, lp_cutoffs, mode_count


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--radius", type=float, default=4.1e-6)
    ap.add_argument("--wavelength", type=float, default=532e-9)
    ap.add_argument("--na", type=float, nargs=2, default=(0.10, 0.20))
    args = ap.parse_args()

    print(f"{'NA':>6} {'V':>7} {'modes':>5} {'4V^2/pi^2+2':>11}  guided")
    for na in np.arange(args.na[0], args.na[1] + 1e-9, 0.005):
        p = FiberParams(args.radius, float(na), args.wavelength)
        labels = " ".join(f"LP{l}{m}" for l, m, _ in lp_cutoffs(p))
        print(f"{na:6.3f} {p.v_number:7.3f} {mode_count(p):5d} {approx_mode_count(p.v_number):11.1f}  {labels}")
    p = FiberParams(args.radius, args.na[1], args.wavelength)
    print("cutoffs:", ", ".join(f"LP{l}{m} {c:.4f}" for l, m, c in lp_cutoffs(p)))


if __name__ == "__main__":
    main()
