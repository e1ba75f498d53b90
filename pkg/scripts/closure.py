"""Synthetic closure test: HG generator -> frames -> reconstruction -> fidelities.

Also decomposes the exact |G1| of the generator (no sampling noise), which
bounds what any Siegert-based reconstruction can reach.

    python3 scripts/closure.py --modes 20 --frames 5000
"""
import argparse
import warnings

import numpy as np

from modekit.core import CovKind, FlatCovariance, PixelGrid
from modekit.modes import decompose, match_modes, schmidt_number
from modekit.pipeline import reconstruct
from modekit.stats import NoFilter, StatsConfig, Threshold
from modekit.synth import SynthConfig, exponential_weights, hermite_gauss_modeset, power_law_weights, sample_frames


def show(label, gen, found, count):
    f = [x for _, _, x in match_modes(gen, found, count)]
    print(f"{label:>22}: K {schmidt_number(found):6.2f}  fidelities {np.round(f, 3).tolist()}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--modes", type=int, default=20)
    ap.add_argument("--scale", type=float, default=10.0, help="weights exp(-m / scale)")
    ap.add_argument("--power", type=float, help="use weights m^-power instead")
    ap.add_argument("--frames", type=int, default=5000)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--seed", type=int, default=20240501)
    args = ap.parse_args()

    grid = PixelGrid.centered(args.grid, args.grid, 8.0 / (args.grid - 1))
    w = power_law_weights(args.modes, args.power) if args.power else exponential_weights(args.modes, args.scale)
    gen = hermite_gauss_modeset(grid, 1.0, w)
    g1 = gen.g1_matrix()
    print(f"generator K {schmidt_number(gen):.2f}; negative G1 entries {np.mean(g1 < -1e-12 * g1.max()):.1%}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        show("exact |G1|", gen, decompose(FlatCovariance(grid, np.abs(g1), CovKind.ABS_G1)), args.modes)
        stack = sample_frames(SynthConfig(gen, frames=args.frames, seed=args.seed))
        for name, flt in (("threshold 0.02", Threshold()), ("no filter", NoFilter())):
            rec = reconstruct(stack, StatsConfig(noise_filter=flt))
            show(f"T={args.frames} {name}", gen, rec.modes, args.modes)


if __name__ == "__main__":
    main()
