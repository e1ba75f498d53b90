"""Command-line entry point. Every derived scalar goes to stdout as a JSON line."""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .core import CovKind, FlatCovariance, FrameStack, cut_1d, fold_vector, require_same_grid
from .modes import decompose, exponential_fit, match_modes, reconstruct_intensity, schmidt_number
from .pipeline import reconstruct
from .stats import (DarkCov, MeanIntensity, NoFilter, StatsConfig, Threshold, denoise, mean_intensity, siegert_invert,
                    streaming_moments)

PROG = "modekit"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one line instead of usage + message
        raise CliError(message)


def _noise_filter(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "none":
        return NoFilter()
    if kind == "threshold":
        return Threshold(float(arg)) if arg else Threshold()
    if kind == "dark":
        if not arg:
            raise CliError("--denoise dark: needs a frame container path")
        return DarkCov(io.read_frames(arg))
    raise CliError(f"unknown --denoise mode {spec!r} (expected threshold:LEVEL, dark:PATH or none)")


def _load_stack(path: str, fmt: str, pitch: Optional[float]) -> FrameStack:
    meta = {} if pitch is None else {"dx": pitch, "dy": pitch}
    return io.import_frames(path, fmt, meta)


def _weights_stats(log: io.JsonlLog, event: str, weights: np.ndarray, truncate: int, fit_count: int, **extra):
    fields = dict(extra)
    fields["n_modes"] = int(weights.size)
    fields["K"] = schmidt_number(weights)
    fields[f"K_{truncate}"] = schmidt_number(weights, truncate)
    count = min(fit_count, int(np.count_nonzero(weights > 0)))
    if count >= 3:
        rate, intercept, r2 = exponential_fit(weights, count)
        fields.update(fit_count=count, decay_rate=rate, decay_intercept=intercept, decay_r2=r2)
    log.emit(event, **fields)


def cmd_reconstruct(args, log):
    stack = _load_stack(args.frames, args.format, args.pitch)
    cfg = StatsConfig(normalize_integral=args.normalize_integral,
                      subtract_shot_noise=args.shot_noise is not None,
                      shot_noise_scale=args.shot_noise or 0.0,
                      noise_filter=_noise_filter(args.denoise))
    if isinstance(cfg.noise_filter, DarkCov):
        require_same_grid(stack.grid, cfg.noise_filter.dark.grid, "frames and dark frames")
    rec = reconstruct(stack, cfg, n_modes=args.top_k, method=args.method)
    io.write_bundle(args.out, rec.modes)
    if args.mean_out:
        io.write_frames(args.mean_out, FrameStack(rec.mean.grid, rec.mean.values[None]))
    s = rec.summary(args.truncate)
    log.emit("reconstruct", frames=stack.n_frames, pixels=stack.grid.n_pixels, **s)


def cmd_simulate_pdc(args, log):
    from .pdc_sim import g1_pdc

    params = io.pdc_params(io.read_params(args.params))
    g1 = g1_pdc(params, memory_limit=args.memory_limit)
    if args.matrix:
        io.atomic_write(args.matrix, lambda fh: np.save(fh, g1.data))
    modes = decompose(g1, method=args.method, n_modes=None if args.method != "topk" else args.top_k,
                      overwrite=True)
    intensity = modes.weights.sum()
    _weights_stats(log, "simulate_pdc", modes.weights, args.truncate, args.fit_count,
                   pixels=modes.grid.n_pixels, min_ratio=g1.meta.get("min_ratio"),
                   total_weight=float(intensity))
    io.write_bundle(args.out, modes.truncated(min(args.top_k, len(modes))))


def cmd_simulate_fiber(args, log):
    from .fiber_sim import approx_mode_count, lp_labels, lp_modeset, mode_count

    params = io.fiber_params(io.read_params(args.params))
    modes = lp_modeset(params)
    io.write_bundle(args.out, modes)
    log.emit("simulate_fiber", v_number=params.v_number, mode_count=mode_count(params),
             approx_mode_count=approx_mode_count(params.v_number),
             labels=[f"LP{l}{m}{'' if l == 0 else '/' + o}" for l, m, o in lp_labels(params)])


def cmd_synth(args, log):
    from .synth import SynthConfig, sample_frames

    modes = io.read_bundle(args.modes)
    cfg = SynthConfig(modes, frames=args.frames, seed=args.seed, photon_scale=args.photons,
                      shot_noise=args.shot_noise, dark_sigma=args.dark_sigma, dtype="float32")
    stack = sample_frames(cfg)
    io.write_frames(args.out, stack)
    log.emit("synth", frames=args.frames, seed=args.seed, modes=len(modes), K_generator=schmidt_number(modes))


def cmd_fidelity(args, log):
    a, b = io.read_bundle(args.a), io.read_bundle(args.b)
    require_same_grid(a.grid, b.grid, "bundles")
    count = args.count or min(len(a), len(b))
    pairs = match_modes(a, b, count)
    for i, j, f in pairs:
        log.emit("match", index_a=i, index_b=j, fidelity=f)
    fs = np.array([f for _, _, f in pairs])
    log.emit("fidelity", count=count, min=float(fs.min()), mean=float(fs.mean()))


def _export(out: Path, name: str, image: np.ndarray, header: str = "") -> None:
    io.write_pgm(out / f"{name}.pgm", image)
    io.save_matrix_txt(out / f"{name}.txt", image, header)


def cmd_render(args, log):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = io.sniff(args.input)
    if kind == "bundle":
        modes = io.read_bundle(args.input)
        grid = modes.grid
    else:
        stack = io.read_frames(args.input)
        grid = stack.grid
    if args.what == "modes":
        if kind != "bundle":
            raise CliError("--what modes needs a mode bundle")
        count = min(args.count, len(modes))
        for m in range(count):
            _export(out, f"mode_{m:03d}", modes.profiles[m], f"weight {modes.weights[m]!r}")
        io.save_matrix_txt(out / "weights.txt", modes.weights[:, None])
        log.emit("render", what="modes", count=count)
    elif args.what == "mean":
        if kind == "bundle":
            image = reconstruct_intensity(modes, len(modes)).values
        else:
            image = mean_intensity(stack, StatsConfig(normalize_integral=args.normalize_integral)).values
        _export(out, "mean", image)
        log.emit("render", what="mean", total=float(image.sum() * grid.pixel_area))
    else:
        if args.at is None:
            raise CliError("--what g1cut needs --at")
        if kind == "bundle":
            g1 = FlatCovariance(grid, modes.g1_matrix(), CovKind.ABS_G1)
        else:
            cfg = StatsConfig(normalize_integral=args.normalize_integral)
            mean_vec, cov = streaming_moments(stack, cfg)
            mean = MeanIntensity(grid, fold_vector(grid, mean_vec).copy())
            g1 = denoise(siegert_invert(FlatCovariance(grid, cov), mean, cfg, inplace=True), cfg, inplace=True)
        cut = cut_1d(g1, args.axis, args.at)
        name = f"g1cut_{args.axis}"
        _export(out, name, cut.values, f"{args.axis} = {cut.fixed_value!r}")
        io.save_matrix_txt(out / f"{name}_coords.txt", cut.coords[:, None])
        log.emit("render", what="g1cut", axis=args.axis, at=cut.fixed_value, snapped=cut.snapped)


def cmd_report(args, log):
    modes = io.read_bundle(args.input)
    w = modes.weights
    fields = {}
    if args.mean:
        target = io.read_frames(args.mean)
        require_same_grid(modes.grid, target.grid, "bundle and mean")
        ref = np.asarray(target.frames, dtype=float).mean(axis=0)
        rec = reconstruct_intensity(modes, len(modes)).values
        fields["intensity_residual"] = float(np.linalg.norm(rec - ref) / np.linalg.norm(ref))
    k = schmidt_number(w)
    keep = max(1, int(round(k)))
    fields["captured_at_K"] = float(w[:keep].sum() / w.sum())
    _weights_stats(log, "report", w, args.truncate, args.fit_count, **fields)
    if args.text:
        print(f"modes {len(w)}  K {k:.3f}  K_{args.truncate} {schmidt_number(w, args.truncate):.3f}", file=sys.stderr)
        for m, x in enumerate(w[:args.count]):
            print(f"{m:4d}  {x:.6e}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description="Coherent-mode reconstruction from intensity frames.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("reconstruct", help="frames -> mode bundle")
    r.add_argument("--frames", required=True)
    r.add_argument("--format", choices=["container", "pgm_dir", "csv_dir"], default="container")
    r.add_argument("--pitch", type=float, help="pixel pitch for image directories")
    r.add_argument("--out", required=True)
    r.add_argument("--mean-out", help="also write the mean intensity as a one-frame container")
    r.add_argument("--normalize-integral", action="store_true")
    r.add_argument("--shot-noise", type=float, metavar="SCALE")
    r.add_argument("--denoise", default="threshold", metavar="threshold:L|dark:PATH|none")
    r.add_argument("--top-k", type=int)
    r.add_argument("--method", choices=["auto", "dense", "topk"], default="auto")
    r.add_argument("--truncate", type=int, default=200)
    r.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("simulate-pdc", help="PDC theory modes")
    s.add_argument("--params", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--matrix", help="save |G1| as .npy")
    s.add_argument("--top-k", type=int, default=200, help="modes stored in the bundle")
    s.add_argument("--method", choices=["auto", "dense", "topk"], default="auto")
    s.add_argument("--truncate", type=int, default=200)
    s.add_argument("--fit-count", type=int, default=50)
    s.add_argument("--memory-limit", type=float, default=2e9)
    s.set_defaults(func=cmd_simulate_pdc)

    f = sub.add_parser("simulate-fiber", help="fiber LP modes")
    f.add_argument("--params", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_simulate_fiber)

    y = sub.add_parser("synth", help="thermal frames from a mode bundle")
    y.add_argument("--modes", required=True)
    y.add_argument("--frames", type=int, required=True)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    y.add_argument("--photons", type=float)
    y.add_argument("--shot-noise", action="store_true")
    y.add_argument("--dark-sigma", type=float, default=0.0)
    y.set_defaults(func=cmd_synth)

    d = sub.add_parser("fidelity", help="match two mode bundles")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--count", type=int)
    d.set_defaults(func=cmd_fidelity)

    v = sub.add_parser("render", help="PGM and text exports")
    v.add_argument("--in", dest="input", required=True)
    v.add_argument("--what", choices=["modes", "mean", "g1cut"], required=True)
    v.add_argument("--axis", choices=["x", "y"], default="y")
    v.add_argument("--at", type=float)
    v.add_argument("--count", type=int, default=10)
    v.add_argument("--normalize-integral", action="store_true")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_render)

    q = sub.add_parser("report", help="summary of a mode bundle")
    q.add_argument("--in", dest="input", required=True)
    q.add_argument("--mean", help="frame container whose average is the reference intensity")
    q.add_argument("--truncate", type=int, default=200)
    q.add_argument("--fit-count", type=int, default=50)
    q.add_argument("--count", type=int, default=20)
    q.add_argument("--text", action="store_true", help="human-readable table on stderr")
    q.set_defaults(func=cmd_report)
    return p


def _one_line_warning(message, category, filename, lineno, file=None, line=None):
    print(f"{PROG}: warning: {category.__name__}: {message}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    log = io.JsonlLog(sys.stdout)
    warnings.showwarning = _one_line_warning
    try:
        args = build_parser().parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args, log)
    except (CliError, ValueError, OSError, MemoryError, ArithmeticError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 2 if isinstance(e, CliError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
