"""File formats: frame containers, mode bundles, PGM/CSV frames, parameter files.

Frame container (little-endian)::

    "MKFS" u16 version  u32 nx  u32 ny  u32 T  f64 dx dy x0 y0  u8 unit
    T * ny * nx f32, frame-major, row-major

Mode bundle::

    "MKMS" u16 version  u32 nx  u32 ny  f64 dx dy x0 y0  u8 unit  u32 M
    M f64 weights, then M * ny * nx f32 profiles

``unit`` is 0 for metres and 1 for radians.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .core import FrameStack, PixelGrid, ShapeError, ValidationError
from .modes import ModeSet

FRAMES_MAGIC = b"MKFS"
BUNDLE_MAGIC = b"MKMS"
VERSION = 1
_FRAMES_HEADER = struct.Struct("<4sHIII4dB")
_BUNDLE_HEADER = struct.Struct("<4sHII4dBI")
_UNIT_TAGS = {"m": 0, "rad": 1}
_TAG_UNITS = {v: k for k, v in _UNIT_TAGS.items()}


class FormatError(ValueError):
    pass


def atomic_write(path, write) -> None:
    """Call ``write(fileobj)`` on a temp file next to ``path``, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _unit_tag(grid: PixelGrid) -> int:
    return _UNIT_TAGS[grid.unit]


def _grid_from(nx, ny, dx, dy, x0, y0, tag) -> PixelGrid:
    if tag not in _TAG_UNITS:
        raise FormatError(f"unknown unit tag {tag}")
    try:
        return PixelGrid(nx, ny, dx, dy, x0, y0, _TAG_UNITS[tag])
    except ValidationError as e:
        raise FormatError(f"corrupt header: {e}") from e


def write_frames(path, stack: FrameStack, chunk: int = 256) -> None:
    g = stack.grid
    header = _FRAMES_HEADER.pack(FRAMES_MAGIC, VERSION, g.nx, g.ny, stack.n_frames,
                                 g.dx, g.dy, g.x0, g.y0, _unit_tag(g))

    def write(fh):
        fh.write(header)
        for start in range(0, stack.n_frames, chunk):
            block = np.asarray(stack.frames[start:start + chunk])
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())

    atomic_write(path, write)


def read_frames(path, mmap: bool = True, validate: bool = True) -> FrameStack:
    """Read a frame container; the payload is memory-mapped by default."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        raw = fh.read(_FRAMES_HEADER.size)
    if len(raw) < _FRAMES_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny, T, dx, dy, x0, y0, tag = _FRAMES_HEADER.unpack(raw)
    if magic != FRAMES_MAGIC:
        raise FormatError(f"{path}: not a frame container (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    grid = _grid_from(nx, ny, dx, dy, x0, y0, tag)
    expected = _FRAMES_HEADER.size + 4 * T * nx * ny
    if size != expected:
        raise FormatError(f"{path}: payload is {size - _FRAMES_HEADER.size} bytes, header implies {4 * T * nx * ny}")
    if mmap and T > 0:
        frames = np.memmap(path, dtype="<f4", mode="r", offset=_FRAMES_HEADER.size, shape=(T, ny, nx))
    else:
        frames = np.fromfile(path, dtype="<f4", offset=_FRAMES_HEADER.size).reshape(T, ny, nx)
    return FrameStack(grid, frames, validate=validate)


def write_bundle(path, modes: ModeSet) -> None:
    g = modes.grid
    m = len(modes)
    header = _BUNDLE_HEADER.pack(BUNDLE_MAGIC, VERSION, g.nx, g.ny, g.dx, g.dy, g.x0, g.y0, _unit_tag(g), m)

    def write(fh):
        fh.write(header)
        fh.write(np.ascontiguousarray(modes.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(modes.profiles, dtype="<f4").tobytes())

    atomic_write(path, write)


def read_bundle(path) -> ModeSet:
    data = Path(path).read_bytes()
    if len(data) < _BUNDLE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny, dx, dy, x0, y0, tag, m = _BUNDLE_HEADER.unpack_from(data)
    if magic != BUNDLE_MAGIC:
        raise FormatError(f"{path}: not a mode bundle (magic {magic!r})")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported bundle version {version}")
    grid = _grid_from(nx, ny, dx, dy, x0, y0, tag)
    off = _BUNDLE_HEADER.size
    expected = off + 8 * m + 4 * m * nx * ny
    if len(data) != expected:
        raise FormatError(f"{path}: size {len(data)} does not match header ({expected})")
    weights = np.frombuffer(data, dtype="<f8", count=m, offset=off).astype(float)
    profiles = np.frombuffer(data, dtype="<f4", offset=off + 8 * m).reshape(m, ny, nx).astype(float)
    return ModeSet(grid, weights, profiles)


def sniff(path) -> str:
    """``"frames"`` or ``"bundle"`` from the magic bytes."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == FRAMES_MAGIC:
        return "frames"
    if magic == BUNDLE_MAGIC:
        return "bundle"
    raise FormatError(f"{path}: unrecognized file (magic {magic!r})")


# --- PGM ---------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past the last one."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Decode a binary (P5) or ASCII (P2) PGM into a float array.

    16-bit samples are big-endian, per the Netpbm format.
    """
    data = Path(path).read_bytes()
    tokens, pos = _pgm_tokens(data, 4)
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header") from e
    if not (0 < maxval < 65536) or width < 1 or height < 1:
        raise FormatError(f"{path}: bad PGM header values")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        count = width * height
        nbytes = count * np.dtype(dtype).itemsize
        if len(data) - pos < nbytes:
            raise FormatError(f"{path}: truncated PGM payload")
        img = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    elif magic == b"P2":
        vals = data[pos:].split()
        if len(vals) < width * height:
            raise FormatError(f"{path}: truncated PGM payload")
        img = np.array([int(v) for v in vals[:width * height]])
    else:
        raise FormatError(f"{path}: not a PGM file")
    return img.reshape(height, width).astype(np.float64)


def write_pgm(path, image, offset: Optional[float] = None, scale: Optional[float] = None) -> tuple[float, float]:
    """Write a P5 PGM with maxval 65535, linearly mapped.

    ``value = offset + scale * sample``; both are written to a sidecar
    ``<path>.scale.txt`` and returned.
    """
    image = np.asarray(image, dtype=float)
    lo = float(image.min()) if offset is None else offset
    if scale is None:
        span = float(image.max()) - lo
        scale = span / 65535 if span > 0 else 1.0
    samples = np.clip(np.rint((image - lo) / scale), 0, 65535).astype(">u2")
    h, w = image.shape
    header = f"P5\n{w} {h}\n65535\n".encode()
    atomic_write(path, lambda fh: (fh.write(header), fh.write(samples.tobytes())))
    sidecar = Path(str(path) + ".scale.txt")
    atomic_write(sidecar, lambda fh: fh.write(f"offset {lo!r}\nscale {scale!r}\n".encode()))
    return lo, scale


def read_csv_frame(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def import_frames(path, format: str = "container", grid_meta: Optional[dict] = None) -> FrameStack:
    """Load a frame stack from a container file or a directory of images.

    For ``"pgm_dir"`` and ``"csv_dir"`` the files are taken in lexicographic
    order; ``grid_meta`` supplies ``dx, dy, x0, y0, unit`` (defaults: unit
    pitch, origin 0, metres).
    """
    if format == "container":
        return read_frames(path)
    if format not in ("pgm_dir", "csv_dir"):
        raise ValueError(f"unknown frame format {format!r}")
    suffix, reader = (".pgm", read_pgm) if format == "pgm_dir" else (".csv", read_csv_frame)
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() == suffix)
    if not files:
        raise FormatError(f"no *{suffix} files in {path}")
    frames = []
    for f in files:
        img = reader(f)
        if frames and img.shape != frames[0].shape:
            raise ShapeError(f"{f.name}: shape {img.shape} differs from {frames[0].shape} ({files[0].name})")
        if not np.all(np.isfinite(img)):
            raise ValidationError(f"{f.name}: non-finite values")
        frames.append(img)
    meta = dict(grid_meta or {})
    ny, nx = frames[0].shape
    grid = PixelGrid(nx, ny, float(meta.get("dx", 1.0)), float(meta.get("dy", meta.get("dx", 1.0))),
                     float(meta.get("x0", 0.0)), float(meta.get("y0", 0.0)), meta.get("unit", "m"))
    return FrameStack(grid, np.array(frames), labels=[f.name for f in files])


# --- parameter files and logs -----------------------------------------------

def read_params(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Numbers become floats/ints."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _parse_value(value)
    return out


def _parse_value(value: str):
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    if "," in value:
        return [_parse_value(v.strip()) for v in value.split(",")]
    return value


def write_params(path, params: dict) -> None:
    lines = [f"{k} = {','.join(map(str, v)) if isinstance(v, (list, tuple)) else v}" for k, v in params.items()]
    atomic_write(path, lambda fh: fh.write(("\n".join(lines) + "\n").encode()))


class JsonlLog:
    """One JSON object per line; used for every scalar the CLI derives."""

    def __init__(self, stream):
        self.stream = stream

    def emit(self, event: str, **fields) -> None:
        self.stream.write(json.dumps({"event": event, **fields}, default=_jsonable) + "\n")
        self.stream.flush()


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def save_matrix_txt(path, matrix: np.ndarray, header: str = "") -> None:
    atomic_write(path, lambda fh: np.savetxt(fh, matrix, fmt="%.9g", header=header))


def _grid_from_params(p: dict, unit: str) -> Optional[PixelGrid]:
    if "grid_n" not in p:
        return None
    n = int(p["grid_n"])
    half = float(p["grid_half_extent"])
    return PixelGrid.centered(n, n, 2 * half / (n - 1), unit=unit)


def pdc_params(p: dict):
    """:class:`PdcParams` from a flat parameter dict.

    Grid keys: ``grid_n`` and ``grid_half_extent`` (radians); quadrature keys:
    ``rho_nodes`` (one value or ``nx,ny``) and ``rho_extent``.
    """
    from .pdc_sim import PdcParams

    p = dict(p)
    known = {"gain", "fwhm_x", "ellipticity", "mismatch", "crystal_length", "lambda_p", "n_p", "n_s", "rho_extent"}
    kw = {k: float(p.pop(k)) for k in list(p) if k in known}
    grid = _grid_from_params(p, "rad")
    p.pop("grid_n", None), p.pop("grid_half_extent", None)
    if grid is not None:
        kw["angle_grid"] = grid
    if "rho_nodes" in p:
        nodes = p.pop("rho_nodes")
        nodes = nodes if isinstance(nodes, list) else [nodes, nodes]
        kw["rho_nodes"] = (int(nodes[0]), int(nodes[1]))
    if p:
        raise ValidationError(f"unknown PDC parameter(s): {', '.join(sorted(p))}")
    return PdcParams(**kw)


def fiber_params(p: dict):
    """:class:`FiberParams` from ``core_radius, na | n_core+n_clad, wavelength``.

    ``grid_n`` and ``grid_half_extent`` (metres) set the sampling grid.
    """
    from .fiber_sim import FiberParams

    p = dict(p)
    grid = _grid_from_params(p, "m")
    p.pop("grid_n", None), p.pop("grid_half_extent", None)
    radius = float(p.pop("core_radius", 4.1e-6))
    wavelength = float(p.pop("wavelength", 532e-9))
    if "n_core" in p or "n_clad" in p:
        if "na" in p:
            raise ValidationError("give either na or n_core/n_clad, not both")
        out = FiberParams.from_indices(radius, float(p.pop("n_core")), float(p.pop("n_clad")), wavelength, grid)
    else:
        out = FiberParams(radius, float(p.pop("na", 0.14)), wavelength, grid)
    if p:
        raise ValidationError(f"unknown fiber parameter(s): {', '.join(sorted(p))}")
    return out
