import json
import io as pyio

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from modekit import io
from modekit.core import FrameStack, PixelGrid, ShapeError, ValidationError
from modekit.fiber_sim import FiberParams
from modekit.modes import ModeSet
from modekit.pdc_sim import PdcParams

frame_arrays = st.tuples(st.integers(0, 5), st.integers(1, 6), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.float32, s, elements=st.floats(0, 1e6, width=32)))


@given(frame_arrays, st.sampled_from(["m", "rad"]))
def test_container_roundtrip_bit_identical(tmp_path_factory, frames, unit):
    path = tmp_path_factory.mktemp("c") / "s.mkfs"
    T, ny, nx = frames.shape
    grid = PixelGrid(nx, ny, 1.5e-6, 2.5e-6, -3e-6, 4e-6, unit)
    io.write_frames(path, FrameStack(grid, frames))
    back = io.read_frames(path)
    assert back.grid == grid
    assert back.frames.dtype == np.dtype("<f4")
    assert back.frames.tobytes() == frames.astype("<f4").tobytes()
    io.write_frames(path.with_suffix(".b"), back)
    assert path.read_bytes() == path.with_suffix(".b").read_bytes()


def test_container_header_layout(tmp_path):
    grid = PixelGrid(3, 2, 1.0, 2.0, 3.0, 4.0, "rad")
    path = tmp_path / "s.mkfs"
    io.write_frames(path, FrameStack(grid, np.arange(12, dtype=float).reshape(2, 2, 3)))
    raw = path.read_bytes()
    assert raw[:4] == b"MKFS"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert [int.from_bytes(raw[i:i + 4], "little") for i in (6, 10, 14)] == [3, 2, 2]
    np.testing.assert_array_equal(np.frombuffer(raw[18:50], "<f8"), [1, 2, 3, 4])
    assert raw[50] == 1
    np.testing.assert_array_equal(np.frombuffer(raw[51:], "<f4"), np.arange(12))


def test_corrupt_containers(tmp_path):
    grid = PixelGrid.centered(3, 3, 1.0)
    path = tmp_path / "s.mkfs"
    io.write_frames(path, FrameStack(grid, np.ones((2, 3, 3))))
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-4])
    with pytest.raises(io.FormatError, match="payload"):
        io.read_frames(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(io.FormatError, match="magic"):
        io.read_frames(tmp_path / "magic")
    (tmp_path / "hdr").write_bytes(raw[:10])
    with pytest.raises(io.FormatError, match="truncated"):
        io.read_frames(tmp_path / "hdr")
    bad_unit = bytearray(raw)
    bad_unit[50] = 7
    (tmp_path / "unit").write_bytes(bytes(bad_unit))
    with pytest.raises(io.FormatError, match="unit"):
        io.read_frames(tmp_path / "unit")


def test_bundle_roundtrip(tmp_path, rng):
    grid = PixelGrid.centered(5, 4, 0.1)
    ms = ModeSet(grid, np.array([0.5, 0.3, 0.2]), rng.standard_normal((3, 4, 5)))
    path = tmp_path / "m.mkms"
    io.write_bundle(path, ms)
    back = io.read_bundle(path)
    assert back.grid == grid
    np.testing.assert_array_equal(back.weights, ms.weights)
    np.testing.assert_array_equal(back.profiles, ms.profiles.astype(np.float32))
    assert io.sniff(path) == "bundle"
    with pytest.raises(io.FormatError):
        io.read_frames(path)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(io.FormatError):
        io.read_bundle(path)


def test_failed_write_leaves_nothing(tmp_path):
    def boom(fh):
        fh.write(b"partial")
        raise RuntimeError("disk full")

    with pytest.raises(RuntimeError):
        io.atomic_write(tmp_path / "x.bin", boom)
    assert list(tmp_path.iterdir()) == []


@given(arrays(np.uint16, st.tuples(st.integers(1, 8), st.integers(1, 8))))
def test_pgm16_against_pillow(tmp_path_factory, img):
    h, w = img.shape
    data = b"P5\n# comment\n%d %d\n65535\n" % (w, h) + img.astype(">u2").tobytes()
    path = tmp_path_factory.mktemp("p") / "x.pgm"
    path.write_bytes(data)
    ref = np.asarray(Image.open(pyio.BytesIO(data)), dtype=float)
    got = io.read_pgm(path)
    np.testing.assert_array_equal(got, ref)
    np.testing.assert_array_equal(got, img)
    assert got.min() >= 0 and got.max() <= 65535


def test_pgm8_written_by_pillow(tmp_path, rng):
    img = rng.integers(0, 256, (7, 9)).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "a.pgm")
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_writer_read_by_pillow(tmp_path, rng):
    img = rng.random((6, 10)) * 3 + 1
    off, scale = io.write_pgm(tmp_path / "o.pgm", img)
    decoded = np.asarray(Image.open(tmp_path / "o.pgm"), dtype=float)
    assert decoded.max() == 65535 and decoded.min() == 0
    np.testing.assert_allclose(off + scale * decoded, img, atol=scale)
    side = (tmp_path / "o.pgm.scale.txt").read_text().split()
    assert float(side[1]) == off and float(side[3]) == scale
    assert (tmp_path / "o.pgm").read_bytes().startswith(b"P5\n10 6\n65535\n")


def test_csv_row_major(tmp_path):
    d = tmp_path / "csv"
    d.mkdir()
    (d / "f0.csv").write_text("1,2,3\n4,5,6\n7,8,9\n")
    stack = io.import_frames(d, "csv_dir", {"dx": 2.0})
    np.testing.assert_array_equal(stack.frames[0].reshape(-1), np.arange(1, 10))
    assert stack.grid.dx == 2.0 and stack.grid.dy == 2.0


def test_directory_order_and_errors(tmp_path):
    d = tmp_path / "pgm"
    d.mkdir()
    for name, value in (("b.pgm", 2), ("a.pgm", 1), ("c.pgm", 3)):
        Image.fromarray(np.full((3, 4), value, np.uint8)).save(d / name)
    stack = io.import_frames(d, "pgm_dir")
    np.testing.assert_array_equal(stack.frames[:, 0, 0], [1, 2, 3])
    assert list(stack.labels) == ["a.pgm", "b.pgm", "c.pgm"]
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(d / "d.pgm")
    with pytest.raises(ShapeError, match="d.pgm"):
        io.import_frames(d, "pgm_dir")
    c = tmp_path / "csv"
    c.mkdir()
    (c / "a.csv").write_text("1,2\n3,4\n")
    (c / "b.csv").write_text("1,nan\n3,4\n")
    with pytest.raises(ValidationError, match="b.csv"):
        io.import_frames(c, "csv_dir")
    with pytest.raises(io.FormatError):
        io.import_frames(tmp_path / "csv", "pgm_dir")


def test_params_files(tmp_path):
    f = tmp_path / "pdc.txt"
    f.write_text("# reference set\ngain = 3.8\nfwhm_x = 140e-6\nmismatch = -50  # 1/m\n"
                 "grid_n = 32\ngrid_half_extent = 0.035\nrho_nodes = 96, 120\n")
    p = io.pdc_params(io.read_params(f))
    assert isinstance(p, PdcParams)
    assert p.gain == 3.8 and p.mismatch == -50 and p.rho_nodes == (96, 120)
    assert p.angle_grid.nx == 32 and p.angle_grid.x[-1] == pytest.approx(0.035)
    f.write_text("gain = 3.8\ncolour = red\n")
    with pytest.raises(ValidationError, match="colour"):
        io.pdc_params(io.read_params(f))
    f.write_text("core_radius = 4.1e-6\nn_core = 1.4682\nn_clad = 1.4615\n")
    fp = io.fiber_params(io.read_params(f))
    assert isinstance(fp, FiberParams) and fp.na == pytest.approx(0.1401, abs=1e-3)
    f.write_text("na 0.1\n")
    with pytest.raises(io.FormatError, match=":1"):
        io.read_params(f)
    io.write_params(f, {"a": 1, "b": [2, 3]})
    assert io.read_params(f) == {"a": 1, "b": [2, 3]}


def test_jsonl_log():
    buf = pyio.StringIO()
    log = io.JsonlLog(buf)
    log.emit("x", k=np.float64(1.5), v=np.arange(2))
    log.emit("y")
    lines = [json.loads(s) for s in buf.getvalue().splitlines()]
    assert lines == [{"event": "x", "k": 1.5, "v": [0, 1]}, {"event": "y"}]
