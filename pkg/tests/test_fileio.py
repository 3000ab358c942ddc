import numpy as np
import pytest

from dagf.fileio import (read_fimg, read_image, read_kernel_field, read_manifest, read_png,
                         write_fimg, write_image, write_kernel_field, write_manifest)


def test_fimg_round_trip(tmp_path, rng):
    for shape in [(5, 7), (4, 6, 3)]:
        img = rng.normal(size=shape).astype(np.float32)
        write_fimg(tmp_path / "a.fimg", img)
        np.testing.assert_array_equal(read_fimg(tmp_path / "a.fimg"), img)


def test_fimg_rejects_bad_files(tmp_path):
    (tmp_path / "x.fimg").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        read_fimg(tmp_path / "x.fimg")
    write_fimg(tmp_path / "y.fimg", np.zeros((2, 2)))
    (tmp_path / "z.fimg").write_bytes((tmp_path / "y.fimg").read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_fimg(tmp_path / "z.fimg")


def test_png_8_and_16_bit(tmp_path, rng):
    img = rng.random((6, 5))
    write_image(tmp_path / "a.png", img, bits=16)
    arr, peak = read_png(tmp_path / "a.png")
    assert peak == 65535.0
    np.testing.assert_allclose(read_image(tmp_path / "a.png"), img, atol=1 / 65535)
    rgb = rng.random((4, 4, 3))
    write_image(tmp_path / "b.png", rgb)
    np.testing.assert_allclose(read_image(tmp_path / "b.png"), rgb, atol=0.5 / 255 + 1e-12)


def test_kernel_field_dump(tmp_path, rng):
    w = rng.normal(size=(9, 4, 5)).astype(np.float32)
    write_kernel_field(tmp_path / "k.fimg", w)
    np.testing.assert_array_equal(read_kernel_field(tmp_path / "k.fimg"), w)


def test_manifest_relative_paths(tmp_path):
    write_manifest(tmp_path / "m.tsv", [("g0.png", "t0.png"), ("/abs/g1.png", "t1.png")])
    pairs = read_manifest(tmp_path / "m.tsv")
    assert pairs[0] == (str(tmp_path / "g0.png"), str(tmp_path / "t0.png"))
    assert pairs[1][0] == "/abs/g1.png"
    (tmp_path / "bad.tsv").write_text("only-one-column\n")
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "bad.tsv")
