"""Netpbm I/O round trips and quantization behavior."""

import numpy as np
import pytest

from segforge.pgm import (
    PnmError,
    overlay_rgb,
    read_mask_pgm,
    read_pnm,
    read_probability_pgm,
    write_pgm16,
    write_pgm_mask,
    write_ppm,
)


def test_pgm16_round_trip_quantized(tmp_path):
    rng = np.random.default_rng(0)
    p = rng.random((6, 9)).astype(np.float32)
    path = tmp_path / "prob.pgm"
    write_pgm16(path, p)
    back = read_probability_pgm(path)
    assert back.shape == (6, 9)
    assert np.max(np.abs(back - p)) <= 0.5 / 65535 + 1e-9


def test_pgm16_header_and_sample_encoding(tmp_path):
    path = tmp_path / "one.pgm"
    write_pgm16(path, np.array([[1.0]], np.float32))
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n1 1\n65535\n")
    assert raw[-2:] == b"\xff\xff"  # big-endian 65535


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = (rng.random((7, 5)) > 0.5).astype(np.uint8)
    path = tmp_path / "mask.pgm"
    write_pgm_mask(path, m)
    arr, maxval = read_pnm(path)
    assert maxval == 1
    assert np.array_equal(read_mask_pgm(path), m)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    rgb = rng.integers(0, 256, (4, 6, 3)).astype(np.uint8)
    path = tmp_path / "img.ppm"
    write_ppm(path, rgb)
    arr, maxval = read_pnm(path)
    assert maxval == 255
    assert np.array_equal(arr, rgb)


def test_comment_in_header(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n255\n\x07\x09")
    arr, maxval = read_pnm(path)
    assert maxval == 255
    assert list(arr.ravel()) == [7, 9]


def test_truncated_pixels_rejected(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(PnmError):
        read_pnm(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(PnmError):
        read_pnm(path)


def test_overlay_marks_mask_in_red():
    img = np.full((2, 2), 0.5, np.float32)
    mask = np.array([[1, 0], [0, 0]], np.uint8)
    rgb = overlay_rgb(img, mask)
    assert rgb.shape == (2, 2, 3)
    r, g, b = rgb[0, 0]
    assert r > g and r > b
    assert rgb[1, 1, 0] == rgb[1, 1, 1] == rgb[1, 1, 2]
