"""NIfTI-1 reader/writer tests against hand-packed fixtures."""

import struct

import numpy as np
import pytest

from segforge import nifti_io
from segforge.nifti_io import (
    BadMagicError,
    NonFiniteError,
    TruncatedError,
    UnsupportedDatatypeError,
    Volume,
    VolumeMeta,
    extract_slice,
    read_header,
    read_nifti,
    write_nifti,
)


def make_nifti_bytes(
    dims,
    voxel_bytes,
    datatype,
    *,
    spacing=(1.0, 1.0, 1.0),
    slope=1.0,
    inter=0.0,
    byteorder="<",
    vox_offset=352.0,
    magic=b"n+1\x00",
):
    """Pack a header field by field, independently of the production writer."""
    bitpix = {2: 8, 4: 16, 16: 32}[datatype]
    hdr = bytearray(348)
    struct.pack_into(byteorder + "i", hdr, 0, 348)
    struct.pack_into(byteorder + "8h", hdr, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into(byteorder + "h", hdr, 70, datatype)
    struct.pack_into(byteorder + "h", hdr, 72, bitpix)
    struct.pack_into(byteorder + "8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(byteorder + "f", hdr, 108, vox_offset)
    struct.pack_into(byteorder + "f", hdr, 112, slope)
    struct.pack_into(byteorder + "f", hdr, 116, inter)
    hdr[344:348] = magic
    pad = bytes(int(vox_offset) - 348)
    return bytes(hdr) + pad + voxel_bytes


def test_minimal_float32_identity_scaling():
    vox = np.full(16, -1000.0, dtype="<f4")
    data = make_nifti_bytes((4, 4, 1), vox.tobytes(), 16)
    v = read_nifti(data)
    assert v.meta.dims == (4, 4, 1)
    assert np.array_equal(v.data.ravel(), np.full(16, -1000.0, dtype=np.float32))


def test_int16_slope_intercept():
    # raw 24 with slope 1, intercept -1024 lands at -1000 HU
    vox = np.full(8, 24, dtype="<i2")
    data = make_nifti_bytes((2, 2, 2), vox.tobytes(), 4, slope=1.0, inter=-1024.0)
    v = read_nifti(data)
    assert np.all(v.data == np.float32(24 * 1.0 + (-1024.0)))
    assert v.data[0, 0, 0] == np.float32(-1000.0)


def test_header_claiming_ct_scan_dims():
    hdr_only = make_nifti_bytes((512, 512, 301), b"", 16)[:348]
    meta = read_header(hdr_only)
    assert meta.dims == (512, 512, 301)


def test_slope_zero_treated_as_one():
    vox = np.array([2.0, 4.0], dtype="<f4")
    data = make_nifti_bytes((2, 1, 1), vox.tobytes(), 16, slope=0.0, inter=10.0)
    v = read_nifti(data)
    assert np.array_equal(v.data.ravel(), np.array([12.0, 14.0], dtype=np.float32))


def test_uint8_datatype():
    vox = np.arange(6, dtype="u1")
    data = make_nifti_bytes((3, 2, 1), vox.tobytes(), 2, slope=2.0, inter=-1.0)
    v = read_nifti(data)
    assert np.array_equal(v.data.ravel(), np.arange(6) * 2.0 - 1.0)


def test_bad_magic_rejected():
    data = make_nifti_bytes((2, 2, 1), bytes(16), 16, magic=b"xxxx")
    with pytest.raises(BadMagicError):
        read_nifti(data)


def test_unsupported_datatype_rejected():
    vox = np.zeros(4, dtype="<f8").tobytes()
    hdr = bytearray(make_nifti_bytes((2, 2, 1), vox, 16))
    struct.pack_into("<h", hdr, 70, 64)  # float64 code
    with pytest.raises(UnsupportedDatatypeError):
        read_nifti(bytes(hdr))


def test_truncated_data_rejected():
    full = make_nifti_bytes((4, 4, 2), np.zeros(32, dtype="<f4").tobytes(), 16)
    with pytest.raises(TruncatedError):
        read_nifti(full[:-8])
    with pytest.raises(TruncatedError):
        read_nifti(full[:100])


def test_nonfinite_voxels_rejected():
    vox = np.array([1.0, np.nan, 0.0, 2.0], dtype="<f4")
    data = make_nifti_bytes((2, 2, 1), vox.tobytes(), 16)
    with pytest.raises(NonFiniteError):
        read_nifti(data)


def _random_volume(rng, dims=None) -> Volume:
    if dims is None:
        dims = tuple(int(d) for d in rng.integers(1, 7, 3))
    nx, ny, nz = dims
    data = rng.uniform(-1024, 1500, (nz, ny, nx)).astype(np.float32)
    spacing = tuple(float(s) for s in rng.uniform(0.5, 5.0, 3))
    return Volume(meta=VolumeMeta(dims=dims, spacing=spacing), data=data)


def test_round_trip_random_volumes():
    rng = np.random.default_rng(42)
    for _ in range(50):
        v = _random_volume(rng)
        w = read_nifti(write_nifti(v))
        assert w.meta.dims == v.meta.dims
        assert w.meta.spacing == v.meta.spacing
        assert np.array_equal(w.data, v.data)


def test_write_layout_zeros_volume():
    # 2x2x2 zeros: 352 bytes of header+pad then 8 voxels * 4 bytes of zeros
    v = Volume(meta=VolumeMeta(dims=(2, 2, 2)), data=np.zeros((2, 2, 2), np.float32))
    blob = write_nifti(v)
    assert len(blob) == 352 + 32
    assert blob[352:] == bytes(32)


def test_write_spacing_fields():
    v = Volume(
        meta=VolumeMeta(dims=(2, 2, 1), spacing=(0.7, 0.7, 5.0)),
        data=np.zeros((1, 2, 2), np.float32),
    )
    blob = write_nifti(v)
    pixdim = struct.unpack_from("<8f", blob, 76)
    assert pixdim[1:4] == (np.float32(0.7), np.float32(0.7), np.float32(5.0))


def test_big_endian_fixture_parses_identically():
    rng = np.random.default_rng(7)
    dims = (5, 4, 3)
    raw = rng.integers(-2000, 3000, 60).astype(">i2")
    be = make_nifti_bytes(
        dims, raw.tobytes(), 4, spacing=(0.5, 2.0, 3.0), slope=0.5, inter=-10.0,
        byteorder=">",
    )
    le = make_nifti_bytes(
        dims, raw.astype("<i2").tobytes(), 4, spacing=(0.5, 2.0, 3.0), slope=0.5,
        inter=-10.0, byteorder="<",
    )
    v_be = read_nifti(be)
    v_le = read_nifti(le)
    assert v_be.meta.endianness == "big"
    assert v_le.meta.endianness == "little"
    assert v_be.meta.dims == v_le.meta.dims
    assert v_be.meta.spacing == v_le.meta.spacing
    assert np.array_equal(v_be.data, v_le.data)


def test_slope_intercept_against_per_voxel_oracle():
    rng = np.random.default_rng(3)
    for datatype, np_dtype in ((2, "u1"), (4, "<i2"), (16, "<f4")):
        info_lo, info_hi = (0, 255) if datatype == 2 else (-3000, 3000)
        raw = rng.integers(info_lo, info_hi, 24).astype(np_dtype)
        slope, inter = 1.5, -100.0
        v = read_nifti(
            make_nifti_bytes((4, 3, 2), raw.tobytes(), datatype, slope=slope, inter=inter)
        )
        expected = np.array(
            [np.float32(np.float32(x) * np.float32(slope) + np.float32(inter)) for x in raw],
            dtype=np.float32,
        )
        assert np.array_equal(v.data.ravel(), expected)


def test_extract_slice_whole_volume_when_nz_1():
    v = _random_volume(np.random.default_rng(1), dims=(3, 2, 1))
    s = extract_slice(v, 0)
    assert s.shape == (2, 3)
    assert np.array_equal(s, v.data[0])


def test_extract_slice_bounds():
    v = _random_volume(np.random.default_rng(2), dims=(3, 3, 2))
    with pytest.raises(IndexError):
        extract_slice(v, 2)
    with pytest.raises(IndexError):
        extract_slice(v, -1)


def test_extract_slice_index_arithmetic():
    # voxel (x, y, z=1) = x + 10y, checked against flat-array indexing
    nx, ny, nz = 3, 3, 2
    flat = np.zeros(nx * ny * nz, dtype=np.float32)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                flat[x + nx * (y + ny * z)] = (x + 10 * y) if z == 1 else 99
    v = Volume(meta=VolumeMeta(dims=(nx, ny, nz)), data=flat.reshape(nz, ny, nx))
    s = extract_slice(v, 1)
    for y in range(ny):
        for x in range(nx):
            assert s[y, x] == x + 10 * y


def test_file_round_trip(tmp_path):
    v = _random_volume(np.random.default_rng(9))
    path = tmp_path / "vol.nii"
    nifti_io.write_nifti_file(path, v)
    w = nifti_io.read_nifti_file(path)
    assert np.array_equal(w.data, v.data)
