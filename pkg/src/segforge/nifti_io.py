"""NIfTI-1 volume reader/writer.

Only the single-file ``.nii`` layout is handled: a 348-byte binary header,
optional extension bytes, then the voxel block at ``round(vox_offset)``.
Voxels are exposed in Hounsfield Units as ``raw * scl_slope + scl_inter``
(slope 0 means 1 by convention). Supported on-disk datatypes are uint8 (2),
int16 (4) and float32 (16), which cover 12-bit CT exports. Compressed
streams, 4-D series, and orientation handling are out of scope; qform/sform
fields are preserved as opaque header content and never interpreted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

HEADER_SIZE = 348
MAGIC = b"n+1\x00"
VOX_OFFSET_DEFAULT = 352

# datatype code -> numpy dtype character (endianness applied at read time)
_DTYPES = {2: "u1", 4: "i2", 16: "f4"}
_BITPIX = {2: 8, 4: 16, 16: 32}

# header field offsets (bytes)
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_MAGIC = 344


class NiftiError(Exception):
    """Base class for NIfTI parse/serialize failures."""


class BadMagicError(NiftiError):
    """Input is not a NIfTI-1 single file (bad magic or unusable header)."""


class UnsupportedDatatypeError(NiftiError):
    """Datatype code outside {2, 4, 16}, or a 4-D/time-series layout."""


class TruncatedError(NiftiError):
    """Byte stream is shorter than the header promises."""


class NonFiniteError(NiftiError):
    """Float voxel data contains NaN or Inf."""


@dataclass(frozen=True)
class VolumeMeta:
    """Geometry and scaling metadata for one volume.

    ``dims`` is (nx, ny, nz), ``spacing`` is millimetres per voxel along the
    same axes. Spacing values are stored rounded to float32 so that a
    write/read cycle reproduces them bit-exactly.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    datatype_code: int = 16
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    endianness: str = "little"

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 1 for d in self.dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if any(not (s > 0) for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.datatype_code not in _DTYPES:
            raise UnsupportedDatatypeError(f"datatype code {self.datatype_code}")
        if self.endianness not in ("little", "big"):
            raise ValueError(f"endianness must be 'little' or 'big', got {self.endianness!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(
            self, "spacing", tuple(float(np.float32(s)) for s in self.spacing)
        )

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


@dataclass
class Volume:
    """A 3-D scalar field in Hounsfield Units.

    ``data`` has shape (nz, ny, nx) in C order, i.e. the flattened buffer is
    x-fastest, matching the on-disk voxel order. Values are float32 and must
    be finite; real CT sits roughly in [-1024, 3071] but is not clamped here.
    """

    meta: VolumeMeta
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        nx, ny, nz = self.meta.dims
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (nz, ny, nx):
            raise ValueError(
                f"data shape {self.data.shape} does not match dims (nz,ny,nx)=({nz},{ny},{nx})"
            )
        if not np.isfinite(self.data).all():
            raise NonFiniteError("volume contains NaN or Inf voxels")


def read_header(data: bytes) -> VolumeMeta:
    """Parse the 348-byte header only (no voxel data required)."""
    if len(data) < HEADER_SIZE:
        raise TruncatedError(f"need {HEADER_SIZE} header bytes, got {len(data)}")
    if data[_OFF_MAGIC : _OFF_MAGIC + 4] != MAGIC:
        raise BadMagicError("magic 'n+1\\0' not found at offset 344")

    # dim[0] decides byte order: valid files keep it in 1..7
    (ndim_le,) = struct.unpack_from("<h", data, _OFF_DIM)
    if 1 <= ndim_le <= 7:
        bo, endianness = "<", "little"
    else:
        (ndim_be,) = struct.unpack_from(">h", data, _OFF_DIM)
        if not 1 <= ndim_be <= 7:
            raise BadMagicError(f"dim[0] invalid in both byte orders ({ndim_le}/{ndim_be})")
        bo, endianness = ">", "big"

    dim = struct.unpack_from(bo + "8h", data, _OFF_DIM)
    (datatype,) = struct.unpack_from(bo + "h", data, _OFF_DATATYPE)
    pixdim = struct.unpack_from(bo + "8f", data, _OFF_PIXDIM)
    (scl_slope,) = struct.unpack_from(bo + "f", data, _OFF_SCL_SLOPE)
    (scl_inter,) = struct.unpack_from(bo + "f", data, _OFF_SCL_INTER)

    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype}")
    ndim = dim[0]
    if any(d > 1 for d in dim[4 : ndim + 1]):
        raise UnsupportedDatatypeError("4-D/time-series volumes are not supported")

    dims = tuple(max(1, dim[i]) if i <= ndim else 1 for i in (1, 2, 3))
    spacing = tuple(pixdim[i] if i <= ndim and pixdim[i] > 0 else 1.0 for i in (1, 2, 3))
    return VolumeMeta(
        dims=dims,
        spacing=spacing,
        datatype_code=datatype,
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        endianness=endianness,
    )


def read_nifti(data: bytes) -> Volume:
    """Parse a full NIfTI-1 byte stream into a Volume in Hounsfield Units."""
    meta = read_header(data)
    bo = "<" if meta.endianness == "little" else ">"
    (vox_offset,) = struct.unpack_from(bo + "f", data, _OFF_VOX_OFFSET)
    offset = int(round(vox_offset))
    if offset < HEADER_SIZE:
        offset = VOX_OFFSET_DEFAULT

    dtype = np.dtype(bo + _DTYPES[meta.datatype_code])
    nbytes = meta.voxel_count * dtype.itemsize
    if len(data) < offset + nbytes:
        raise TruncatedError(
            f"voxel block needs {offset + nbytes} bytes, stream has {len(data)}"
        )
    raw = np.frombuffer(data, dtype=dtype, count=meta.voxel_count, offset=offset)
    if meta.datatype_code == 16 and not np.isfinite(raw).all():
        raise NonFiniteError("float voxel data contains NaN or Inf")

    slope = meta.scl_slope if meta.scl_slope != 0.0 else 1.0
    hu = raw.astype(np.float32) * np.float32(slope) + np.float32(meta.scl_inter)
    nx, ny, nz = meta.dims
    return Volume(meta=meta, data=hu.reshape(nz, ny, nx))


def write_nifti(v: Volume) -> bytes:
    """Serialize a Volume as little-endian float32 with identity scaling.

    The voxel block starts at offset 352 (348-byte header + 4 pad bytes);
    ``read_nifti(write_nifti(v))`` reproduces dims, spacing and voxels
    bit-exactly.
    """
    nx, ny, nz = v.meta.dims
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)  # sizeof_hdr
    hdr[39] = ord("r")  # regular, conventionally 'r'
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, _OFF_DATATYPE, 16)
    struct.pack_into("<h", hdr, _OFF_BITPIX, _BITPIX[16])
    sx, sy, sz = v.meta.spacing
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, _OFF_VOX_OFFSET, float(VOX_OFFSET_DEFAULT))
    struct.pack_into("<f", hdr, _OFF_SCL_SLOPE, 1.0)
    struct.pack_into("<f", hdr, _OFF_SCL_INTER, 0.0)
    hdr[_OFF_MAGIC : _OFF_MAGIC + 4] = MAGIC

    pad = bytes(VOX_OFFSET_DEFAULT - HEADER_SIZE)
    body = np.ascontiguousarray(v.data, dtype="<f4").tobytes()
    return bytes(hdr) + pad + body


def extract_slice(v: Volume, z: int) -> np.ndarray:
    """Return the (ny, nx) plane at index z; raises IndexError out of range."""
    nz = v.meta.dims[2]
    if not 0 <= z < nz:
        raise IndexError(f"slice index {z} out of range for nz={nz}")
    return v.data[z].copy()


def read_nifti_file(path) -> Volume:
    with open(path, "rb") as fh:
        return read_nifti(fh.read())


def write_nifti_file(path, v: Volume) -> None:
    with open(path, "wb") as fh:
        fh.write(write_nifti(v))
