"""Binary Netpbm readers/writers (P5 graymaps, P6 pixmaps).

Probability maps are written as 16-bit P5 (sample values are big-endian per
the format), binary masks as P5 with maxval 1, and overlays as 8-bit P6.
"""

from __future__ import annotations

import numpy as np


class PnmError(ValueError):
    pass


def write_pgm16(path, values01: np.ndarray) -> None:
    """Quantize [0, 1] floats to 16-bit and write a P5 graymap."""
    v = np.asarray(values01, dtype=np.float64)
    if v.ndim != 2:
        raise PnmError(f"expected a 2-D array, got shape {v.shape}")
    q = np.round(np.clip(v, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def write_pgm_mask(path, mask: np.ndarray) -> None:
    """Write a binary mask as P5 with maxval 1 (one byte per pixel)."""
    m = (np.asarray(mask) != 0).astype(np.uint8)
    if m.ndim != 2:
        raise PnmError(f"expected a 2-D array, got shape {m.shape}")
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n1\n".encode("ascii"))
        fh.write(m.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as a P6 pixmap."""
    a = np.asarray(rgb, dtype=np.uint8)
    if a.ndim != 3 or a.shape[2] != 3:
        raise PnmError(f"expected (h, w, 3), got shape {a.shape}")
    h, w, _ = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.tobytes())


def _read_tokens(data: bytes, count: int):
    """First `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise PnmError("truncated header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise PnmError("unterminated comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    return tokens, pos + 1  # header ends with exactly one whitespace byte


def read_pnm(path) -> tuple[np.ndarray, int]:
    """Read P5/P6; returns (array, maxval). P5 -> (h, w); P6 -> (h, w, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {data[:2]!r}")
    channels = 1 if data[:2] == b"P5" else 3
    tokens, offset = _read_tokens(data[2:], 3)
    w, h, maxval = (int(t) for t in tokens)
    offset += 2
    if maxval < 1 or maxval > 65535:
        raise PnmError(f"maxval {maxval} out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = w * h * channels
    need = offset + count * dtype.itemsize
    if len(data) < need:
        raise PnmError(f"pixel block truncated: need {need} bytes, have {len(data)}")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def read_probability_pgm(path) -> np.ndarray:
    """Read a P5 graymap back into [0, 1] floats."""
    arr, maxval = read_pnm(path)
    if arr.ndim != 2:
        raise PnmError("expected a graymap")
    return (arr.astype(np.float64) / maxval).astype(np.float32)


def read_mask_pgm(path) -> np.ndarray:
    arr, _ = read_pnm(path)
    if arr.ndim != 2:
        raise PnmError("expected a graymap")
    return (arr != 0).astype(np.uint8)


def overlay_rgb(image01: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gray image with the mask blended in red, as (h, w, 3) uint8."""
    g = np.round(np.clip(np.asarray(image01, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    rgb = np.stack([g, g, g], axis=-1).astype(np.float64)
    m = np.asarray(mask) != 0
    rgb[m, 0] = 0.5 * rgb[m, 0] + 127.5
    rgb[m, 1] *= 0.5
    rgb[m, 2] *= 0.5
    return np.round(rgb).astype(np.uint8)
