"""Synthetic chest-like CT volumes with exact ground-truth infection masks.

A phantom is a tissue-density body ellipse with a bone rim, two lung
ellipsoids of air-like density, and a few smooth infection blobs placed
strictly inside the lungs. The mask volume is 1 exactly on blob voxels.
Gaussian HU noise perturbs the image only, then the image is clamped to
[-1024, 1500]. Everything is a pure function of the config, so datasets
regenerate bit-identically from (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nifti_io import Volume, VolumeMeta

HU_AIR = -1000.0
HU_CLAMP_LO = -1024.0
HU_CLAMP_HI = 1500.0


class BadConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int] = (64, 64, 8)
    lung_hu: float = -750.0
    tissue_hu: float = 40.0
    bone_hu: float = 700.0
    infection_hu: float = -100.0
    blob_count_range: tuple[int, int] = (1, 3)
    blob_radius_range: tuple[float, float] = (4.0, 10.0)
    noise_sigma: float = 20.0
    seed: int = 0

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 1:
            raise BadConfigError(f"dims must be positive, got {self.dims}")
        lo, hi = self.blob_count_range
        if lo < 0 or lo > hi:
            raise BadConfigError(f"blob_count_range must be ordered and >= 0, got {lo, hi}")
        rlo, rhi = self.blob_radius_range
        if not 0 < rlo <= rhi:
            raise BadConfigError(f"blob_radius_range must be ordered and positive, got {rlo, rhi}")
        if self.noise_sigma < 0:
            raise BadConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for hu in (self.lung_hu, self.tissue_hu, self.bone_hu, self.infection_hu):
            if not HU_CLAMP_LO <= hu <= HU_CLAMP_HI:
                raise BadConfigError(f"HU value {hu} outside [{HU_CLAMP_LO}, {HU_CLAMP_HI}]")


def lung_ellipsoids(cfg: PhantomConfig):
    """Centers and radii (voxel units) of the two lung ellipsoids."""
    nx, ny, nz = cfg.dims
    radii = (0.17 * nx, 0.30 * ny, 0.48 * nz)
    left = ((0.32 * nx, 0.50 * ny, 0.50 * nz), radii)
    right = ((0.68 * nx, 0.50 * ny, 0.50 * nz), radii)
    return left, right


def _ellipsoid_mask(shape_zyx, center_xyz, radii_xyz) -> np.ndarray:
    nz, ny, nx = shape_zyx
    z, y, x = np.ogrid[0:nz, 0:ny, 0:nx]
    cx, cy, cz = center_xyz
    rx, ry, rz = radii_xyz
    return (
        ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 + ((z - cz) / rz) ** 2
    ) <= 1.0


def generate_phantom(cfg: PhantomConfig) -> tuple[Volume, Volume]:
    """Return (image volume in HU, binary mask volume)."""
    nx, ny, nz = cfg.dims
    shape = (nz, ny, nx)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x9F)))

    img = np.full(shape, HU_AIR, dtype=np.float32)
    y, x = np.ogrid[0:ny, 0:nx]
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    body_r = ((x - cx) / (0.48 * nx)) ** 2 + ((y - cy) / (0.46 * ny)) ** 2
    body = np.broadcast_to(body_r <= 1.0, shape)
    rim = np.broadcast_to((body_r <= 1.0) & (body_r > 0.80), shape)
    img[body] = cfg.tissue_hu
    img[rim] = cfg.bone_hu

    lungs = lung_ellipsoids(cfg)
    lung_region = np.zeros(shape, dtype=bool)
    for center, radii in lungs:
        region = _ellipsoid_mask(shape, center, radii)
        lung_region |= region
        img[region] = cfg.lung_hu

    mask = np.zeros(shape, dtype=bool)
    count = int(rng.integers(cfg.blob_count_range[0], cfg.blob_count_range[1] + 1))
    for _ in range(count):
        center, radii = lungs[int(rng.integers(0, 2))]
        # sample the blob center well inside the lung so most of it survives
        # the intersection with the lung interior
        u = rng.uniform(-0.6, 0.6, 3)
        bc = (
            center[0] + u[0] * radii[0],
            center[1] + u[1] * radii[1],
            center[2] + u[2] * radii[2],
        )
        br = rng.uniform(cfg.blob_radius_range[0], cfg.blob_radius_range[1], 3)
        blob = _ellipsoid_mask(shape, bc, tuple(br)) & lung_region
        mask |= blob
    img[mask] = cfg.infection_hu

    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, shape).astype(np.float32)
    img = np.clip(img, HU_CLAMP_LO, HU_CLAMP_HI).astype(np.float32)

    meta = VolumeMeta(dims=cfg.dims)
    return (
        Volume(meta=meta, data=img),
        Volume(meta=meta, data=mask.astype(np.float32)),
    )
