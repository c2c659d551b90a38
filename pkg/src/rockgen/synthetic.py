"""Synthetic porous media from truncated Gaussian random fields.

Desk-scale stand-in for imaged rock data: a stationary Gaussian field with
exponential covariance is sampled spectrally on a periodic grid, then
truncated at the quantile matching a target porosity.  Ground-truth
porosity is exact by construction (top-k voxel selection); the field's
correlation scale is controlled by the covariance length, so conditioning
experiments have known knobs to recover.
"""

from __future__ import annotations

import numpy as np

from .voxel import VoxelVolume


def gaussian_field(
    edge: int,
    corr_length: float | tuple,
    rng: np.random.Generator,
) -> np.ndarray:
    """Zero-mean Gaussian field with exponential covariance on a periodic cube.

    `corr_length` is the covariance decay scale in voxels, a scalar or a
    per-axis (lx, ly, lz) tuple for anisotropic fields.  Sampling is
    spectral: the circulant covariance diagonalizes under FFT, so the field
    is ifftn(sqrt(spectrum) * fftn(white noise)).  Tiny negative spectral
    values from the non-embeddable corners are clipped.
    """
    if np.isscalar(corr_length):
        lx = ly = lz = float(corr_length)
    else:
        lx, ly, lz = (float(c) for c in corr_length)
    if min(lx, ly, lz) <= 0:
        raise ValueError(f"corr_length must be positive, got {(lx, ly, lz)}")

    # periodic (torus) distances per axis
    d = np.arange(edge)
    d = np.minimum(d, edge - d).astype(np.float64)
    rx = (d / lx)[:, None, None]
    ry = (d / ly)[None, :, None]
    rz = (d / lz)[None, None, :]
    cov = np.exp(-np.sqrt(rx**2 + ry**2 + rz**2))

    spectrum = np.fft.fftn(cov).real
    np.clip(spectrum, 0.0, None, out=spectrum)

    white = rng.standard_normal((edge, edge, edge))
    field = np.fft.ifftn(np.sqrt(spectrum) * np.fft.fftn(white)).real
    return field / field.std()


def truncate_to_porosity(field: np.ndarray, phi: float) -> np.ndarray:
    """Binarize a continuous field so exactly round(phi * N) voxels are pore.

    The threshold is the field's own order statistic, so the resulting
    porosity equals k / N exactly regardless of the field distribution.
    """
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"target porosity must lie in [0, 1], got {phi}")
    n = field.size
    k = int(round(phi * n))
    out = np.zeros(n, dtype=np.uint8)
    if k > 0:
        # indices of the k largest values; ties broken by position
        order = np.argpartition(field.ravel(), n - k)
        out[order[n - k :]] = 1
    return out.reshape(field.shape)


def synthetic_volume(
    edge: int,
    phi: float,
    corr_length: float | tuple,
    seed: int,
    voxel_size: float = 1.0,
) -> VoxelVolume:
    """One truncated-Gaussian binary volume with exact porosity phi."""
    rng = np.random.default_rng(seed)
    field = gaussian_field(edge, corr_length, rng)
    return VoxelVolume(
        data=truncate_to_porosity(field, phi), voxel_size=voxel_size
    )


def synthetic_suite(
    count: int,
    edge: int,
    phi_range: tuple,
    lam_range: tuple,
    seed: int,
    voxel_size: float = 1.0,
    anisotropic: bool = False,
) -> list[VoxelVolume]:
    """Independent volumes with porosity and covariance length swept uniformly.

    Each sample draws phi ~ U(phi_range) and a covariance length
    ~ U(lam_range) (three independent draws per sample when `anisotropic`),
    giving a dataset whose measured labels span a usable conditioning range.
    """
    rng = np.random.default_rng(seed)
    volumes = []
    for _ in range(count):
        phi = rng.uniform(*phi_range)
        if anisotropic:
            lam = tuple(rng.uniform(*lam_range, size=3))
        else:
            lam = rng.uniform(*lam_range)
        field = gaussian_field(edge, lam, rng)
        volumes.append(
            VoxelVolume(data=truncate_to_porosity(field, phi), voxel_size=voxel_size)
        )
    return volumes
