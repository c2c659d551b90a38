"""Voxel volumes and their geostatistical moments.

A porous medium is a binary indicator field on a regular 3D grid: value 1
marks pore space, 0 marks solid grains.  This module provides the volume
container plus the first- and second-moment descriptors used everywhere
else in the toolkit: porosity, the normalized two-point correlation
function, the correlation length of its exponential model, and specific
surface area.

All operations are pure functions over the input volume; none mutate it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateNormalizationError, FitError, NonBinaryVolumeError

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
ISO = "iso"

#: R(r) below this value is treated as noise-dominated tail and excluded
#: from the default correlation-length fit window.
FIT_TAIL_CUTOFF = 0.05

#: Iteration cap for the nonlinear least-squares fit.
FIT_MAX_ITER = 200


@dataclass(frozen=True)
class VoxelVolume:
    """3D voxel grid of pore/solid (or continuous pre-threshold) values.

    Parameters
    ----------
    data : np.ndarray
        Shape (nx, ny, nz).  For binary volumes every value is 0 or 1,
        with 1 = pore and 0 = solid.
    voxel_size : float
        Physical edge length of one voxel in micrometres.
    is_binary : bool
        Whether `data` is a {0, 1} indicator field.
    value_range : tuple
        Declared value range for continuous volumes (generator output is
        (-1, 1); raw averaged fields are (0, 1)).  Ignored for binary data.
    """

    data: np.ndarray
    voxel_size: float = 1.0
    is_binary: bool = True
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all axes must have extent >= 1, got {arr.shape}")
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.is_binary:
            vals = np.unique(arr)
            if not np.isin(vals, (0, 1)).all():
                raise NonBinaryVolumeError(
                    "binary volume contains values outside {0, 1}"
                )
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def edge(self) -> int:
        """Edge length for cubic volumes."""
        nx, ny, nz = self.data.shape
        if not (nx == ny == nz):
            raise ValueError(f"volume is not cubic: {self.data.shape}")
        return nx


@dataclass(frozen=True)
class CorrelationCurve:
    """Normalized two-point correlation R(r) sampled at integer lags.

    `axis` is one of "x", "y", "z" or "iso" (mean of the three axial
    curves).  `phi` is the porosity used in the normalization.
    """

    axis: str
    lags: np.ndarray
    values: np.ndarray
    phi: float

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if lags.shape != values.shape or lags.ndim != 1:
            raise ValueError("lags and values must be 1D arrays of equal length")
        if lags[0] != 0 or np.any(np.diff(lags) <= 0):
            raise ValueError("lags must increase strictly from 0")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class MomentSummary:
    """First two moments plus interface density of a binary volume.

    `lam` is in voxel units: a scalar for the isotropic fit, a 3-tuple for
    per-axis fits, or None when correlation length was not requested.
    `sa` is in inverse voxel lengths; divide by voxel_size for 1/um.
    """

    phi: float
    lam: float | tuple | None
    sa: float


def _require_binary(v: VoxelVolume, op: str) -> np.ndarray:
    if not v.is_binary:
        raise NonBinaryVolumeError(f"{op} requires a binary volume")
    return v.data


def porosity(v: VoxelVolume) -> float:
    """Pore-volume fraction: the mean of the indicator field."""
    data = _require_binary(v, "porosity")
    return float(np.mean(data, dtype=np.float64))


def two_point_correlation(
    v: VoxelVolume, r_max: int | None = None, axis: str = ISO
) -> CorrelationCurve:
    """Normalized two-point correlation along an axis, or the axial mean.

    For each lag r the estimator averages (phi - F(x)) * (phi - F(x + r))
    over all non-periodic valid pairs along the axis and divides by
    phi - phi^2, so R(0) = 1 exactly (up to roundoff) for 0 < phi < 1.

    Parameters
    ----------
    r_max : int, optional
        Largest lag.  Defaults to min(extent) // 4, the window used for
        correlation-length labeling.  Must be < extent along the axis.
    axis : str
        "x", "y", "z", or "iso" for the mean of the three axial curves.
    """
    data = _require_binary(v, "two_point_correlation")
    phi = float(np.mean(data, dtype=np.float64))
    if phi <= 0.0 or phi >= 1.0:
        raise DegenerateNormalizationError(
            f"porosity {phi} gives zero normalization phi - phi^2"
        )
    if r_max is None:
        r_max = min(data.shape) // 4
    if axis == ISO:
        if r_max >= min(data.shape):
            raise ValueError(f"r_max={r_max} must be < min extent {min(data.shape)}")
        curves = [
            _axial_correlation(data, phi, r_max, AXIS_INDEX[a]) for a in "xyz"
        ]
        values = np.mean(curves, axis=0)
    elif axis in AXIS_INDEX:
        ax = AXIS_INDEX[axis]
        if r_max >= data.shape[ax]:
            raise ValueError(
                f"r_max={r_max} must be < extent {data.shape[ax]} along {axis}"
            )
        values = _axial_correlation(data, phi, r_max, ax)
    else:
        raise ValueError(f"axis must be x, y, z or {ISO!r}, got {axis!r}")
    return CorrelationCurve(
        axis=axis, lags=np.arange(r_max + 1), values=values, phi=phi
    )


def _axial_correlation(data: np.ndarray, phi: float, r_max: int, ax: int) -> np.ndarray:
    g = phi - data.astype(np.float64)
    denom = phi - phi * phi
    values = np.empty(r_max + 1)
    n = data.shape[ax]
    head = [slice(None)] * 3
    tail = [slice(None)] * 3
    for r in range(r_max + 1):
        head[ax] = slice(0, n - r)
        tail[ax] = slice(r, n)
        values[r] = np.mean(g[tuple(head)] * g[tuple(tail)]) / denom
    return values


def default_fit_window(curve: CorrelationCurve) -> np.ndarray:
    """Boolean mask of lags used by the default correlation-length fit.

    Keeps lags up to the first one where R drops below FIT_TAIL_CUTOFF
    (inclusive); beyond that the exponential tail is noise-dominated.
    """
    below = np.nonzero(curve.values < FIT_TAIL_CUTOFF)[0]
    last = curve.lags[-1] if below.size == 0 else curve.lags[below[0]]
    return curve.lags <= last


def fit_correlation_length(
    curve: CorrelationCurve, fit_range: Sequence[int] | None = None
) -> float:
    """Correlation length of the exponential model R(r) = exp(-r / lambda).

    Minimizes sum_r (exp(-r/lambda) - R(r))^2 over the fit window by
    nonlinear least squares.  The window defaults to
    :func:`default_fit_window`; pass `fit_range` = (lo, hi) to override
    with an inclusive lag interval.

    Raises
    ------
    FitError
        If the curve is all-zero or the solver hits the iteration cap
        without converging (the error carries the final residual).
    """
    if np.max(np.abs(curve.values)) == 0.0:
        raise FitError("all-zero correlation curve", residual=None)
    if fit_range is None:
        mask = default_fit_window(curve)
    else:
        lo, hi = fit_range
        mask = (curve.lags >= lo) & (curve.lags <= hi)
    lags = curve.lags[mask].astype(np.float64)
    vals = curve.values[mask]
    if lags.size < 3:
        raise ValueError(f"fit window holds {lags.size} lags; need >= 3")

    lam0 = _initial_lambda(curve)

    def resid(p):
        return np.exp(-lags / p[0]) - vals

    result = least_squares(
        resid, x0=[lam0], bounds=([1e-8], [np.inf]), max_nfev=FIT_MAX_ITER
    )
    final_residual = float(np.sum(result.fun**2))
    if result.status == 0:
        raise FitError(
            f"correlation-length fit hit the {FIT_MAX_ITER}-iteration cap",
            residual=final_residual,
        )
    return float(result.x[0])


def _initial_lambda(curve: CorrelationCurve) -> float:
    """First lag where R crosses 1/e, linearly interpolated."""
    target = np.exp(-1.0)
    vals = curve.values
    below = np.nonzero(vals < target)[0]
    if below.size == 0:
        return float(max(curve.lags[-1], 1))
    i = int(below[0])
    if i == 0:
        return 1.0
    r_prev, r_next = curve.lags[i - 1], curve.lags[i]
    v_prev, v_next = vals[i - 1], vals[i]
    frac = (v_prev - target) / (v_prev - v_next)
    return float(max(r_prev + frac * (r_next - r_prev), 1e-3))


def specific_surface_area(v: VoxelVolume) -> float:
    """Solid-pore interface area per unit bulk volume, in 1/voxel.

    Counts voxel faces where a pore voxel touches a solid voxel along any
    axis (each face has unit area in voxel units) and divides by the total
    voxel count.  Faces on the domain boundary are not interfaces.
    """
    data = _require_binary(v, "specific_surface_area")
    faces = 0
    for ax in range(3):
        head = [slice(None)] * 3
        tail = [slice(None)] * 3
        head[ax] = slice(0, data.shape[ax] - 1)
        tail[ax] = slice(1, data.shape[ax])
        faces += int(np.count_nonzero(data[tuple(head)] != data[tuple(tail)]))
    return faces / data.size


def binarize(v: VoxelVolume, threshold: float | None = None) -> VoxelVolume:
    """Threshold a continuous volume into a binary one; ties go to pore.

    The default threshold is the midpoint of the declared value range:
    0.5 for (0, 1) data, 0.0 for (-1, 1) generator output.
    """
    if threshold is None:
        lo, hi = v.value_range
        threshold = 0.5 * (lo + hi)
    data = (np.asarray(v.data, dtype=np.float64) >= threshold).astype(np.uint8)
    return VoxelVolume(data=data, voxel_size=v.voxel_size, is_binary=True)


def moment_summary(
    v: VoxelVolume, lam_mode: str = "off", r_max: int | None = None
) -> MomentSummary:
    """Porosity, correlation length(s), and specific surface area.

    `lam_mode` is "off", "isotropic" (single lambda from the axial-mean
    curve) or "anisotropic" (one lambda per axis).
    """
    phi = porosity(v)
    sa = specific_surface_area(v)
    lam: float | tuple | None
    if lam_mode == "off":
        lam = None
    elif lam_mode == "isotropic":
        lam = fit_correlation_length(two_point_correlation(v, r_max, ISO))
    elif lam_mode == "anisotropic":
        lam = tuple(
            fit_correlation_length(two_point_correlation(v, r_max, a))
            for a in "xyz"
        )
    else:
        raise ValueError(f"lam_mode must be off|isotropic|anisotropic, got {lam_mode!r}")
    return MomentSummary(phi=phi, lam=lam, sa=sa)
