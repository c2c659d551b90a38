"""Single-phase absolute permeability via the lattice Boltzmann method.

A body force drives creeping flow through the pore space of a binary
volume on a fully periodic D3Q19 lattice (BGK collision, Guo forcing,
half-way bounce-back at solid faces).  The volume is mirror-padded along
the flow axis so the periodic wrap sees a continuous geometry.  At
convergence the permeability follows Darcy's law with the mean pore
velocity: k = <u> * nu / g, nu = (tau - 1/2) / 3.

The Darcy-unit conversion multiplies the lattice value by voxel_size^2
(um^2 per lattice area) over 0.9869233 um^2/Darcy; absolute values may
differ from other conventions by a constant factor, but ratios and trends
are convention-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _lbm_kernels as kernels
from .errors import NonBinaryVolumeError, PercolationError
from .voxel import AXIS_INDEX, VoxelVolume

UM2_PER_DARCY = 0.9869233

_6CONN = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class FlowResult:
    """Converged (or flagged) permeability solution for one flow axis."""

    axis: str
    mean_velocity: float  # mean pore velocity, lattice units
    k_lattice: float  # permeability in lattice units (voxel^2)
    k_darcy: float
    iterations: int
    residual: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "mean_velocity": self.mean_velocity,
            "k_lattice": self.k_lattice,
            "k_darcy": self.k_darcy,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
        }


def percolation_check(v: VoxelVolume, axis: str = "x") -> bool:
    """True iff the pore phase connects inlet to outlet face along `axis`.

    Uses a 6-connected component labeling (no periodic wrap): a label
    present on both boundary faces means a spanning pore path exists.
    """
    if not v.is_binary:
        raise NonBinaryVolumeError("percolation check requires a binary volume")
    ax = AXIS_INDEX[axis]
    pore = np.asarray(v.data, dtype=bool)
    labels, n = ndimage.label(pore, structure=_6CONN)
    if n == 0:
        return False
    inlet = np.unique(np.take(labels, 0, axis=ax))
    outlet = np.unique(np.take(labels, -1, axis=ax))
    common = np.intersect1d(inlet, outlet)
    return bool(np.any(common > 0))


def _mirror_pad(data: np.ndarray, ax: int) -> np.ndarray:
    flipped = np.flip(data, axis=ax)
    return np.concatenate([data, flipped], axis=ax)


def total_mass(f: np.ndarray, solid: np.ndarray) -> float:
    """Total distribution mass over fluid voxels (conserved per step)."""
    return float(f[:, ~solid].sum())


def lbm_permeability(
    v: VoxelVolume,
    axis: str = "x",
    tau: float = 1.0,
    force: float = 1e-5,
    max_steps: int = 50_000,
    tol: float = 1e-6,
    check_every: int = 100,
    mirror: bool = True,
) -> FlowResult:
    """Absolute permeability along one axis.

    Raises PercolationError when no spanning pore path exists.  If the
    mean-velocity residual has not dropped below `tol` (relative change
    over a `check_every`-step window) within `max_steps`, the result is
    returned flagged unconverged rather than raising.
    """
    if not v.is_binary:
        raise NonBinaryVolumeError("permeability requires a binary volume")
    if axis not in AXIS_INDEX:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    if not percolation_check(v, axis):
        raise PercolationError(f"pore phase does not percolate along {axis}")

    ax = AXIS_INDEX[axis]
    data = np.asarray(v.data, dtype=np.uint8)
    if mirror:
        data = _mirror_pad(data, ax)
    solid = data == 0
    fvec = np.zeros(3)
    fvec[ax] = force

    f = kernels.equilibrium_rest(solid.shape)
    f[:, solid] = 0.0
    f_new = np.empty_like(f)

    fluid = ~solid
    u_prev = 0.0
    residual = np.inf
    steps_done = 0
    converged = False
    for step_i in range(1, max_steps + 1):
        f_new = kernels.step(f, f_new, solid, tau, fvec)
        f, f_new = f_new, f
        steps_done = step_i
        if step_i % check_every == 0:
            _, u = kernels.macroscopics(f, solid, fvec, tau)
            u_mean = float(u[ax][fluid].mean())
            residual = abs(u_mean - u_prev) / max(abs(u_mean), 1e-300)
            u_prev = u_mean
            if residual < tol:
                converged = True
                break

    _, u = kernels.macroscopics(f, solid, fvec, tau)
    u_mean = float(u[ax][fluid].mean())
    nu = (tau - 0.5) / 3.0
    k_lattice = u_mean * nu / force
    k_darcy = k_lattice * v.voxel_size**2 / UM2_PER_DARCY
    return FlowResult(
        axis=axis,
        mean_velocity=u_mean,
        k_lattice=k_lattice,
        k_darcy=k_darcy,
        iterations=steps_done,
        residual=float(residual),
        converged=converged,
    )


def permeability_tensor(v: VoxelVolume, axes: str = "xyz", **opts) -> dict:
    """Per-axis FlowResults plus their axis-averaged permeability.

    The scalar "mean" entries ignore anisotropy (the convention for
    reporting a single permeability per sample); per-axis values remain
    available for anisotropic analysis.
    """
    results = {a: lbm_permeability(v, axis=a, **opts) for a in axes}
    return {
        "axes": results,
        "mean_k_lattice": float(np.mean([r.k_lattice for r in results.values()])),
        "mean_k_darcy": float(np.mean([r.k_darcy for r in results.values()])),
    }
