"""D3Q19 BGK collide-and-stream kernels.

Two interchangeable implementations of one lattice update: a numba-jitted
voxel loop and a vectorized numpy fallback (selected via
``rockgen.backend``).  Both use Guo forcing, pull-style streaming, and
half-way bounce-back at solid faces on a fully periodic domain, and agree
to roundoff.

Lattice layout: distributions are (19, nx, ny, nz) float64; direction 0 is
rest, 1-6 face neighbors, 7-18 edge neighbors.
"""

import numpy as np

from . import backend

C = np.array(
    [
        [0, 0, 0],
        [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
        [1, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0],
        [1, 0, 1], [-1, 0, -1], [1, 0, -1], [-1, 0, 1],
        [0, 1, 1], [0, -1, -1], [0, 1, -1], [0, -1, 1],
    ],
    dtype=np.int64,
)

W = np.array([1.0 / 3.0] + [1.0 / 18.0] * 6 + [1.0 / 36.0] * 12)

# opposite-direction index: c[OPP[q]] == -c[q]
OPP = np.array(
    [int(np.nonzero((C == -c).all(axis=1))[0][0]) for c in C], dtype=np.int64
)

Q = 19


def equilibrium_rest(shape) -> np.ndarray:
    """Distributions for rho = 1, u = 0 everywhere."""
    f = np.empty((Q,) + tuple(shape))
    for q in range(Q):
        f[q] = W[q]
    return f


def macroscopics(f: np.ndarray, solid: np.ndarray, force: np.ndarray, tau: float):
    """Density and Guo-corrected velocity fields (solid voxels zeroed)."""
    rho = f.sum(axis=0)
    rho_safe = np.where(solid, 1.0, rho)
    u = np.empty((3,) + solid.shape)
    for i in range(3):
        u[i] = (np.tensordot(C[:, i].astype(np.float64), f, axes=1) + 0.5 * force[i]) / rho_safe
        u[i][solid] = 0.0
    rho = np.where(solid, 0.0, rho)
    return rho, u


def _collide_numpy(f, solid, tau, force):
    rho = f.sum(axis=0)
    rho_safe = np.where(solid, 1.0, rho)
    ux = (np.tensordot(C[:, 0].astype(np.float64), f, axes=1) + 0.5 * force[0]) / rho_safe
    uy = (np.tensordot(C[:, 1].astype(np.float64), f, axes=1) + 0.5 * force[1]) / rho_safe
    uz = (np.tensordot(C[:, 2].astype(np.float64), f, axes=1) + 0.5 * force[2]) / rho_safe
    usq = ux * ux + uy * uy + uz * uz
    pref = 1.0 - 0.5 / tau
    post = np.empty_like(f)
    for q in range(Q):
        cx, cy, cz = C[q]
        cu = cx * ux + cy * uy + cz * uz
        feq = W[q] * rho_safe * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq)
        cf = cx * force[0] + cy * force[1] + cz * force[2]
        uf = ux * force[0] + uy * force[1] + uz * force[2]
        guo = W[q] * pref * (3.0 * (cf - uf) + 9.0 * cu * cf)
        post[q] = f[q] - (f[q] - feq) / tau + guo
    return post


def step_numpy(f, f_new, solid, tau, force):
    """One collide + stream + bounce-back update (vectorized)."""
    post = _collide_numpy(f, solid, tau, force)
    for q in range(Q):
        shift = tuple(C[q])
        pulled = np.roll(post[q], shift, axis=(0, 1, 2))
        src_solid = np.roll(solid, shift, axis=(0, 1, 2))
        f_new[q] = np.where(src_solid, post[OPP[q]], pulled)
    f_new[:, solid] = 0.0
    return f_new


if backend._HAVE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _step_numba_impl(f, f_new, solid, tau, fx, fy, fz, c, w, opp):  # pragma: no cover
        nx, ny, nz = solid.shape
        pref = 1.0 - 0.5 / tau
        inv_tau = 1.0 / tau
        # collide (in place: purely local)
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    if solid[x, y, z]:
                        continue
                    rho = 0.0
                    mx = 0.0
                    my = 0.0
                    mz = 0.0
                    for q in range(19):
                        fq = f[q, x, y, z]
                        rho += fq
                        mx += fq * c[q, 0]
                        my += fq * c[q, 1]
                        mz += fq * c[q, 2]
                    ux = (mx + 0.5 * fx) / rho
                    uy = (my + 0.5 * fy) / rho
                    uz = (mz + 0.5 * fz) / rho
                    usq = ux * ux + uy * uy + uz * uz
                    for q in range(19):
                        cu = c[q, 0] * ux + c[q, 1] * uy + c[q, 2] * uz
                        feq = w[q] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * usq)
                        cf = c[q, 0] * fx + c[q, 1] * fy + c[q, 2] * fz
                        uf = ux * fx + uy * fy + uz * fz
                        guo = w[q] * pref * (3.0 * (cf - uf) + 9.0 * cu * cf)
                        f[q, x, y, z] += (feq - f[q, x, y, z]) * inv_tau + guo
        # pull streaming with half-way bounce-back
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    if solid[x, y, z]:
                        for q in range(19):
                            f_new[q, x, y, z] = 0.0
                        continue
                    for q in range(19):
                        sx = (x - c[q, 0]) % nx
                        sy = (y - c[q, 1]) % ny
                        sz = (z - c[q, 2]) % nz
                        if solid[sx, sy, sz]:
                            f_new[q, x, y, z] = f[opp[q], x, y, z]
                        else:
                            f_new[q, x, y, z] = f[q, sx, sy, sz]
        return f_new

    def step_numba(f, f_new, solid, tau, force):
        return _step_numba_impl(
            f, f_new, solid, tau, force[0], force[1], force[2], C, W, OPP
        )

else:  # pragma: no cover
    step_numba = None


def step(f, f_new, solid, tau, force):
    """One lattice update via the active backend.

    Note the numba path collides into `f` in place before streaming into
    `f_new`; callers must treat `f` as consumed and swap buffers.
    """
    if backend.use_numba():
        return step_numba(f, f_new, solid, tau, force)
    return step_numpy(f, f_new, solid, tau, force)
