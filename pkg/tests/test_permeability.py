import numpy as np
import pytest

import rockgen._lbm_kernels as kernels
from rockgen.errors import PercolationError
from rockgen.permeability import (
    lbm_permeability,
    percolation_check,
    permeability_tensor,
    total_mass,
)
from rockgen.voxel import VoxelVolume

from oracles import bfs_percolation


def channel(h, flow_extent=4, width=4):
    """Plates normal to y, open aperture h, flow along x."""
    data = np.zeros((flow_extent, h + 2, width), dtype=np.uint8)
    data[:, 1 : h + 1, :] = 1
    return VoxelVolume(data=data)


def random_geometry(edge, p, seed):
    rng = np.random.default_rng(seed)
    return VoxelVolume(data=(rng.random((edge,) * 3) < p).astype(np.uint8))


class TestLatticeBasics:
    def test_opposite_directions(self):
        for q in range(kernels.Q):
            np.testing.assert_array_equal(kernels.C[kernels.OPP[q]], -kernels.C[q])

    def test_weights_normalized(self):
        assert kernels.W.sum() == pytest.approx(1.0, abs=1e-15)

    def test_backends_agree_on_one_step(self):
        geo = random_geometry(8, 0.7, seed=0)
        solid = geo.data == 0
        force = np.array([1e-5, 0.0, 0.0])
        f0 = kernels.equilibrium_rest(solid.shape)
        f0[:, solid] = 0.0
        a = kernels.step_numpy(f0.copy(), np.empty_like(f0), solid, 1.0, force)
        b = kernels.step_numba(f0.copy(), np.empty_like(f0), solid, 1.0, force)
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_numpy_backend_selected_by_env(self, monkeypatch):
        monkeypatch.setenv("ROCKGEN_BACKEND", "numpy")
        res = lbm_permeability(channel(8), axis="x", tol=1e-6)
        assert res.converged
        monkeypatch.setenv("ROCKGEN_BACKEND", "numba")
        res2 = lbm_permeability(channel(8), axis="x", tol=1e-6)
        assert res2.k_lattice == pytest.approx(res.k_lattice, rel=1e-10)


class TestPoiseuille:
    @pytest.mark.parametrize("h", [8, 16, 32])
    def test_matches_analytic_plane_flow(self, h):
        res = lbm_permeability(channel(h), axis="x", tau=1.0, force=1e-5, tol=1e-8)
        assert res.converged
        assert res.k_lattice == pytest.approx(h * h / 12, rel=0.05)

    def test_tau_independence(self):
        ks = [
            lbm_permeability(channel(32), axis="x", tau=tau, force=1e-5, tol=1e-8).k_lattice
            for tau in (0.8, 1.0, 1.2)
        ]
        assert max(ks) / min(ks) - 1 <= 0.01

    def test_force_linearity(self):
        k1 = lbm_permeability(channel(16), axis="x", force=1e-5, tol=1e-8).k_lattice
        k2 = lbm_permeability(channel(16), axis="x", force=5e-6, tol=1e-8).k_lattice
        assert k1 == pytest.approx(k2, rel=1e-6)

    def test_darcy_conversion_uses_voxel_size_squared(self):
        v1 = channel(8)
        v9 = VoxelVolume(data=v1.data, voxel_size=9.0)
        r1 = lbm_permeability(v1, axis="x", tol=1e-8)
        r9 = lbm_permeability(v9, axis="x", tol=1e-8)
        assert r9.k_darcy == pytest.approx(81 * r1.k_darcy, rel=1e-12)
        assert r1.k_darcy == pytest.approx(r1.k_lattice / 0.9869233, rel=1e-12)


class TestConservationAndInvariance:
    def test_mass_conserved_per_step(self):
        geo = random_geometry(10, 0.6, seed=1)
        solid = geo.data == 0
        force = np.array([0.0, 1e-5, 0.0])
        f = kernels.equilibrium_rest(solid.shape)
        f[:, solid] = 0.0
        fn = np.empty_like(f)
        mass = total_mass(f, solid)
        for _ in range(50):
            fn = kernels.step(f, fn, solid, 1.0, force)
            f, fn = fn, f
            new_mass = total_mass(f, solid)
            assert abs(new_mass - mass) / mass <= 1e-10
            mass = new_mass

    def test_rotation_equivariance(self):
        geo = random_geometry(10, 0.75, seed=2)
        rot = VoxelVolume(data=np.ascontiguousarray(np.rot90(geo.data, 1, axes=(0, 1))))
        # new axis 0 of the rotated volume indexes the old y axis
        ky = lbm_permeability(geo, axis="y", tol=1e-8).k_lattice
        kx_rot = lbm_permeability(rot, axis="x", tol=1e-8).k_lattice
        assert kx_rot == pytest.approx(ky, rel=1e-8)


class TestPercolation:
    def test_straight_channel(self):
        assert percolation_check(channel(4), axis="x")

    def test_all_solid(self):
        v = VoxelVolume(data=np.zeros((6, 6, 6), dtype=np.uint8))
        assert not percolation_check(v, axis="x")

    def test_blocked_channel(self):
        data = np.ones((8, 8, 8), dtype=np.uint8)
        data[4, :, :] = 0  # solid wall across the flow axis
        v = VoxelVolume(data=data)
        assert not percolation_check(v, axis="x")
        assert percolation_check(v, axis="y")

    @pytest.mark.parametrize("p", [0.25, 0.3116, 0.4])
    def test_matches_bfs_oracle(self, p):
        for seed in range(6):
            v = random_geometry(16, p, seed=seed)
            for axis in ("x", "y", "z"):
                assert percolation_check(v, axis=axis) == bfs_percolation(v.data, axis)

    def test_solid_volume_raises_in_solver(self):
        v = VoxelVolume(data=np.zeros((6, 6, 6), dtype=np.uint8))
        with pytest.raises(PercolationError):
            lbm_permeability(v, axis="x")


class TestFlowResult:
    def test_unconverged_flagged(self):
        res = lbm_permeability(channel(16), axis="x", max_steps=150, tol=1e-12)
        assert not res.converged
        assert res.iterations == 150

    def test_tensor_averages_axes(self):
        geo = random_geometry(10, 0.8, seed=3)
        out = permeability_tensor(geo, axes="xy", tol=1e-6)
        ks = [out["axes"][a].k_lattice for a in "xy"]
        assert out["mean_k_lattice"] == pytest.approx(np.mean(ks))

    def test_record_round_trip(self):
        res = lbm_permeability(channel(8), axis="x", tol=1e-6)
        d = res.to_dict()
        assert d["axis"] == "x" and d["converged"]
        assert d["k_lattice"] > 0
