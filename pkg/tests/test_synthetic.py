import numpy as np
import pytest

from rockgen.synthetic import (
    gaussian_field,
    synthetic_suite,
    synthetic_volume,
    truncate_to_porosity,
)
from rockgen.voxel import fit_correlation_length, porosity, two_point_correlation


class TestGaussianField:
    def test_unit_variance_zero_meanish(self):
        rng = np.random.default_rng(0)
        field = gaussian_field(32, 4.0, rng)
        assert field.std() == pytest.approx(1.0, abs=1e-12)
        assert abs(field.mean()) < 0.5  # one realization, loose bound

    def test_longer_covariance_smoother_field(self):
        # mean |increment| shrinks as the covariance length grows
        rng1, rng2 = np.random.default_rng(1), np.random.default_rng(1)
        rough = gaussian_field(32, 2.0, rng1)
        smooth = gaussian_field(32, 8.0, rng2)
        d_rough = np.abs(np.diff(rough, axis=0)).mean()
        d_smooth = np.abs(np.diff(smooth, axis=0)).mean()
        assert d_smooth < d_rough

    def test_anisotropic_axes_differ(self):
        rng = np.random.default_rng(2)
        field = gaussian_field(32, (8.0, 2.0, 2.0), rng)
        dx = np.abs(np.diff(field, axis=0)).mean()
        dy = np.abs(np.diff(field, axis=1)).mean()
        assert dx < dy  # smoother along the long-correlation axis

    def test_bad_length_rejected(self):
        with pytest.raises(ValueError):
            gaussian_field(16, 0.0, np.random.default_rng(0))


class TestTruncation:
    def test_exact_pore_count(self):
        rng = np.random.default_rng(3)
        field = rng.standard_normal((16, 16, 16))
        out = truncate_to_porosity(field, 0.25)
        assert int(out.sum()) == round(0.25 * 16**3)

    def test_extremes(self):
        field = np.random.default_rng(4).standard_normal((8, 8, 8))
        assert truncate_to_porosity(field, 0.0).sum() == 0
        assert truncate_to_porosity(field, 1.0).all()

    def test_bad_phi(self):
        with pytest.raises(ValueError):
            truncate_to_porosity(np.zeros((4, 4, 4)), 1.5)


class TestSyntheticVolume:
    def test_porosity_exact_by_construction(self):
        v = synthetic_volume(edge=32, phi=0.25, corr_length=3.0, seed=0)
        assert porosity(v) == 0.25

    def test_deterministic(self):
        a = synthetic_volume(edge=16, phi=0.3, corr_length=3.0, seed=9)
        b = synthetic_volume(edge=16, phi=0.3, corr_length=3.0, seed=9)
        np.testing.assert_array_equal(a.data, b.data)

    def test_fitted_lambda_tracks_construction(self):
        fitted = []
        for lam in (2.0, 4.0, 6.0):
            lams = []
            for seed in range(3):
                v = synthetic_volume(edge=32, phi=0.3, corr_length=lam, seed=seed)
                curve = two_point_correlation(v, r_max=8, axis="iso")
                lams.append(fit_correlation_length(curve))
            fitted.append(np.mean(lams))
        assert fitted[0] < fitted[1] < fitted[2]


class TestSyntheticSuite:
    def test_counts_and_ranges(self):
        vols = synthetic_suite(8, 16, (0.2, 0.3), (2.0, 4.0), seed=5)
        assert len(vols) == 8
        phis = [porosity(v) for v in vols]
        assert all(0.2 - 1e-3 <= p <= 0.3 + 1e-3 for p in phis)

    def test_anisotropic_flag(self):
        vols = synthetic_suite(2, 16, (0.25, 0.25), (2.0, 6.0), seed=6, anisotropic=True)
        assert len(vols) == 2
