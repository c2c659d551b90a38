"""Generative-quality metrics: multi-scale sliced Wasserstein distance and
cohort statistics reports.

The SWD pipeline mirrors the multi-scale patch protocol used to score
progressive GANs: each volume becomes a Laplacian pyramid starting at 16^3
and doubling to full resolution; 32 random 7x7 slice patches per volume
and level are standardized into descriptors; the distance between two
descriptor sets is the average 1-D optimal-transport cost over random unit
projections (exact via sorting for equal-size sets), reported x 1000.

Cohort reports collect porosity, correlation length, specific surface
area, and optionally permeability distributions for named sample sets,
with box-plot-ready quartile summaries.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import voxel
from .errors import FitError, PercolationError

PATCH = 7
PATCHES_PER_VOLUME = 32
PROJECTIONS = 512
REPEATS = 4
REPORT_SCALE = 1e3
_STD_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# Laplacian pyramid


def _down2(a: np.ndarray) -> np.ndarray:
    n = a.shape[0] // 2
    return a.reshape(n, 2, n, 2, n, 2).mean(axis=(1, 3, 5))


def _up_axis(a: np.ndarray, ax: int) -> np.ndarray:
    # fine center i maps to coarse coordinate (i + 0.5)/2 - 0.5: each output
    # pair is 0.75 * a[j] + 0.25 * a[j -/+ 1] with edge clamping
    prev = np.concatenate([a.take([0], axis=ax), a], axis=ax)
    prev = prev.take(range(a.shape[ax]), axis=ax)
    nxt = np.concatenate([a, a.take([-1], axis=ax)], axis=ax)
    nxt = nxt.take(range(1, a.shape[ax] + 1), axis=ax)
    even = 0.75 * a + 0.25 * prev
    odd = 0.75 * a + 0.25 * nxt
    stacked = np.stack([even, odd], axis=ax + 1)
    shape = list(a.shape)
    shape[ax] *= 2
    return stacked.reshape(shape)


def _up2(a: np.ndarray) -> np.ndarray:
    for ax in range(3):
        a = _up_axis(a, ax)
    return a


def laplacian_levels(volume) -> list:
    """Laplacian pyramid bands, coarsest (plain 16^3 downsample) first.

    Band k holds the detail the k-th resolution adds over the trilinearly
    upsampled next-coarser one; summing upsampled bands reconstructs the
    input exactly up to roundoff.  The edge must be 16 * 2^m.
    """
    data = volume.data if isinstance(volume, voxel.VoxelVolume) else volume
    data = np.asarray(data, dtype=np.float64)
    edge = data.shape[0]
    if data.shape != (edge, edge, edge):
        raise ValueError(f"expected a cubic volume, got {data.shape}")
    m = edge / 16
    if edge < 16 or 16 * 2 ** int(round(np.log2(m))) != edge:
        raise ValueError(f"edge must be 16 * 2^m, got {edge}")
    chain = [data]
    while chain[-1].shape[0] > 16:
        chain.append(_down2(chain[-1]))
    bands = [chain[-1]]
    for k in range(len(chain) - 2, -1, -1):
        bands.append(chain[k] - _up2(chain[k + 1]))
    return bands


def reconstruct_pyramid(bands: list) -> np.ndarray:
    """Inverse of :func:`laplacian_levels`."""
    out = bands[0]
    for band in bands[1:]:
        out = _up2(out) + band
    return out


# ---------------------------------------------------------------------------
# descriptors and SWD


@dataclass(frozen=True)
class DescriptorSet:
    """Standardized 7x7 slice patches drawn from one pyramid level."""

    level_edge: int
    patches: np.ndarray  # (n_volumes * per_volume, PATCH, PATCH)
    n_volumes: int
    per_volume: int

    @property
    def flat(self) -> np.ndarray:
        return self.patches.reshape(self.patches.shape[0], -1)


def extract_slice_patches(
    volumes, rng: np.random.Generator, per_volume: int = PATCHES_PER_VOLUME
) -> DescriptorSet:
    """Random standardized 7x7 patches from random axis-aligned slices.

    Each patch picks a random orientation, slice index, and in-plane crop,
    then is standardized to zero mean, unit std (std floored at 1e-8, so a
    constant patch becomes all zeros).
    """
    volumes = [np.asarray(v.data if isinstance(v, voxel.VoxelVolume) else v) for v in volumes]
    edge = volumes[0].shape[0]
    if edge < PATCH:
        raise ValueError(f"level edge {edge} < patch size {PATCH}")
    patches = np.empty((len(volumes) * per_volume, PATCH, PATCH))
    k = 0
    for vol in volumes:
        for _ in range(per_volume):
            ax = int(rng.integers(0, 3))
            idx = int(rng.integers(0, vol.shape[ax]))
            plane = np.take(vol, idx, axis=ax)
            r0 = int(rng.integers(0, plane.shape[0] - PATCH + 1))
            c0 = int(rng.integers(0, plane.shape[1] - PATCH + 1))
            patch = plane[r0 : r0 + PATCH, c0 : c0 + PATCH].astype(np.float64)
            patch = patch - patch.mean()
            std = patch.std()
            # degenerate (constant) patches carry no contrast: exactly zero
            patches[k] = patch / std if std > _STD_FLOOR else 0.0
            k += 1
    return DescriptorSet(
        level_edge=edge, patches=patches, n_volumes=len(volumes), per_volume=per_volume
    )


def projected_distance(a: np.ndarray, b: np.ndarray, directions: np.ndarray) -> float:
    """Mean 1-D transport cost of two point sets under shared projections.

    For equal-size sets the sorted pairing is the exact optimal transport
    in 1-D; unequal sizes compare interpolated quantiles on a common grid.
    """
    pa = a @ directions
    pb = b @ directions
    if pa.shape[0] == pb.shape[0]:
        pa = np.sort(pa, axis=0)
        pb = np.sort(pb, axis=0)
        return float(np.mean(np.abs(pa - pb)))
    m = max(pa.shape[0], pb.shape[0])
    qs = (np.arange(m) + 0.5) / m
    qa = np.quantile(pa, qs, axis=0)
    qb = np.quantile(pb, qs, axis=0)
    return float(np.mean(np.abs(qa - qb)))


def sliced_wasserstein(
    a,
    b,
    projections: int = PROJECTIONS,
    repeats: int = REPEATS,
    seed: int = 0,
    scale: float = REPORT_SCALE,
) -> float:
    """Sliced Wasserstein distance between two descriptor sets, x scale.

    Projections are shared between the sets, so the distance of a set to
    itself is exactly zero; it is symmetric and non-negative.
    """
    fa = a.flat if isinstance(a, DescriptorSet) else np.asarray(a, dtype=np.float64)
    fb = b.flat if isinstance(b, DescriptorSet) else np.asarray(b, dtype=np.float64)
    if fa.size == 0 or fb.size == 0:
        raise ValueError("empty descriptor set")
    if fa.shape[1] != fb.shape[1]:
        raise ValueError(f"descriptor dims differ: {fa.shape[1]} vs {fb.shape[1]}")
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(repeats):
        dirs = rng.standard_normal((fa.shape[1], projections))
        dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
        results.append(projected_distance(fa, fb, dirs))
    return float(np.mean(results) * scale)


@dataclass(frozen=True)
class SWDReport:
    """Per-level and averaged sliced Wasserstein distances."""

    levels: dict  # level edge -> SWD
    average: float
    projections: int
    repeats: int
    scale: float

    def to_dict(self) -> dict:
        return {
            "levels": {str(k): v for k, v in self.levels.items()},
            "average": self.average,
            "projections": self.projections,
            "repeats": self.repeats,
            "scale": self.scale,
        }


def multiscale_swd(
    real_volumes,
    fake_volumes,
    seed: int = 0,
    per_volume: int = PATCHES_PER_VOLUME,
    projections: int = PROJECTIONS,
    repeats: int = REPEATS,
    scale: float = REPORT_SCALE,
) -> SWDReport:
    """Average SWD across Laplacian-pyramid levels of two volume cohorts."""
    real = [np.asarray(v.data if isinstance(v, voxel.VoxelVolume) else v) for v in real_volumes]
    fake = [np.asarray(v.data if isinstance(v, voxel.VoxelVolume) else v) for v in fake_volumes]
    if real[0].shape != fake[0].shape:
        raise ValueError(
            f"cohort edges differ: {real[0].shape} vs {fake[0].shape}"
        )
    real_bands = [laplacian_levels(v) for v in real]
    fake_bands = [laplacian_levels(v) for v in fake]
    n_levels = len(real_bands[0])
    rng = np.random.default_rng(seed)
    levels = {}
    for lvl in range(n_levels):
        ra = [bands[lvl] for bands in real_bands]
        fa = [bands[lvl] for bands in fake_bands]
        # both cohorts share the patch rng, so identical sets give exactly 0
        desc_seed = int(rng.integers(0, 2**63 - 1))
        dr = extract_slice_patches(ra, np.random.default_rng(desc_seed), per_volume)
        df = extract_slice_patches(fa, np.random.default_rng(desc_seed), per_volume)
        proj_seed = int(rng.integers(0, 2**63 - 1))
        levels[dr.level_edge] = sliced_wasserstein(
            dr, df, projections, repeats, proj_seed, scale
        )
    return SWDReport(
        levels=levels,
        average=float(np.mean(list(levels.values()))),
        projections=projections,
        repeats=repeats,
        scale=scale,
    )


# ---------------------------------------------------------------------------
# cohort statistics


@dataclass
class CohortReport:
    """Raw metric values and quartile summaries per named cohort.

    values[cohort][metric] is the array of per-sample values (NaN for
    failed samples); summaries hold (min, q1, median, q3, max) over the
    finite entries; failures lists (sample index, message) pairs.
    """

    values: dict = field(default_factory=dict)
    summaries: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "values": {
                c: {m: np.asarray(v).tolist() for m, v in mv.items()}
                for c, mv in self.values.items()
            },
            "summaries": self.summaries,
            "failures": {
                c: [[int(i), msg] for i, msg in fl] for c, fl in self.failures.items()
            },
        }


def _summary(values: np.ndarray) -> list:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return [float("nan")] * 5
    return [float(x) for x in np.percentile(finite, [0, 25, 50, 75, 100])]


def cohort_compare(
    cohorts: dict,
    metrics=("phi", "lam", "sa"),
    lam_mode: str = "isotropic",
    r_max: int | None = None,
    permeability_opts: dict | None = None,
) -> CohortReport:
    """Per-sample morphology (and optionally flow) metrics for named cohorts.

    `cohorts` maps a name ("real", "sync-64", ...) to a list of binary
    volumes.  Metric failures on individual samples are recorded and leave
    a NaN; the cohort still completes.
    """
    report = CohortReport()
    for name, volumes in cohorts.items():
        if len(volumes) == 0:
            raise ValueError(f"cohort {name!r} is empty")
        cols: dict = {}
        fails: list = []
        lam_cols = (
            ["lam"] if lam_mode == "isotropic" else ["lam_x", "lam_y", "lam_z"]
        )
        for metric in metrics:
            if metric == "lam":
                for c in lam_cols:
                    cols[c] = np.full(len(volumes), np.nan)
            else:
                cols[metric] = np.full(len(volumes), np.nan)
        for i, vol in enumerate(volumes):
            if not isinstance(vol, voxel.VoxelVolume):
                vol = voxel.VoxelVolume(data=vol)
            for metric in metrics:
                try:
                    if metric == "phi":
                        cols["phi"][i] = voxel.porosity(vol)
                    elif metric == "sa":
                        cols["sa"][i] = voxel.specific_surface_area(vol)
                    elif metric == "lam":
                        if lam_mode == "isotropic":
                            curve = voxel.two_point_correlation(vol, r_max, voxel.ISO)
                            cols["lam"][i] = voxel.fit_correlation_length(curve)
                        else:
                            for ax, c in zip("xyz", lam_cols):
                                curve = voxel.two_point_correlation(vol, r_max, ax)
                                cols[c][i] = voxel.fit_correlation_length(curve)
                    elif metric == "perm":
                        from .permeability import lbm_permeability

                        opts = permeability_opts or {}
                        axis = opts.get("axis", "x")
                        result = lbm_permeability(
                            vol,
                            axis=axis,
                            **{k: v for k, v in opts.items() if k != "axis"},
                        )
                        cols["perm"][i] = result.k_darcy
                    else:
                        raise ValueError(f"unknown metric {metric!r}")
                except (FitError, PercolationError, ValueError) as exc:
                    fails.append((i, f"{metric}: {exc}"))
        report.values[name] = cols
        report.summaries[name] = {m: _summary(v) for m, v in cols.items()}
        report.failures[name] = fails
    return report


def save_report(report, path: str) -> None:
    """Serialize an SWDReport or CohortReport to JSON."""
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)


def save_box_plots(report: CohortReport, out_dir: str) -> list:
    """One box-plot image per metric comparing all cohorts; returns paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    metric_names = sorted({m for mv in report.values.values() for m in mv})
    paths = []
    for metric in metric_names:
        fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(report.values), 4.0))
        names, series = [], []
        for cohort, mv in report.values.items():
            if metric in mv:
                vals = np.asarray(mv[metric])
                series.append(vals[np.isfinite(vals)])
                names.append(cohort)
        ax.boxplot(series, tick_labels=names)
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} by cohort")
        fig.tight_layout()
        path = os.path.join(out_dir, f"box_{metric}.png")
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
