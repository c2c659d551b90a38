"""Conditioning schemas, per-sample labels, and label-channel encoding.

A schema fixes which conditioning fields a model sees: a K-way one-hot
rock type, a porosity scalar, and zero, one, or three correlation-length
components.  Labels travel as (n, d) float matrices whose column order is
fixed: one-hot channels first, then porosity, then lambda components.
Scalar labels are fed raw (unnormalized); the observed training ranges are
stored alongside so generator-side labels can be drawn uniformly from them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import voxel
from .data import SubvolumeDataset
from .errors import FitError

CORR_MODES = ("off", "isotropic", "anisotropic")


@dataclass(frozen=True)
class ConditionSchema:
    """Which conditioning fields are active; immutable for a model's lifetime.

    With `normalize` set, scalar label channels are mapped from their
    recorded training range onto [-1, 1] before entering the networks
    (physical units at every API boundary; the transform is internal).
    Raw labels are the default.
    """

    rock_type_count: int = 0
    porosity: bool = False
    corr_length: str = "off"
    normalize: bool = False

    def __post_init__(self):
        if self.rock_type_count < 0:
            raise ValueError("rock_type_count must be >= 0")
        if self.corr_length not in CORR_MODES:
            raise ValueError(
                f"corr_length must be one of {CORR_MODES}, got {self.corr_length!r}"
            )

    @property
    def label_dim(self) -> int:
        lam = {"off": 0, "isotropic": 1, "anisotropic": 3}[self.corr_length]
        return self.rock_type_count + int(self.porosity) + lam

    def scalar_fields(self) -> list:
        """Names of the scalar label columns, in channel order."""
        fields = []
        if self.porosity:
            fields.append("phi")
        if self.corr_length == "isotropic":
            fields.append("lam")
        elif self.corr_length == "anisotropic":
            fields += ["lam_x", "lam_y", "lam_z"]
        return fields

    def to_dict(self) -> dict:
        return {
            "rock_type_count": self.rock_type_count,
            "porosity": self.porosity,
            "corr_length": self.corr_length,
            "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionSchema":
        return cls(**d)


@dataclass(frozen=True)
class ConditionLabel:
    """One sample's conditioning values, in physical units."""

    rock_type: int | None = None
    porosity: float | None = None
    lam: float | tuple | None = None

    def vector(self, schema: ConditionSchema) -> np.ndarray:
        vec = np.zeros(schema.label_dim)
        pos = 0
        if schema.rock_type_count:
            if self.rock_type is None or not (
                0 <= self.rock_type < schema.rock_type_count
            ):
                raise ValueError(
                    f"rock_type {self.rock_type} outside 0..{schema.rock_type_count - 1}"
                )
            vec[self.rock_type] = 1.0
            pos = schema.rock_type_count
        if schema.porosity:
            if self.porosity is None:
                raise ValueError("schema requires a porosity label")
            vec[pos] = self.porosity
            pos += 1
        if schema.corr_length == "isotropic":
            if self.lam is None:
                raise ValueError("schema requires an isotropic lambda label")
            vec[pos] = float(np.squeeze(self.lam))
        elif schema.corr_length == "anisotropic":
            lam = np.asarray(self.lam, dtype=np.float64).ravel()
            if lam.size != 3:
                raise ValueError("anisotropic schema requires (lx, ly, lz)")
            vec[pos : pos + 3] = lam
        return vec


@dataclass(frozen=True)
class LabelRange:
    """Observed (min, max) per scalar field over the training dataset."""

    ranges: dict

    def __post_init__(self):
        for name, (lo, hi) in self.ranges.items():
            if lo > hi:
                raise ValueError(f"range for {name!r} has min {lo} > max {hi}")

    @classmethod
    def from_dataset(cls, d: SubvolumeDataset, schema: ConditionSchema) -> "LabelRange":
        ranges = {}
        for name in schema.scalar_fields():
            col = np.asarray(d.labels[name], dtype=np.float64)
            ranges[name] = (float(col.min()), float(col.max()))
        return cls(ranges=ranges)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.ranges.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRange":
        return cls(ranges={k: tuple(v) for k, v in d.items()})


def compute_labels(
    d: SubvolumeDataset,
    schema: ConditionSchema,
    rock_id: int | None = None,
    r_max: int | None = None,
) -> tuple:
    """Measure per-sample labels for every field the schema needs.

    Porosity comes from the voxel count; lambda from a nonlinear fit on the
    sample's correlation curve(s).  Samples whose fit fails are dropped and
    reported.  Returns (labeled dataset, report dict); the report lists the
    excluded indices and the per-sample error messages.
    """
    n = len(d)
    labels = dict(d.labels)
    if schema.rock_type_count:
        if rock_id is not None:
            labels["rock_id"] = np.full(n, rock_id, dtype=np.int64)
        elif "rock_id" not in labels:
            raise ValueError("schema has rock types but no rock_id given")

    failures = {}
    lam_mode = schema.corr_length
    if schema.porosity:
        labels["phi"] = np.array([voxel.porosity(d.volume(i)) for i in range(n)])
    if lam_mode != "off":
        cols = {name: np.full(n, np.nan) for name in schema.scalar_fields() if name.startswith("lam")}
        for i in range(n):
            try:
                if lam_mode == "isotropic":
                    curve = voxel.two_point_correlation(d.volume(i), r_max, voxel.ISO)
                    cols["lam"][i] = voxel.fit_correlation_length(curve)
                else:
                    for ax, name in zip("xyz", ("lam_x", "lam_y", "lam_z")):
                        curve = voxel.two_point_correlation(d.volume(i), r_max, ax)
                        cols[name][i] = voxel.fit_correlation_length(curve)
            except (FitError, ValueError) as exc:
                failures[i] = str(exc)
        labels.update(cols)

    keep = np.array([i for i in range(n) if i not in failures], dtype=np.int64)
    report = {
        "total": n,
        "excluded": sorted(failures),
        "errors": failures,
    }
    out = SubvolumeDataset(
        samples=d.samples, voxel_size=d.voxel_size, labels=labels, manifest=d.manifest
    )
    if failures:
        out = out.subset(keep)
    return out, report


def label_matrix(d: SubvolumeDataset, schema: ConditionSchema) -> np.ndarray:
    """Stack the dataset's label columns into an (n, label_dim) matrix."""
    n = len(d)
    parts = []
    if schema.rock_type_count:
        onehot = np.zeros((n, schema.rock_type_count))
        ids = np.asarray(d.labels["rock_id"], dtype=np.int64)
        if ids.min() < 0 or ids.max() >= schema.rock_type_count:
            raise ValueError("rock_id outside the schema's categories")
        onehot[np.arange(n), ids] = 1.0
        parts.append(onehot)
    for name in schema.scalar_fields():
        parts.append(np.asarray(d.labels[name], dtype=np.float64).reshape(n, 1))
    if not parts:
        return np.zeros((n, 0))
    return np.concatenate(parts, axis=1)


def encode_label_grid(labels: np.ndarray, spatial_edge: int) -> np.ndarray:
    """Broadcast an (n, d) label matrix to constant (n, d, e, e, e) channels."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise ValueError(f"expected (n, d) label matrix, got shape {labels.shape}")
    n, dim = labels.shape
    e = spatial_edge
    return np.broadcast_to(
        labels.reshape(n, dim, 1, 1, 1), (n, dim, e, e, e)
    ).copy()


def normalize_label_matrix(
    labels: np.ndarray, schema: ConditionSchema, ranges: "LabelRange"
) -> np.ndarray:
    """Map scalar label columns onto [-1, 1] per the recorded ranges.

    One-hot columns pass through.  A degenerate range maps to 0.  No-op
    unless the schema has `normalize` set.
    """
    if not schema.normalize:
        return labels
    out = np.array(labels, dtype=np.float64, copy=True)
    pos = schema.rock_type_count
    for name in schema.scalar_fields():
        lo, hi = ranges.ranges[name]
        if hi > lo:
            out[:, pos] = 2.0 * (out[:, pos] - lo) / (hi - lo) - 1.0
        else:
            out[:, pos] = 0.0
        pos += 1
    return out


def decode_label_grid(grid: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`encode_label_grid`.

    Encoded channels are spatially constant, so their mean equals every
    voxel; reading one voxel per channel keeps the round trip bit-exact
    (a floating np.mean agrees only to accumulation roundoff).
    """
    grid = np.asarray(grid)
    if grid.ndim != 5:
        raise ValueError(f"expected (n, d, e, e, e) grid, got shape {grid.shape}")
    return grid[:, :, 0, 0, 0].copy()


def sample_generator_labels(
    ranges: LabelRange,
    schema: ConditionSchema,
    batch: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Generator-side label batch: scalars ~ U(min, max), rock types uniform.

    Every draw lies inside the recorded training range (hard bound).  A
    degenerate range (min == max) yields constant labels with a warning.
    """
    parts = []
    if schema.rock_type_count:
        k = schema.rock_type_count
        onehot = np.zeros((batch, k))
        onehot[np.arange(batch), rng.integers(0, k, size=batch)] = 1.0
        parts.append(onehot)
    for name in schema.scalar_fields():
        lo, hi = ranges.ranges[name]
        if lo == hi:
            warnings.warn(f"label range for {name!r} is a point; sampling constant {lo}")
            parts.append(np.full((batch, 1), lo))
        else:
            parts.append(rng.uniform(lo, hi, size=(batch, 1)))
    if not parts:
        return np.zeros((batch, 0))
    return np.concatenate(parts, axis=1)


def select_anisotropic(d: SubvolumeDataset, keep: int) -> SubvolumeDataset:
    """Retain the `keep` samples with the largest spread of axial lambdas.

    Ranks samples by the standard deviation of (lam_x, lam_y, lam_z),
    descending with stable index tie-break, and keeps the top `keep`,
    dropping near-isotropic samples before training.
    """
    for name in ("lam_x", "lam_y", "lam_z"):
        if name not in d.labels:
            raise ValueError("select_anisotropic needs anisotropic lambda labels")
    if keep > len(d):
        raise ValueError(f"keep={keep} exceeds dataset size {len(d)}")
    lam = np.stack(
        [np.asarray(d.labels[n], dtype=np.float64) for n in ("lam_x", "lam_y", "lam_z")],
        axis=1,
    )
    spread = lam.std(axis=1)
    order = np.argsort(-spread, kind="stable")[:keep]
    return d.subset(order)


def make_latent(noise: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Concatenate noise with broadcast label channels: z* = noise (+) labels.

    noise is (n, 1, e, e, e); labels is (n, d).  The result has 1 + d
    channels; slicing channels 1..d back out and spatially averaging
    recovers the label matrix exactly.
    """
    noise = np.asarray(noise)
    if noise.ndim != 5 or noise.shape[1] != 1:
        raise ValueError(f"noise must be (n, 1, e, e, e), got {noise.shape}")
    labels = np.asarray(labels, dtype=noise.dtype)
    if labels.ndim != 2 or labels.shape[0] != noise.shape[0]:
        raise ValueError(
            f"labels {labels.shape} do not match noise batch {noise.shape[0]}"
        )
    if labels.shape[1] == 0:
        return noise
    grid = encode_label_grid(labels, noise.shape[2]).astype(noise.dtype)
    return np.concatenate([noise, grid], axis=1)
