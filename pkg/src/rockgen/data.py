"""Training-data preparation: resampling, subvolume extraction, rotation
augmentation, REV analysis, and resolution pyramids.

Extraction and rotation return numpy views of the source volume, so a
4096-crop dataset costs no sample memory until it is written to disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .voxel import VoxelVolume

#: Canonical rock-type order; one-hot category k refers to this row order.
ROCK_TYPES = ("berea", "doddington", "estaillade", "ketton", "sandy")

#: (name, original edge, original resolution um, sample resolution um)
SOURCE_TABLE = (
    ("berea", 1000, 2.25, 9.00),
    ("doddington", 700, 5.40, 15.12),
    ("estaillade", 650, 3.31, 8.60),
    ("ketton", 1000, 3.00, 12.00),
    ("sandy", 512, 3.00, 6.14),
)


@dataclass(frozen=True)
class RockSource:
    """Provenance record for one imaged source volume.

    The sample resolution must equal original_resolution * original_size/250
    (the 250^3 working-grid convention) within rounding.
    """

    name: str
    original_size: int
    original_resolution: float
    sample_resolution: float
    path: str = ""

    def __post_init__(self):
        implied = self.original_resolution * self.original_size / 250.0
        if abs(implied - self.sample_resolution) > 0.01:
            raise ValueError(
                f"sample_resolution {self.sample_resolution} inconsistent with "
                f"original_resolution * size/250 = {implied:.4f}"
            )


@dataclass
class SubvolumeDataset:
    """Uniform-edge cubic samples with per-sample labels and provenance.

    `samples` hold the binary arrays (possibly views of a shared source).
    `labels` is a column store: scalar arrays of length n keyed by name
    ("rock_id", "phi", "lam", "lam_x", "lam_y", "lam_z", "sa" as present).
    `manifest` records source name, crop offsets (n, 3), applied rotation
    in degrees (n,), and any exclusions.
    """

    samples: list
    voxel_size: float = 1.0
    labels: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        edges = {s.shape for s in self.samples}
        if len(edges) > 1:
            raise ValueError(f"samples have mixed shapes: {edges}")
        for name, col in self.labels.items():
            if len(col) != len(self.samples):
                raise ValueError(
                    f"label column {name!r} has {len(col)} entries for "
                    f"{len(self.samples)} samples"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def edge(self) -> int:
        return self.samples[0].shape[0] if self.samples else 0

    def volume(self, i: int) -> VoxelVolume:
        return VoxelVolume(data=self.samples[i], voxel_size=self.voxel_size)

    def subset(self, indices) -> "SubvolumeDataset":
        indices = np.asarray(indices)
        manifest = dict(self.manifest)
        for key in ("offsets", "rotation"):
            if key in manifest:
                manifest[key] = np.asarray(manifest[key])[indices]
        return SubvolumeDataset(
            samples=[self.samples[i] for i in indices],
            voxel_size=self.voxel_size,
            labels={k: np.asarray(v)[indices] for k, v in self.labels.items()},
            manifest=manifest,
        )


def resample_volume(v: VoxelVolume, target_edge: int) -> VoxelVolume:
    """Trilinear resample of the indicator field, re-binarized at 0.5.

    Voxel size rescales by original_edge / target_edge, so the physical
    extent is preserved (1000^3 at 2.25 um -> 250^3 at 9.00 um).
    """
    if target_edge < 1:
        raise ValueError(f"target_edge must be >= 1, got {target_edge}")
    n = v.edge
    if target_edge == n:
        return v
    # pixel-center alignment: target index i samples source coordinate
    # (i + 0.5) * n/m - 0.5, which is the identity when m == n
    coords_1d = (np.arange(target_edge) + 0.5) * (n / target_edge) - 0.5
    cx, cy, cz = np.meshgrid(coords_1d, coords_1d, coords_1d, indexing="ij")
    interp = map_coordinates(
        v.data.astype(np.float64),
        [cx, cy, cz],
        order=1,
        mode="nearest",
    )
    data = (interp >= 0.5).astype(np.uint8)
    return VoxelVolume(data=data, voxel_size=v.voxel_size * n / target_edge)


def extract_subvolumes(
    v: VoxelVolume, edge: int, stride: int, source: str = ""
) -> SubvolumeDataset:
    """Regular grid of cubic crops at offsets 0, stride, 2*stride, ...

    Per-axis crop count is floor((extent - edge) / stride) + 1; samples are
    read-only views into the source array, bit-identical to the crops.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    shape = v.data.shape
    if any(edge > n for n in shape):
        raise ValueError(f"edge {edge} exceeds source extent {shape}")
    counts = [(n - edge) // stride + 1 for n in shape]
    base = v.data.view()
    base.flags.writeable = False
    samples = []
    offsets = []
    for i in range(counts[0]):
        for j in range(counts[1]):
            for k in range(counts[2]):
                ox, oy, oz = i * stride, j * stride, k * stride
                samples.append(base[ox : ox + edge, oy : oy + edge, oz : oz + edge])
                offsets.append((ox, oy, oz))
    n = len(samples)
    return SubvolumeDataset(
        samples=samples,
        voxel_size=v.voxel_size,
        manifest={
            "source": source,
            "offsets": np.array(offsets, dtype=np.int64).reshape(n, 3),
            "rotation": np.zeros(n, dtype=np.int64),
        },
    )


def augment_rotations(d: SubvolumeDataset) -> SubvolumeDataset:
    """Each sample plus its 90 and 180 degree rotations about the z axis.

    Output order is [originals, all 90-degree copies, all 180-degree
    copies], exactly 3x the input.  Porosity, surface area, rock id, and
    isotropic lambda are rotation-invariant; per-axis lambda swaps x and y
    for the 90-degree copies.
    """
    if d.samples and d.samples[0].shape[0] != d.samples[0].shape[1]:
        raise ValueError("rotation augmentation requires cubic samples")
    rot90 = [np.rot90(s, 1, axes=(0, 1)) for s in d.samples]
    rot180 = [np.rot90(s, 2, axes=(0, 1)) for s in d.samples]

    labels = {}
    for name, col in d.labels.items():
        col = np.asarray(col)
        if name == "lam_x" and "lam_y" in d.labels:
            swapped = np.asarray(d.labels["lam_y"])
        elif name == "lam_y" and "lam_x" in d.labels:
            swapped = np.asarray(d.labels["lam_x"])
        else:
            swapped = col
        labels[name] = np.concatenate([col, swapped, col])

    n = len(d)
    offsets = np.asarray(
        d.manifest.get("offsets", np.zeros((n, 3), dtype=np.int64))
    )
    rotation = np.concatenate(
        [
            np.asarray(d.manifest.get("rotation", np.zeros(n, dtype=np.int64))),
            np.full(n, 90, dtype=np.int64),
            np.full(n, 180, dtype=np.int64),
        ]
    )
    manifest = dict(d.manifest)
    manifest["offsets"] = np.concatenate([offsets, offsets, offsets])
    manifest["rotation"] = rotation
    return SubvolumeDataset(
        samples=list(d.samples) + rot90 + rot180,
        voxel_size=d.voxel_size,
        labels=labels,
        manifest=manifest,
    )


def rev_curve(
    v: VoxelVolume,
    edge_lengths,
    samples_per_edge: int,
    seed: int = 0,
) -> dict:
    """Porosities of randomly positioned cubic crops per edge length.

    Supports the representative-elementary-volume choice: the spread of
    crop porosity should shrink as the edge grows toward the REV size.
    Returns {edge: porosity array of length samples_per_edge}.
    """
    shape = v.data.shape
    if any(max(edge_lengths) > n for n in shape):
        raise ValueError(
            f"largest edge {max(edge_lengths)} exceeds source extent {shape}"
        )
    rng = np.random.default_rng(seed)
    table = {}
    for edge in edge_lengths:
        phis = np.empty(samples_per_edge)
        for i in range(samples_per_edge):
            ox, oy, oz = (rng.integers(0, n - edge + 1) for n in shape)
            crop = v.data[ox : ox + edge, oy : oy + edge, oz : oz + edge]
            phis[i] = np.mean(crop, dtype=np.float64)
        table[int(edge)] = phis
    return table


@dataclass(frozen=True)
class ResolutionPyramid:
    """Binary volumes at edges 4, 8, 16, 32, 64, coarse to fine.

    levels[k] has edge 4 * 2^k; the finest level is the source sample.
    """

    levels: tuple

    def __post_init__(self):
        for k, lvl in enumerate(self.levels):
            if lvl.edge != 4 * 2**k:
                raise ValueError(
                    f"level {k} edge {lvl.edge} != {4 * 2 ** k}"
                )


def _halve_mean(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    if n % 2:
        raise ValueError(f"edge {n} not divisible by 2")
    m = n // 2
    return a.reshape(m, 2, m, 2, m, 2).mean(axis=(1, 3, 5))


def halve_binary(data: np.ndarray) -> np.ndarray:
    """Factor-2 downsample: 2x2x2 block mean, thresholded at 0.5 (ties pore)."""
    return (_halve_mean(data.astype(np.float64)) >= 0.5).astype(np.uint8)


def downsample_chain(data: np.ndarray, coarsest_edge: int = 4) -> dict:
    """Binary levels at every factor-2 edge down to `coarsest_edge`.

    Each level thresholds the accumulated block mean of the original field
    (not the previous binary level), which keeps porosity drift far smaller
    than majority-of-majorities.  Returns {edge: uint8 array} including the
    input edge.
    """
    edge = data.shape[0]
    levels = {edge: np.asarray(data, dtype=np.uint8)}
    cont = data.astype(np.float64)
    while cont.shape[0] > coarsest_edge:
        cont = _halve_mean(cont)
        levels[cont.shape[0]] = (cont >= 0.5).astype(np.uint8)
    return levels


def build_pyramid(v: VoxelVolume) -> ResolutionPyramid:
    """Resolution pyramid for progressive training; source edge must be 64."""
    if v.edge != 64:
        raise ValueError(f"pyramid source must be 64^3, got edge {v.edge}")
    chain = downsample_chain(v.data, coarsest_edge=4)
    levels = [
        VoxelVolume(data=chain[edge], voxel_size=v.voxel_size * 64 / edge)
        for edge in (4, 8, 16, 32, 64)
    ]
    return ResolutionPyramid(levels=tuple(levels))
