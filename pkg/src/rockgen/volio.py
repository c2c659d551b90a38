"""On-disk formats: raw voxel volumes and dataset directories.

Volume format: a raw little-endian unsigned-byte voxel stream with x the
fastest-varying axis, plus a text key-value sidecar at `<path>.meta`
holding shape, voxel size, phase convention, and the binary flag.

Dataset format: one directory holding `manifest.txt` (key-value header
plus one record line per sample) and `samples.bin` (the packed sample
streams, uint8, x fastest, in record order).

Both round-trip losslessly for binary data and are deterministic: writing
the same dataset twice yields byte-identical files.
"""

from __future__ import annotations

import os

import numpy as np

from .data import SubvolumeDataset
from .errors import DatasetFormatError
from .voxel import VoxelVolume

VOLUME_FORMAT = "rockgen-volume-v1"
DATASET_FORMAT = "rockgen-dataset-v1"

_LABEL_FORMATS = {"rock_id": "d"}  # everything else serializes as repr(float)


def _pack(sample: np.ndarray) -> bytes:
    # x fastest on disk; arrays are (nx, ny, nz) C-order, i.e. z fastest
    return np.ascontiguousarray(sample.astype(np.uint8).transpose(2, 1, 0)).tobytes()


def _unpack(buf: np.ndarray, shape: tuple) -> np.ndarray:
    nx, ny, nz = shape
    return buf.reshape(nz, ny, nx).transpose(2, 1, 0)


def write_volume(v: VoxelVolume, path: str) -> None:
    """Write a binary volume as `<path>` (raw bytes) + `<path>.meta`."""
    if not v.is_binary:
        raise ValueError("raw format stores binary volumes only")
    nx, ny, nz = v.data.shape
    with open(path, "wb") as fh:
        fh.write(_pack(v.data))
    meta = [
        f"format = {VOLUME_FORMAT}",
        f"shape = {nx} {ny} {nz}",
        f"voxel_size = {v.voxel_size!r}",
        "binary = 1",
        "pore_value = 1",
        "order = x-fastest",
    ]
    with open(path + ".meta", "w") as fh:
        fh.write("\n".join(meta) + "\n")


def read_volume(path: str) -> VoxelVolume:
    meta_path = path + ".meta"
    if not os.path.exists(meta_path):
        raise DatasetFormatError(f"missing sidecar {meta_path}")
    meta = _read_keyvals(meta_path)
    if meta.get("format") != VOLUME_FORMAT:
        raise DatasetFormatError(f"unknown volume format {meta.get('format')!r}")
    try:
        shape = tuple(int(t) for t in meta["shape"].split())
        voxel_size = float(meta["voxel_size"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad sidecar {meta_path}: {exc}") from exc
    raw = np.fromfile(path, dtype=np.uint8)
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise DatasetFormatError(
            f"{path}: {raw.size} bytes, expected {expected} for shape {shape}"
        )
    return VoxelVolume(data=_unpack(raw, shape), voxel_size=voxel_size)


def _read_keyvals(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def write_dataset(d: SubvolumeDataset, path: str) -> None:
    """Write a dataset directory: manifest.txt + samples.bin."""
    os.makedirs(path, exist_ok=True)
    n = len(d)
    edge = d.edge
    columns = sorted(d.labels)
    offsets = np.asarray(
        d.manifest.get("offsets", np.zeros((n, 3), dtype=np.int64))
    )
    rotation = np.asarray(d.manifest.get("rotation", np.zeros(n, dtype=np.int64)))

    lines = [
        f"format = {DATASET_FORMAT}",
        f"count = {n}",
        f"edge = {edge}",
        f"voxel_size = {d.voxel_size!r}",
        f"source = {d.manifest.get('source', '')}",
        f"label_columns = {' '.join(columns)}",
        "[records]",
    ]
    for i in range(n):
        fields = [str(i)]
        fields += [str(int(x)) for x in offsets[i]]
        fields.append(str(int(rotation[i])))
        for name in columns:
            val = d.labels[name][i]
            if _LABEL_FORMATS.get(name) == "d":
                fields.append(str(int(val)))
            else:
                fields.append(repr(float(val)))
        lines.append("\t".join(fields))
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    with open(os.path.join(path, "samples.bin"), "wb") as fh:
        for sample in d.samples:
            fh.write(_pack(sample))


def read_dataset(path: str) -> SubvolumeDataset:
    manifest_path = os.path.join(path, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise DatasetFormatError(f"missing manifest {manifest_path}")

    header = {}
    records = []
    in_records = False
    with open(manifest_path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.strip() == "[records]":
                in_records = True
                continue
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if in_records:
                records.append(line.split("\t"))
            elif "=" in line:
                key, val = line.split("=", 1)
                header[key.strip()] = val.strip()

    if header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"unknown dataset format {header.get('format')!r}")
    try:
        count = int(header["count"])
        edge = int(header["edge"])
        voxel_size = float(header["voxel_size"])
        columns = header["label_columns"].split()
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"bad manifest header: {exc}") from exc
    if len(records) != count:
        raise DatasetFormatError(
            f"manifest lists {len(records)} records, header says {count}"
        )

    sample_bytes = edge**3
    bin_path = os.path.join(path, "samples.bin")
    if count > 0 and not os.path.exists(bin_path):
        raise DatasetFormatError(f"missing sample file {bin_path}")
    raw = (
        np.fromfile(bin_path, dtype=np.uint8)
        if os.path.exists(bin_path)
        else np.empty(0, dtype=np.uint8)
    )
    if raw.size != count * sample_bytes:
        raise DatasetFormatError(
            f"{bin_path}: {raw.size} bytes, expected {count * sample_bytes}"
        )

    samples = []
    offsets = np.zeros((count, 3), dtype=np.int64)
    rotation = np.zeros(count, dtype=np.int64)
    labels = {name: np.empty(count) for name in columns}
    if "rock_id" in labels:
        labels["rock_id"] = np.empty(count, dtype=np.int64)
    shape = (edge, edge, edge)
    for i, rec in enumerate(records):
        expected_fields = 5 + len(columns)
        if len(rec) != expected_fields:
            raise DatasetFormatError(
                f"record {i} has {len(rec)} fields, expected {expected_fields}"
            )
        offsets[i] = [int(x) for x in rec[1:4]]
        rotation[i] = int(rec[4])
        for j, name in enumerate(columns):
            labels[name][i] = float(rec[5 + j])
        chunk = raw[i * sample_bytes : (i + 1) * sample_bytes]
        samples.append(_unpack(chunk, shape))

    return SubvolumeDataset(
        samples=samples,
        voxel_size=voxel_size,
        labels=labels,
        manifest={
            "source": header.get("source", ""),
            "offsets": offsets,
            "rotation": rotation,
        },
    )
