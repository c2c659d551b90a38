"""Experiment orchestration: generation from checkpoints and end-to-end runs.

`generate` is the inference entry point: it rebuilds the generator from a
self-describing checkpoint, feeds it seeded noise plus user labels, and
returns binarized volumes with a provenance manifest.  `run_experiment`
chains data preparation, training, cohort generation, and evaluation into
one artifact directory that is reproducible from its persisted config and
seeds alone.
"""

from __future__ import annotations

import json
import os
import traceback

import numpy as np
import torch

from . import config as config_mod
from . import evaluation, synthetic, training, volio
from .conditioning import (
    ConditionLabel,
    ConditionSchema,
    LabelRange,
    compute_labels,
    normalize_label_matrix,
    sample_generator_labels,
    select_anisotropic,
)
from .data import SubvolumeDataset, augment_rotations, extract_subvolumes, resample_volume
from .networks import Generator, GeneratorSpec, StagePhase
from .voxel import VoxelVolume, binarize

#: Noise edges supported by the scalable generator at inference time.
NOISE_EDGES = (4, 6, 8, 10)

_GEN_BATCH = 16


def load_generator(checkpoint_path: str):
    """Rebuild the generator (and its metadata) from a checkpoint."""
    payload = torch.load(checkpoint_path, weights_only=False)
    if payload.get("version") != training.CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    spec = GeneratorSpec.from_dict(payload["spec"])
    schema = ConditionSchema.from_dict(payload["schema"])
    stage = payload["phase"]["stage"]
    gen = Generator(spec, schema.label_dim, stage=stage)
    gen.load_state_dict(payload["generator"])
    gen.eval()
    meta = {
        "schema": schema,
        "ranges": LabelRange.from_dict(payload["ranges"]),
        "stage": stage,
        "voxel_size": payload.get("voxel_size", 1.0),
        "version": payload["version"],
    }
    return gen, meta


def valid_edges(stage: int) -> tuple:
    return tuple(e * 2 ** (stage - 1) for e in NOISE_EDGES)


def _labels_to_matrix(labels, schema: ConditionSchema, count: int) -> np.ndarray:
    if isinstance(labels, ConditionLabel):
        vec = labels.vector(schema)
        return np.tile(vec, (count, 1))
    if isinstance(labels, (list, tuple)) and labels and isinstance(labels[0], ConditionLabel):
        if len(labels) != count:
            raise ValueError(f"{len(labels)} labels for count {count}")
        return np.stack([lab.vector(schema) for lab in labels])
    mat = np.asarray(labels, dtype=np.float64)
    if mat.ndim == 1:
        mat = np.tile(mat, (count, 1))
    if mat.shape != (count, schema.label_dim):
        raise ValueError(
            f"label matrix shape {mat.shape} != ({count}, {schema.label_dim})"
        )
    return mat


def generate(
    checkpoint_path: str,
    labels,
    edge: int,
    count: int,
    seed: int = 0,
) -> tuple:
    """Sample `count` binary volumes of the requested edge from a model.

    `labels` may be a ConditionLabel (broadcast), a list of them, or an
    (count, d) matrix.  The same seed and labels always produce
    bit-identical volumes on one device configuration.  Returns
    (volumes, manifest).
    """
    gen, meta = load_generator(checkpoint_path)
    stage = meta["stage"]
    edges = valid_edges(stage)
    if edge not in edges:
        raise ValueError(
            f"edge {edge} unsupported at stage {stage}; valid edges: {edges}"
        )
    noise_edge = edge // 2 ** (stage - 1)
    schema = meta["schema"]
    mat = _labels_to_matrix(labels, schema, count) if count else np.zeros((0, schema.label_dim))

    net_mat = normalize_label_matrix(mat, schema, meta["ranges"]) if count else mat
    rng = torch.Generator().manual_seed(seed)
    noise = torch.randn((count, 1, noise_edge, noise_edge, noise_edge), generator=rng)
    phase = StagePhase(stage=stage, alpha=1.0)
    volumes = []
    with torch.no_grad():
        for lo in range(0, count, _GEN_BATCH):
            hi = min(lo + _GEN_BATCH, count)
            z = training.make_latent(
                noise[lo:hi], torch.from_numpy(net_mat[lo:hi].astype(np.float32))
            )
            out = gen(z, phase).numpy()[:, 0]
            for vol in out:
                cont = VoxelVolume(
                    data=vol,
                    voxel_size=meta["voxel_size"],
                    is_binary=False,
                    value_range=(-1.0, 1.0),
                )
                volumes.append(binarize(cont))
    manifest = {
        "model": os.path.abspath(checkpoint_path),
        "model_version": meta["version"],
        "stage": stage,
        "edge": edge,
        "noise_edge": noise_edge,
        "count": count,
        "noise_seed": seed,
        "labels": mat.tolist(),
        "binarize_threshold": 0.0,
        "schema": schema.to_dict(),
    }
    return volumes, manifest


# ---------------------------------------------------------------------------
# end-to-end experiment


def _prepare_synthetic(data_cfg: dict, schema: ConditionSchema, seed: int) -> SubvolumeDataset:
    syn = data_cfg["synthetic"]
    count, edge = syn["count"], syn["edge"]
    phi_range = tuple(syn["porosity"]) if isinstance(syn["porosity"], (list, tuple)) else (syn["porosity"],) * 2
    cl = syn["corr_length"]
    lam_range = tuple(cl) if isinstance(cl, (list, tuple)) else (float(cl), float(cl))

    if syn.get("types"):
        rng = np.random.default_rng(seed)
        samples, rock_ids = [], []
        per_type = count // len(syn["types"])
        for k, t in enumerate(syn["types"]):
            lam = t["corr_length"]
            vols = synthetic.synthetic_suite(
                per_type, edge, phi_range, (lam, lam),
                seed=int(rng.integers(0, 2**31)),
            )
            samples.extend(v.data for v in vols)
            rock_ids.extend([k] * per_type)
        return SubvolumeDataset(
            samples=samples,
            voxel_size=1.0,
            labels={"rock_id": np.array(rock_ids, dtype=np.int64)},
            manifest={"source": "synthetic-types"},
        )

    vols = synthetic.synthetic_suite(
        count, edge, phi_range, lam_range, seed=seed,
        anisotropic=bool(syn.get("anisotropic")),
    )
    return SubvolumeDataset(
        samples=[v.data for v in vols],
        voxel_size=1.0,
        manifest={"source": "synthetic"},
    )


def _prepare_source(data_cfg: dict) -> SubvolumeDataset:
    src = data_cfg["source"]
    volume = volio.read_volume(src["path"])
    if src.get("resample_to"):
        volume = resample_volume(volume, src["resample_to"])
    ds = extract_subvolumes(volume, src["edge"], src["stride"], source=src["path"])
    return ds


def prepare_data(cfg: dict) -> tuple:
    """Data phase: build, label, select, and augment the training dataset."""
    schema = ConditionSchema(
        rock_type_count=cfg["schema"]["rock_types"],
        porosity=cfg["schema"]["porosity"],
        corr_length=cfg["schema"]["corr_length"],
        normalize=cfg["schema"].get("normalize", False),
    )
    data_cfg = cfg["data"]
    if "synthetic" in data_cfg:
        ds = _prepare_synthetic(data_cfg, schema, cfg["seed"])
    else:
        ds = _prepare_source(data_cfg)
    ds, report = compute_labels(ds, schema)
    if data_cfg.get("select_anisotropic"):
        ds = select_anisotropic(ds, data_cfg["select_anisotropic"])
    rotations = data_cfg.get("rotations", 0)
    if "source" in data_cfg:
        rotations = data_cfg["source"].get("rotations", rotations)
    if rotations:
        ds = augment_rotations(ds)
    return ds, schema, report


def _build_plan(cfg: dict) -> training.TrainPlan:
    tr = cfg["train"]
    seed = tr.get("seed", cfg["seed"])
    kwargs = dict(
        batch_size=tr.get("batch_size", 16),
        seed=seed,
        checkpoint_every=tr.get("checkpoint_every", 0),
        eval_every=tr.get("eval_every", 0),
    )
    if tr["preset"] == "full":
        plan = training.full_plan(seed=seed)
        if tr.get("batch_size"):
            plan = training.TrainPlan(
                stages=plan.stages, batch_size=tr["batch_size"], seed=seed
            )
        return plan
    iterations = tuple(tr.get("iterations") or (2000, 2000, 2000, 4000))
    return training.desk_plan(iterations=iterations, **kwargs)


def _build_spec(cfg: dict, plan: training.TrainPlan) -> GeneratorSpec:
    widths = cfg["train"].get("widths")
    if widths is None:
        widths = training.DESK_WIDTHS if cfg["train"]["preset"] == "desk" else None
    if widths is None:
        return GeneratorSpec()
    return GeneratorSpec(widths=tuple(widths)[: len(plan.stages)])


def _target_label_matrix(schema: ConditionSchema, ranges: LabelRange,
                         targets: dict, count: int, rng) -> dict:
    """One (count, d) label matrix per target combination."""
    fields = schema.scalar_fields()
    sweeps = {}
    sweep_fields = [f for f in fields if f in targets and len(targets[f]) > 1]
    base = sample_generator_labels(ranges, schema, count, rng)
    if not sweep_fields:
        return {"range-sampled": base}
    field_pos = {}
    pos = schema.rock_type_count
    for f in fields:
        field_pos[f] = pos
        pos += 1
    sweep_field = sweep_fields[0]
    for value in targets[sweep_field]:
        mat = base.copy()
        for f in fields:
            if f in targets:
                fixed = targets[f]
                val = value if f == sweep_field else fixed[0]
                mat[:, field_pos[f]] = val
        sweeps[f"{sweep_field}={value}"] = mat
    return sweeps


def run_experiment(cfg: dict, until: str = "all") -> dict:
    """Execute prepare -> train -> generate -> evaluate into cfg['out'].

    `until` stops early after "prepare" or "train".  Any phase failure is
    recorded in status.json with partial artifacts preserved, then
    re-raised.  Returns a status dict with artifact paths.
    """
    cfg = config_mod.validate_config(cfg)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    config_mod.save_config(cfg, os.path.join(out, "config.yaml"))
    status = {"name": cfg["name"], "seed": cfg["seed"], "phases": {}}

    def _phase(name, fn):
        try:
            result = fn()
            status["phases"][name] = "ok"
            return result
        except Exception as exc:
            status["phases"][name] = f"failed: {exc}"
            status["traceback"] = traceback.format_exc()
            _write_status(out, status)
            raise

    ds, schema, label_report = _phase("prepare", lambda: prepare_data(cfg))
    volio.write_dataset(ds, os.path.join(out, "dataset"))
    status["dataset"] = {
        "count": len(ds),
        "edge": ds.edge,
        "label_report": {"total": label_report["total"], "excluded": label_report["excluded"]},
    }
    if until == "prepare":
        _write_status(out, status)
        return status

    plan = _build_plan(cfg)
    spec = _build_spec(cfg, plan)
    eval_fn = None
    if "swd" in cfg["evaluate"]["metrics"] and plan.eval_every > 0:
        ranges = (
            LabelRange.from_dataset(ds, schema)
            if schema.label_dim
            else LabelRange(ranges={})
        )
        eval_fn = swd_eval_fn(ds, schema, ranges, cfg["seed"])
    trainer, ckpt = _phase(
        "train",
        lambda: training.run_schedule(
            plan, ds, schema, out_dir=os.path.join(out, "train"),
            spec=spec, eval_fn=eval_fn,
        ),
    )
    status["checkpoint"] = ckpt
    if trainer.swd_history:
        status["swd_history"] = trainer.swd_history
    if until == "train":
        _write_status(out, status)
        return status

    result = _phase("evaluate", lambda: _evaluate(cfg, ds, schema, trainer, ckpt, out))
    status.update(result)
    _write_status(out, status)
    return status


def swd_eval_fn(ds: SubvolumeDataset, schema: ConditionSchema, ranges: LabelRange,
                seed: int, n_volumes: int = 32):
    """Training-time hook: SWD of a small generated cohort vs held real data.

    Generator labels are drawn uniformly from the training ranges, so the
    probe measures unconditional sample quality at the current stage.
    Returns NaN below 16^3 where the pyramid is undefined.
    """
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ds), size=min(n_volumes, len(ds)), replace=False)
    real = [np.asarray(ds.samples[i], dtype=np.uint8) for i in idx]
    from .data import downsample_chain

    real_levels = [downsample_chain(r, coarsest_edge=4) for r in real]

    def eval_fn(gen, phase, iteration):
        edge = 4 * 2 ** (phase.stage - 1)
        if edge < 16:
            return float("nan")
        g_rng = torch.Generator().manual_seed(seed + iteration)
        noise = torch.randn((len(real), 1, 4, 4, 4), generator=g_rng)
        lab_rng = np.random.default_rng(seed + iteration)
        labels = normalize_label_matrix(
            sample_generator_labels(ranges, schema, len(real), lab_rng),
            schema, ranges,
        ).astype(np.float32)
        with torch.no_grad():
            fake = gen(
                training.make_latent(noise, torch.from_numpy(labels)), phase
            ).numpy()[:, 0]
        fake_bin = [(f >= 0.0).astype(np.float64) for f in fake]
        real_lvl = [chain[edge].astype(np.float64) for chain in real_levels]
        report = evaluation.multiscale_swd(
            real_lvl, fake_bin, seed=seed, projections=64, repeats=1
        )
        return report.average

    return eval_fn


def _evaluate(cfg, ds, schema, trainer, ckpt, out) -> dict:
    ev = cfg["evaluate"]
    rng = np.random.default_rng(cfg["seed"] + 1)
    ranges = LabelRange.from_dataset(ds, schema) if schema.label_dim else LabelRange(ranges={})
    report_dir = os.path.join(out, "reports")
    os.makedirs(report_dir, exist_ok=True)
    results = {"reports": []}

    metric_map = {"phi": "phi", "lambda": "lam", "sa": "sa", "perm": "perm"}
    metrics = [metric_map[m] for m in ev["metrics"] if m != "swd"]
    lam_mode = "anisotropic" if schema.corr_length == "anisotropic" else "isotropic"

    for edge in ev["sizes"]:
        cohorts = {}
        idx = rng.choice(len(ds), size=min(ev["cohort"], len(ds)), replace=False)
        cohorts["real"] = [ds.volume(int(i)) for i in idx]
        sweeps = _target_label_matrix(schema, ranges, ev.get("targets", {}), ev["cohort"], rng)
        generated = {}
        for tag, mat in sweeps.items():
            vols, manifest = generate(
                ckpt, mat, edge=edge, count=ev["cohort"], seed=cfg["seed"] + 2
            )
            generated[f"sync-{edge}-{tag}"] = vols
        cohorts.update(generated)

        if metrics:
            report = evaluation.cohort_compare(cohorts, metrics=metrics, lam_mode=lam_mode)
            path = os.path.join(report_dir, f"cohort-{edge}.json")
            evaluation.save_report(report, path)
            evaluation.save_box_plots(report, os.path.join(report_dir, f"plots-{edge}"))
            results["reports"].append(path)
        if "swd" in ev["metrics"] and edge == ds.edge and edge >= 16:
            fake = next(iter(generated.values()))
            swd = evaluation.multiscale_swd(
                [v.data for v in cohorts["real"]],
                [v.data for v in fake],
                seed=cfg["seed"],
            )
            path = os.path.join(report_dir, f"swd-{edge}.json")
            evaluation.save_report(swd, path)
            results["reports"].append(path)
    return results


def _write_status(out: str, status: dict) -> None:
    with open(os.path.join(out, "status.json"), "w") as fh:
        json.dump(status, fh, indent=2, sort_keys=True, default=str)
