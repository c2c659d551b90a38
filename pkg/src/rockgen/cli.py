"""Command-line entry points.

Subcommands: prepare-data, rev, train, generate, evaluate, permeability,
fit, run-experiment.  Exit codes distinguish failure classes: 2 config
errors, 3 data errors, 4 training aborts, 5 evaluation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as config_mod
from . import evaluation, experiment, permeability, training, volio, voxel
from .conditioning import ConditionLabel, ConditionSchema, compute_labels
from .data import augment_rotations, extract_subvolumes, resample_volume, rev_curve
from .errors import (
    ConfigError,
    DatasetFormatError,
    FitError,
    NonBinaryVolumeError,
    PercolationError,
    RockgenError,
    TrainingDivergedError,
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAIN = 4
EXIT_EVAL = 5


def _int_list(text: str) -> list:
    return [int(t) for t in text.split(",") if t]


def _float_list(text: str) -> list:
    return [float(t) for t in text.split(",") if t]


def cmd_prepare_data(args) -> int:
    volume = volio.read_volume(args.source)
    if args.resample_to:
        volume = resample_volume(volume, args.resample_to)
    ds = extract_subvolumes(volume, args.edge, args.stride, source=args.source)
    if args.rotations == 2:
        ds = augment_rotations(ds)
    elif args.rotations != 0:
        raise DatasetFormatError("--rotations must be 0 or 2")
    volio.write_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples of edge {ds.edge} to {args.out}")
    return 0


def cmd_rev(args) -> int:
    volume = volio.read_volume(args.volume)
    table = rev_curve(volume, _int_list(args.edges), args.crops, seed=args.seed)
    print("edge\tmean_phi\tstd_phi\tcv")
    for edge, phis in table.items():
        mean, std = phis.mean(), phis.std()
        cv = std / mean if mean > 0 else float("nan")
        print(f"{edge}\t{mean:.4f}\t{std:.4f}\t{cv:.4f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({str(k): v.tolist() for k, v in table.items()}, fh, indent=2)
    return 0


def cmd_train(args) -> int:
    cfg = config_mod.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["out"] = args.out
    status = experiment.run_experiment(cfg, until="train")
    print(f"final checkpoint: {status['checkpoint']}")
    return 0


def cmd_generate(args) -> int:
    lam = None
    if args.lam:
        values = _float_list(args.lam)
        lam = values[0] if len(values) == 1 else tuple(values)
    label = ConditionLabel(rock_type=args.rock_type, porosity=args.phi, lam=lam)
    volumes, manifest = experiment.generate(
        args.model, label, edge=args.edge, count=args.count, seed=args.seed
    )
    os.makedirs(args.out, exist_ok=True)
    for i, vol in enumerate(volumes):
        volio.write_volume(vol, os.path.join(args.out, f"sample-{i:04d}.raw"))
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {len(volumes)} volumes of edge {args.edge} to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    ds = volio.read_dataset(args.real)
    rng = np.random.default_rng(args.seed)
    metrics = args.metrics.split(",")
    os.makedirs(args.out, exist_ok=True)
    written = []
    metric_map = {"phi": "phi", "lambda": "lam", "sa": "sa", "perm": "perm"}
    for edge in _int_list(args.sizes):
        idx = rng.choice(len(ds), size=min(args.cohort, len(ds)), replace=False)
        cohorts = {"real": [ds.volume(int(i)) for i in idx]}
        gen, meta = experiment.load_generator(args.model)
        schema = meta["schema"]
        from .conditioning import sample_generator_labels

        labels = sample_generator_labels(meta["ranges"], schema, args.cohort, rng)
        vols, _ = experiment.generate(
            args.model, labels, edge=edge, count=args.cohort, seed=args.seed
        )
        cohorts[f"sync-{edge}"] = vols
        plain = [metric_map[m] for m in metrics if m != "swd"]
        if plain:
            report = evaluation.cohort_compare(cohorts, metrics=plain)
            path = os.path.join(args.out, f"cohort-{edge}.json")
            evaluation.save_report(report, path)
            evaluation.save_box_plots(report, os.path.join(args.out, f"plots-{edge}"))
            written.append(path)
        if "swd" in metrics and edge >= 16 and edge == ds.edge:
            swd = evaluation.multiscale_swd(
                [v.data for v in cohorts["real"]],
                [v.data for v in vols],
                seed=args.seed,
            )
            path = os.path.join(args.out, f"swd-{edge}.json")
            evaluation.save_report(swd, path)
            written.append(path)
    print("\n".join(written))
    return 0


def cmd_permeability(args) -> int:
    volume = volio.read_volume(args.volume)
    opts = dict(tau=args.tau, force=args.force, max_steps=args.max_steps, tol=args.tol)
    if args.axis == "all":
        result = permeability.permeability_tensor(volume, **opts)
        payload = {a: r.to_dict() for a, r in result["axes"].items()}
        payload["mean_k_lattice"] = result["mean_k_lattice"]
        payload["mean_k_darcy"] = result["mean_k_darcy"]
    else:
        payload = permeability.lbm_permeability(volume, axis=args.axis, **opts).to_dict()
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_fit(args) -> int:
    volume = volio.read_volume(args.volume)
    curve = voxel.two_point_correlation(volume, r_max=args.r_max, axis=args.axis)
    lam = voxel.fit_correlation_length(curve)
    payload = {
        "axis": args.axis,
        "phi": curve.phi,
        "lambda_voxels": lam,
        "lags": curve.lags.tolist(),
        "values": curve.values.tolist(),
    }
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    print(f"phi = {curve.phi:.4f}  lambda = {lam:.4f} voxels")
    return 0


def cmd_run_experiment(args) -> int:
    if args.template:
        cfg = config_mod.template(args.template)
    else:
        if not args.config:
            raise ConfigError("run-experiment needs --config or --template")
        cfg = config_mod.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["out"] = args.out
    status = experiment.run_experiment(cfg, until=args.until)
    print(json.dumps({k: v for k, v in status.items() if k != "traceback"}, indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rockgen",
        description="Conditional progressive-GAN digital rock toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="extract training subvolumes from a raw volume")
    p.add_argument("--source", required=True, help="raw volume path (with .meta sidecar)")
    p.add_argument("--edge", type=int, default=64)
    p.add_argument("--stride", type=int, default=12)
    p.add_argument("--rotations", type=int, default=2, help="0 or 2 (adds 90/180 deg copies)")
    p.add_argument("--resample-to", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_prepare_data, error_code=EXIT_DATA)

    p = sub.add_parser("rev", help="porosity spread of random crops per edge length")
    p.add_argument("--volume", required=True)
    p.add_argument("--edges", default="16,32,64,96")
    p.add_argument("--crops", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_rev, error_code=EXIT_DATA)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train, error_code=EXIT_TRAIN)

    p = sub.add_parser("generate", help="sample volumes from a trained model")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--edge", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rock-type", type=int, default=None)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--lam", default=None, help="scalar or lx,ly,lz")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate, error_code=EXIT_EVAL)

    p = sub.add_parser("evaluate", help="compare real and generated cohorts")
    p.add_argument("--real", required=True, help="dataset directory")
    p.add_argument("--model", required=True)
    p.add_argument("--sizes", default="64")
    p.add_argument("--metrics", default="swd,phi,lambda,sa")
    p.add_argument("--cohort", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate, error_code=EXIT_EVAL)

    p = sub.add_parser("permeability", help="lattice Boltzmann permeability of a volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--axis", default="x", choices=["x", "y", "z", "all"])
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--force", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-steps", type=int, default=50_000)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_permeability, error_code=EXIT_EVAL)

    p = sub.add_parser("fit", help="fit the correlation length of a volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--axis", default="iso", choices=["x", "y", "z", "iso"])
    p.add_argument("--r-max", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_fit, error_code=EXIT_EVAL)

    p = sub.add_parser("run-experiment", help="prepare, train, and evaluate end to end")
    p.add_argument("--config", default=None)
    p.add_argument("--template", default=None, choices=sorted(config_mod.TEMPLATES))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--until", default="all", choices=["prepare", "train", "all"])
    p.set_defaults(fn=cmd_run_experiment, error_code=EXIT_EVAL)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, NonBinaryVolumeError, PercolationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (FitError, RockgenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return args.error_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return args.error_code


if __name__ == "__main__":
    sys.exit(main())
