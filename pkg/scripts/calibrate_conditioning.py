"""Calibration run for the desk-scale conditioning experiments.

Trains a scaled desk plan on synthetic truncated-Gaussian data with
porosity (or correlation-length) labels, then sweeps evenly spaced targets
and reports the median metric of generated cohorts per target.  Used to
size the acceptance-suite training budget for the local hardware.
"""

import argparse
import json
import sys
import time

import numpy as np
import torch

from rockgen.conditioning import ConditionSchema, compute_labels
from rockgen.data import SubvolumeDataset
from rockgen.networks import GeneratorSpec, StagePhase
from rockgen.synthetic import synthetic_suite
from rockgen.training import (
    StageSettings,
    TrainPlan,
    lr_for_edge,
    make_latent,
    run_schedule,
)
from rockgen.voxel import VoxelVolume, binarize, fit_correlation_length, porosity, two_point_correlation


def spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    ca, cb = ra - ra.mean(), rb - rb.mean()
    return float((ca * cb).sum() / np.sqrt((ca**2).sum() * (cb**2).sum()))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mode", choices=["phi", "lam"], default="phi")
    ap.add_argument("--samples", type=int, default=512)
    ap.add_argument("--widths", default="32,32,16,8")
    ap.add_argument("--iterations", default="600,800,1200,800")
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--cohort", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--normalize", action="store_true")
    ap.add_argument("--out", default="/tmp/calib")
    args = ap.parse_args()

    widths = tuple(int(w) for w in args.widths.split(","))
    iterations = tuple(int(i) for i in args.iterations.split(","))
    n_stages = len(iterations)
    edge = 4 * 2 ** (n_stages - 1)

    t0 = time.time()
    if args.mode == "phi":
        vols = synthetic_suite(args.samples, edge, (0.15, 0.35), (3.0, 3.0), seed=args.seed)
        schema = ConditionSchema(porosity=True, normalize=args.normalize)
        targets = np.linspace(0.15, 0.35, 5)
    else:
        vols = synthetic_suite(args.samples, edge, (0.25, 0.25), (2.0, 6.0), seed=args.seed)
        schema = ConditionSchema(corr_length="isotropic", normalize=args.normalize)
        targets = np.linspace(2.0, 6.0, 5)

    ds = SubvolumeDataset(samples=[v.data for v in vols])
    ds, report = compute_labels(ds, schema)
    print(f"data: {len(ds)} samples at {edge}^3, excluded {len(report['excluded'])} "
          f"({time.time()-t0:.0f}s)", flush=True)
    if args.mode == "lam":
        lam = ds.labels["lam"]
        print(f"lam label range: {lam.min():.2f}..{lam.max():.2f}", flush=True)

    plan = TrainPlan(
        stages=tuple(
            StageSettings(stage=s + 1, edge=4 * 2**s, lr=lr_for_edge(4 * 2**s), iterations=it)
            for s, it in enumerate(iterations)
        ),
        batch_size=args.batch,
        seed=args.seed,
    )
    spec = GeneratorSpec(widths=widths)
    t1 = time.time()
    trainer, ckpt = run_schedule(plan, ds, schema, out_dir=args.out, spec=spec)
    train_minutes = (time.time() - t1) / 60
    print(f"trained {plan.total_iterations} iterations in {train_minutes:.1f} min", flush=True)

    phase = StagePhase(stage=n_stages, alpha=1.0)
    gen = trainer.generator
    gen.eval()
    medians = []
    for target in targets:
        rng = torch.Generator().manual_seed(args.seed + 1)
        values = []
        for lo in range(0, args.cohort, 25):
            n = min(25, args.cohort - lo)
            noise = torch.randn((n, 1, 4, 4, 4), generator=rng)
            from rockgen.conditioning import normalize_label_matrix

            net = normalize_label_matrix(
                np.full((n, 1), float(target)), schema, trainer.ranges
            ).astype(np.float32)
            labels = torch.from_numpy(net)
            with torch.no_grad():
                out = gen(make_latent(noise, labels), phase).numpy()[:, 0]
            for fld in out:
                vol = binarize(VoxelVolume(data=fld, is_binary=False, value_range=(-1, 1)))
                if args.mode == "phi":
                    values.append(porosity(vol))
                else:
                    try:
                        curve = two_point_correlation(vol, r_max=8, axis="iso")
                        values.append(fit_correlation_length(curve))
                    except Exception:
                        values.append(np.nan)
        med = float(np.nanmedian(values))
        medians.append(med)
        print(f"target {target:.3f} -> median {med:.3f} (err {med - target:+.3f})", flush=True)

    rho = spearman(targets, np.array(medians))
    worst = float(np.max(np.abs(np.array(medians) - targets)))
    print(json.dumps({
        "mode": args.mode, "widths": widths, "iterations": iterations,
        "batch": args.batch, "train_minutes": round(train_minutes, 1),
        "spearman": round(rho, 3), "worst_abs_err": round(worst, 4),
    }), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
