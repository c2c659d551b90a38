"""Conditional WGAN-GP training with progressive growing.

Losses follow the Wasserstein critic with gradient penalty: the critic
maximizes E[D(real, c)] - E[D(fake, c)] subject to the unit-gradient-norm
penalty on straight-line interpolates between real and fake volumes; the
generator minimizes -E[D(G(z, c), c)].  Updates alternate 1:1 with Adam
(beta1 = 0, beta2 = 0.99).  Label pairing: critic updates reuse the real
batch's measured labels for the fakes, so the conditioning stays
well-defined on the interpolates; generator updates draw fresh labels
uniformly from the recorded training ranges.

The stage schedule trains each resolution for its iteration budget with
the per-resolution learning rate, ramping the fade-in weight linearly over
the first half of the stage.  All randomness flows from two resumable
generators (one torch, one numpy) captured in every checkpoint, so a
resumed run replays the remaining loss trajectory bit-for-bit on a single
device.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import torch

from .conditioning import (
    ConditionSchema,
    LabelRange,
    label_matrix,
    normalize_label_matrix,
    sample_generator_labels,
)
from .data import SubvolumeDataset, downsample_chain
from .errors import TrainingDivergedError
from .networks import Discriminator, Generator, GeneratorSpec, StagePhase, grow

CHECKPOINT_VERSION = 1

#: Desk-scale widths: half the full-scale defaults, stages 1-4.
DESK_WIDTHS = (64, 64, 32, 16)


def lr_for_edge(edge: int) -> float:
    """Per-resolution learning rate: 5e-3 up to 16^3, then 3.5e-3, 2.5e-3."""
    if edge <= 16:
        return 5e-3
    if edge == 32:
        return 3.5e-3
    if edge == 64:
        return 2.5e-3
    raise ValueError(f"no learning rate defined for edge {edge}")


@dataclass(frozen=True)
class StageSettings:
    stage: int
    edge: int
    lr: float
    iterations: int
    fade_fraction: float = 0.5

    def __post_init__(self):
        if self.edge != 4 * 2 ** (self.stage - 1):
            raise ValueError(
                f"stage {self.stage} trains at edge {4 * 2 ** (self.stage - 1)}, "
                f"got {self.edge}"
            )
        if not 0.0 <= self.fade_fraction <= 1.0:
            raise ValueError("fade_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class TrainPlan:
    """Progressive-training schedule and optimizer parameters."""

    stages: tuple
    batch_size: int = 32
    lambda_gp: float = 10.0
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    checkpoint_every: int = 0  # in-stage cadence; stage ends always checkpoint
    eval_every: int = 0  # SWD-hook cadence, 0 = off
    seed: int = 0

    def __post_init__(self):
        for i, st in enumerate(self.stages):
            if st.stage != i + 1:
                raise ValueError("plan stages must be contiguous from 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def final_edge(self) -> int:
        return self.stages[-1].edge

    @property
    def total_iterations(self) -> int:
        return sum(st.iterations for st in self.stages)

    def to_dict(self) -> dict:
        return {
            "stages": [
                {
                    "stage": st.stage,
                    "edge": st.edge,
                    "lr": st.lr,
                    "iterations": st.iterations,
                    "fade_fraction": st.fade_fraction,
                }
                for st in self.stages
            ],
            "batch_size": self.batch_size,
            "lambda_gp": self.lambda_gp,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "checkpoint_every": self.checkpoint_every,
            "eval_every": self.eval_every,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainPlan":
        stages = tuple(StageSettings(**s) for s in d["stages"])
        rest = {k: v for k, v in d.items() if k != "stages"}
        return cls(stages=stages, **rest)


def _stages_for(iterations_by_stage) -> tuple:
    out = []
    for s, iters in enumerate(iterations_by_stage, start=1):
        edge = 4 * 2 ** (s - 1)
        out.append(StageSettings(stage=s, edge=edge, lr=lr_for_edge(edge), iterations=iters))
    return tuple(out)


def full_plan(seed: int = 0) -> TrainPlan:
    """Full-scale schedule: 320k iterations up to 16^3, 640k above, with the
    final stage extended so the grand total is 2,880,000."""
    return TrainPlan(
        stages=_stages_for((320_000, 320_000, 320_000, 640_000, 1_280_000)),
        batch_size=32,
        seed=seed,
    )


def desk_plan(
    iterations=(2000, 2000, 2000, 4000),
    batch_size: int = 16,
    seed: int = 0,
    checkpoint_every: int = 0,
    eval_every: int = 0,
) -> TrainPlan:
    """Desk-scale schedule: stages 1-4 (final edge 32), sized for CI."""
    return TrainPlan(
        stages=_stages_for(iterations),
        batch_size=batch_size,
        seed=seed,
        checkpoint_every=checkpoint_every,
        eval_every=eval_every,
    )


# ---------------------------------------------------------------------------
# losses


def append_label_channels(vol: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Concatenate broadcast label channels onto a volume batch."""
    n, _, e = vol.shape[0], vol.shape[1], vol.shape[2]
    d = labels.shape[1]
    if d == 0:
        return vol
    grid = labels.view(n, d, 1, 1, 1).expand(n, d, e, e, e).to(vol.dtype)
    return torch.cat([vol, grid], dim=1)


def make_latent(noise: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """z* = noise (+) broadcast labels, channel-wise."""
    return append_label_channels(noise, labels)


def gradient_penalty(
    critic,
    real: torch.Tensor,
    fake: torch.Tensor,
    labels: torch.Tensor,
    t: torch.Tensor | None = None,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Mean squared deviation of the critic's input-gradient norm from 1.

    Interpolates x^ = t * real + (1 - t) * fake with t ~ U(0, 1) per sample
    (pass `t` explicitly for deterministic evaluation), differentiates the
    critic at (x^, labels), and returns mean((||grad||_2 - 1)^2).
    """
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    n = real.shape[0]
    if t is None:
        t = torch.rand((n, 1, 1, 1, 1), generator=rng, dtype=real.dtype)
    xhat = (t * real + (1.0 - t) * fake).detach().requires_grad_(True)
    scores = critic(xhat, labels)
    if scores.requires_grad:
        grads = torch.autograd.grad(
            scores.sum(), xhat, create_graph=True, allow_unused=True
        )[0]
    else:  # critic ignores its input entirely; gradient is identically zero
        grads = None
    if grads is None:
        grads = torch.zeros_like(xhat)
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def loss_discriminator(
    critic,
    generator,
    real: torch.Tensor,
    labels_real: torch.Tensor,
    z: torch.Tensor,
    labels_gen: torch.Tensor,
    lambda_gp: float = 10.0,
    t: torch.Tensor | None = None,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Critic loss: E[D(fake, c)] - E[D(real, c)] + lambda * penalty.

    `generator` maps (z, labels) to volumes; its output is detached so a
    critic step never touches generator parameters.  The penalty
    interpolates against the real batch's labels.
    """
    if labels_real.shape[1] != labels_gen.shape[1]:
        raise ValueError(
            f"label dims differ: real {labels_real.shape[1]} vs gen {labels_gen.shape[1]}"
        )
    fake = generator(z, labels_gen)
    if isinstance(fake, torch.Tensor):
        fake = fake.detach()
    loss = critic(fake, labels_gen).mean() - critic(real, labels_real).mean()
    return loss + lambda_gp * gradient_penalty(critic, real, fake, labels_real, t, rng)


def loss_generator(critic, generator, z: torch.Tensor, labels_gen: torch.Tensor) -> torch.Tensor:
    """Generator loss: -E[D(G(z, c), c)]."""
    return -critic(generator(z, labels_gen), labels_gen).mean()


# ---------------------------------------------------------------------------
# progressive schedule


@dataclass
class CheckpointRecord:
    """Metadata for one emitted checkpoint."""

    iteration: int
    stage: int
    alpha: float
    path: str
    loss_d: float
    loss_g: float
    loss_d_mean: float  # over the trailing window
    loss_g_mean: float
    swd_history: list = field(default_factory=list)


def dataset_levels(samples, stages) -> dict:
    """Per-stage (n, e, e, e) uint8 arrays by repeated factor-2 downsampling.

    The finest requested stage must match the sample edge.
    """
    arr = np.stack([np.asarray(s, dtype=np.uint8) for s in samples])
    top_edge = arr.shape[1]
    finest = max(st.stage for st in stages)
    if top_edge != 4 * 2 ** (finest - 1):
        raise ValueError(
            f"dataset edge {top_edge} != final stage edge {4 * 2 ** (finest - 1)}"
        )
    per_sample = [downsample_chain(v, coarsest_edge=4) for v in arr]
    return {
        st.stage: np.stack([chain[st.edge] for chain in per_sample])
        for st in stages
    }


class ProgressiveTrainer:
    """Owns all mutable training state for one conditional ProGAN run."""

    def __init__(
        self,
        plan: TrainPlan,
        schema: ConditionSchema,
        ranges: LabelRange,
        levels: dict,
        labels: np.ndarray,
        spec: GeneratorSpec,
        out_dir: str,
        eval_fn=None,
        voxel_size: float = 1.0,
    ):
        if len(spec.widths) < len(plan.stages):
            raise ValueError(
                f"spec has {len(spec.widths)} stages but plan needs {len(plan.stages)}"
            )
        self.plan = plan
        self.schema = schema
        self.ranges = ranges
        self.levels = levels
        self.labels = np.asarray(labels, dtype=np.float32)
        # network-side labels (normalized when the schema asks for it)
        self._net_labels = normalize_label_matrix(
            self.labels, schema, ranges
        ).astype(np.float32)
        self.spec = spec
        self.out_dir = out_dir
        self.eval_fn = eval_fn
        self.voxel_size = voxel_size
        os.makedirs(out_dir, exist_ok=True)

        self.torch_rng = torch.Generator().manual_seed(plan.seed)
        self.np_rng = np.random.default_rng(plan.seed)
        self.generator = Generator(spec, schema.label_dim, stage=1, rng=self.torch_rng)
        self.discriminator = Discriminator(spec, schema.label_dim, stage=1, rng=self.torch_rng)
        self.phase = StagePhase(stage=1, alpha=1.0)
        self.global_iteration = 0
        self.stage_iteration = 0
        self.swd_history: list = []
        self.loss_log: list = []  # (global_iteration, loss_d, loss_g) per step
        self._loss_d_window: deque = deque(maxlen=100)
        self._loss_g_window: deque = deque(maxlen=100)
        self._new_optimizers(self.plan.stages[0].lr)

    # -- state management ---------------------------------------------------

    def _new_optimizers(self, lr: float) -> None:
        betas = (self.plan.beta1, self.plan.beta2)
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(), lr=lr, betas=betas, eps=self.plan.adam_eps
        )
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=lr, betas=betas, eps=self.plan.adam_eps
        )

    def save(self, tag: str) -> str:
        path = os.path.join(self.out_dir, f"checkpoint-{tag}.pt")
        payload = {
            "version": CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "schema": self.schema.to_dict(),
            "ranges": self.ranges.to_dict(),
            "plan": self.plan.to_dict(),
            "phase": {"stage": self.phase.stage, "alpha": self.phase.alpha},
            "global_iteration": self.global_iteration,
            "stage_iteration": self.stage_iteration,
            "generator": self.generator.state_dict(),
            "discriminator": self.discriminator.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "torch_rng": self.torch_rng.get_state(),
            "numpy_rng": self.np_rng.bit_generator.state,
            "swd_history": list(self.swd_history),
            "data_range": (-1.0, 1.0),
            "voxel_size": self.voxel_size,
        }
        torch.save(payload, path)
        return path

    @classmethod
    def restore(cls, path: str, levels: dict, labels: np.ndarray,
                out_dir: str | None = None, eval_fn=None) -> "ProgressiveTrainer":
        payload = torch.load(path, weights_only=False)
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        plan = TrainPlan.from_dict(payload["plan"])
        schema = ConditionSchema.from_dict(payload["schema"])
        trainer = cls(
            plan=plan,
            schema=schema,
            ranges=LabelRange.from_dict(payload["ranges"]),
            levels=levels,
            labels=labels,
            spec=GeneratorSpec.from_dict(payload["spec"]),
            out_dir=out_dir or os.path.dirname(path) or ".",
            eval_fn=eval_fn,
            voxel_size=payload.get("voxel_size", 1.0),
        )
        stage = payload["phase"]["stage"]
        while trainer.generator.stage < stage:
            trainer.generator.grow()
            trainer.discriminator.grow()
        trainer.generator.load_state_dict(payload["generator"])
        trainer.discriminator.load_state_dict(payload["discriminator"])
        trainer.phase = StagePhase(stage=stage, alpha=payload["phase"]["alpha"])
        trainer._new_optimizers(plan.stages[stage - 1].lr)
        trainer.opt_g.load_state_dict(payload["opt_g"])
        trainer.opt_d.load_state_dict(payload["opt_d"])
        trainer.torch_rng.set_state(payload["torch_rng"])
        trainer.np_rng.bit_generator.state = payload["numpy_rng"]
        trainer.global_iteration = payload["global_iteration"]
        trainer.stage_iteration = payload["stage_iteration"]
        trainer.swd_history = list(payload["swd_history"])
        return trainer

    # -- single updates -----------------------------------------------------

    def _critic(self, vol: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return self.discriminator(append_label_channels(vol, labels), self.phase)

    def _generate(self, z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        return self.generator(make_latent(z, labels), self.phase)

    def _real_batch(self):
        arr = self.levels[self.phase.stage]
        idx = self.np_rng.integers(0, arr.shape[0], size=self.plan.batch_size)
        real = torch.from_numpy(arr[idx].astype(np.float32) * 2.0 - 1.0).unsqueeze(1)
        labels = torch.from_numpy(self._net_labels[idx])
        return real, labels

    def _noise(self) -> torch.Tensor:
        e = self.spec.noise_edge
        return torch.randn(
            (self.plan.batch_size, 1, e, e, e), generator=self.torch_rng
        )

    def _alpha(self, settings: StageSettings, i: int) -> float:
        if self.phase.stage == 1:
            return 1.0
        fade = int(settings.fade_fraction * settings.iterations)
        if fade <= 0 or i >= fade:
            return 1.0
        return i / fade

    def step(self, settings: StageSettings) -> tuple:
        """One critic update then one generator update."""
        self.phase = StagePhase(
            stage=self.phase.stage, alpha=self._alpha(settings, self.stage_iteration)
        )
        real, labels_real = self._real_batch()

        self.opt_d.zero_grad(set_to_none=True)
        ld = loss_discriminator(
            self._critic,
            self._generate,
            real,
            labels_real,
            self._noise(),
            labels_real,  # fakes for critic updates reuse the real labels
            lambda_gp=self.plan.lambda_gp,
            rng=self.torch_rng,
        )
        ld.backward()
        self.opt_d.step()

        labels_gen = torch.from_numpy(
            normalize_label_matrix(
                sample_generator_labels(
                    self.ranges, self.schema, self.plan.batch_size, self.np_rng
                ),
                self.schema,
                self.ranges,
            ).astype(np.float32)
        )
        self.opt_g.zero_grad(set_to_none=True)
        lg = loss_generator(self._critic, self._generate, self._noise(), labels_gen)
        lg.backward()
        self.opt_g.step()

        ld_val, lg_val = float(ld.detach()), float(lg.detach())
        if not (np.isfinite(ld_val) and np.isfinite(lg_val)):
            path = self.save(f"diverged-{self.global_iteration}")
            raise TrainingDivergedError(
                f"non-finite loss at iteration {self.global_iteration}: "
                f"d={ld_val} g={lg_val}",
                checkpoint_path=path,
            )
        self._loss_d_window.append(ld_val)
        self._loss_g_window.append(lg_val)
        self.stage_iteration += 1
        self.global_iteration += 1
        self.loss_log.append((self.global_iteration, ld_val, lg_val))
        return ld_val, lg_val

    # -- stage / schedule ---------------------------------------------------

    def train_stage(self) -> list:
        """Run the current stage to its iteration budget; emit checkpoints."""
        settings = self.plan.stages[self.phase.stage - 1]
        records = []
        while self.stage_iteration < settings.iterations:
            ld, lg = self.step(settings)
            i = self.stage_iteration
            if self.eval_fn is not None and self.plan.eval_every > 0:
                if i % self.plan.eval_every == 0 or i == settings.iterations:
                    value = self.eval_fn(self.generator, self.phase, self.global_iteration)
                    self.swd_history.append((self.global_iteration, float(value)))
            at_end = i == settings.iterations
            cadence = self.plan.checkpoint_every
            if at_end or (cadence > 0 and i % cadence == 0):
                tag = f"s{self.phase.stage}-i{self.global_iteration}"
                path = self.save(tag)
                records.append(
                    CheckpointRecord(
                        iteration=self.global_iteration,
                        stage=self.phase.stage,
                        alpha=self.phase.alpha,
                        path=path,
                        loss_d=ld,
                        loss_g=lg,
                        loss_d_mean=float(np.mean(self._loss_d_window)),
                        loss_g_mean=float(np.mean(self._loss_g_window)),
                        swd_history=list(self.swd_history),
                    )
                )
        return records

    def advance(self) -> None:
        """Grow both networks to the next stage and reset the fade-in."""
        self.phase = grow(self.generator, self.discriminator, self.phase, self.torch_rng)
        self.stage_iteration = 0
        self._new_optimizers(self.plan.stages[self.phase.stage - 1].lr)

    def run(self) -> str:
        """Execute every remaining stage; return the final checkpoint path."""
        records = []
        while True:
            records.extend(self.train_stage())
            if self.phase.stage == len(self.plan.stages):
                break
            self.advance()
        return records[-1].path if records else self.save("final")


def train_stage(trainer: ProgressiveTrainer) -> list:
    """Train the trainer's current stage to completion (checkpoint stream)."""
    return trainer.train_stage()


def run_schedule(
    plan: TrainPlan,
    dataset: SubvolumeDataset,
    schema: ConditionSchema,
    out_dir: str,
    spec: GeneratorSpec | None = None,
    eval_fn=None,
) -> tuple:
    """Train the full progressive schedule on a labeled dataset.

    Returns (trainer, final checkpoint path).  The dataset's sample edge
    must equal the plan's final-stage edge.
    """
    if spec is None:
        spec = GeneratorSpec(widths=DESK_WIDTHS[: len(plan.stages)])
    levels = dataset_levels(dataset.samples, plan.stages)
    labels = label_matrix(dataset, schema)
    ranges = LabelRange.from_dataset(dataset, schema)
    trainer = ProgressiveTrainer(
        plan=plan,
        schema=schema,
        ranges=ranges,
        levels=levels,
        labels=labels,
        spec=spec,
        out_dir=out_dir,
        eval_fn=eval_fn,
        voxel_size=dataset.voxel_size,
    )
    path = trainer.run()
    return trainer, path
