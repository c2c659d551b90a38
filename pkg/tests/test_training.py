import numpy as np
import pytest
import torch

from rockgen.conditioning import ConditionSchema, LabelRange
from rockgen.errors import TrainingDivergedError
from rockgen.networks import Discriminator, Generator, GeneratorSpec, StagePhase
from rockgen.synthetic import synthetic_suite
from rockgen.training import (
    ProgressiveTrainer,
    StageSettings,
    TrainPlan,
    append_label_channels,
    dataset_levels,
    desk_plan,
    full_plan,
    gradient_penalty,
    loss_discriminator,
    loss_generator,
    lr_for_edge,
    make_latent,
)


def linear_critic(a):
    a = torch.as_tensor(a, dtype=torch.float64)

    def critic(vol, labels):
        return vol.flatten(1).to(torch.float64) @ a

    return critic


def batch(n=4, edge=4, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn((n, 1, edge, edge, edge), generator=g, dtype=dtype)


class TestGradientPenalty:
    def test_unit_norm_linear_critic_zero(self):
        a = torch.zeros(64, dtype=torch.float64)
        a[0] = 1.0  # exactly unit norm
        gp = gradient_penalty(linear_critic(a), batch(seed=1), batch(seed=2), None)
        assert float(gp) == 0.0

    def test_norm_three_linear_critic(self):
        a = torch.zeros(64, dtype=torch.float64)
        a[:9] = 1.0  # norm exactly 3
        gp = gradient_penalty(linear_critic(a), batch(seed=3), batch(seed=4), None)
        assert float(gp) == pytest.approx(4.0, abs=1e-12)

    def test_nonnegative_for_random_critics(self):
        for seed in range(5):
            g = torch.Generator().manual_seed(seed)
            a = torch.randn(64, generator=g, dtype=torch.float64)
            gp = gradient_penalty(linear_critic(a), batch(seed=5), batch(seed=6), None)
            assert float(gp) >= 0.0

    def test_constant_critic_gives_one(self):
        def critic(vol, labels):
            return torch.zeros(vol.shape[0], dtype=vol.dtype)

        gp = gradient_penalty(critic, batch(seed=7), batch(seed=8), None)
        assert float(gp) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gradient_penalty(linear_critic(torch.ones(64)), batch(n=2), batch(n=3), None)


class TestLossDiscriminator:
    def test_zero_critic_gives_lambda(self):
        def critic(vol, labels):
            return vol.flatten(1).sum(dim=1) * 0.0

        def gen(z, labels):
            return z

        loss = loss_discriminator(
            critic, gen, batch(seed=1), torch.zeros((4, 0)), batch(seed=2),
            torch.zeros((4, 0)), lambda_gp=10.0,
        )
        assert float(loss) == pytest.approx(10.0, abs=1e-12)

    def test_matches_hand_computation(self):
        g = torch.Generator().manual_seed(11)
        a = torch.randn(64, generator=g, dtype=torch.float64)
        real = batch(seed=12)
        fake_src = batch(seed=13)
        critic = linear_critic(a)

        def gen(z, labels):
            return z * 2.0

        t = torch.full((4, 1, 1, 1, 1), 0.25, dtype=torch.float64)
        loss = loss_discriminator(
            critic, gen, real, torch.zeros((4, 0)), fake_src,
            torch.zeros((4, 0)), lambda_gp=10.0, t=t,
        )
        an = a.numpy()
        by_hand = (
            (2.0 * fake_src.numpy().reshape(4, -1) @ an).mean()
            - (real.numpy().reshape(4, -1) @ an).mean()
            + 10.0 * (np.linalg.norm(an) - 1.0) ** 2
        )
        assert float(loss) == pytest.approx(by_hand, rel=1e-6)

    def test_identical_batches_cancel(self):
        a = torch.zeros(64, dtype=torch.float64)
        a[0] = 1.0
        real = batch(seed=14)
        critic = linear_critic(a)

        def gen(z, labels):
            return real

        loss = loss_discriminator(
            critic, gen, real, torch.zeros((4, 0)), batch(seed=15),
            torch.zeros((4, 0)), lambda_gp=7.0,
        )
        # score terms cancel exactly; unit-norm critic has zero penalty
        assert float(loss) == 0.0

    def test_label_dim_mismatch(self):
        with pytest.raises(ValueError):
            loss_discriminator(
                linear_critic(torch.ones(64)),
                lambda z, labels: z,
                batch(), torch.zeros((4, 1)), batch(), torch.zeros((4, 2)),
            )


class TestLossGenerator:
    def test_zero_critic(self):
        def critic(vol, labels):
            return vol.flatten(1).sum(dim=1) * 0.0

        loss = loss_generator(critic, lambda z, labels: z, batch(seed=16), torch.zeros((4, 0)))
        assert float(loss) == 0.0

    def test_constant_critic(self):
        def critic(vol, labels):
            return torch.full((vol.shape[0],), 3.5, dtype=vol.dtype)

        loss = loss_generator(critic, lambda z, labels: z, batch(seed=17), torch.zeros((4, 0)))
        assert float(loss) == pytest.approx(-3.5, abs=1e-12)

    def test_linear_critic_direct_evaluation(self):
        g = torch.Generator().manual_seed(18)
        a = torch.randn(64, generator=g, dtype=torch.float64)
        z = batch(seed=19)
        loss = loss_generator(linear_critic(a), lambda zz, labels: zz, z, torch.zeros((4, 0)))
        expected = -(z.numpy().reshape(4, -1) @ a.numpy()).mean()
        assert float(loss) == pytest.approx(expected, rel=1e-12)


class TestFiniteDifferenceGradients:
    def test_discriminator_gradients_match_central_differences(self):
        spec = GeneratorSpec(widths=(4,))
        disc = Discriminator(spec, label_dim=1, stage=1,
                             rng=torch.Generator().manual_seed(20)).double()
        phase = StagePhase(stage=1)
        real = batch(n=3, seed=21)
        fake = batch(n=3, seed=22)
        labels = torch.rand((3, 1), generator=torch.Generator().manual_seed(23),
                            dtype=torch.float64)
        t = torch.rand((3, 1, 1, 1, 1), generator=torch.Generator().manual_seed(24),
                       dtype=torch.float64)

        def critic(vol, lab):
            return disc(append_label_channels(vol, lab), phase)

        def compute_loss():
            return loss_discriminator(
                critic, lambda z, lab: fake, real, labels,
                fake, labels, lambda_gp=10.0, t=t,
            )

        loss = compute_loss()
        loss.backward()
        eps = 1e-6
        for name, param in disc.named_parameters():
            analytic = param.grad.detach().numpy().copy()
            fd = np.zeros_like(analytic)
            flat_param = param.data.view(-1)
            flat_fd = fd.reshape(-1)
            for i in range(flat_param.numel()):
                orig = float(flat_param[i])
                flat_param[i] = orig + eps
                hi = float(compute_loss().detach())
                flat_param[i] = orig - eps
                lo = float(compute_loss().detach())
                flat_param[i] = orig
                flat_fd[i] = (hi - lo) / (2 * eps)
            denom = max(np.linalg.norm(analytic), 1e-12)
            rel = np.linalg.norm(fd - analytic) / denom
            assert rel <= 1e-3, f"{name}: relative error {rel}"


def tiny_setup(seed=0, n=12, edge=8, stages=(4, 4), batch_size=2,
               checkpoint_every=0, tmp_dir="/tmp/rockgen-test"):
    plan = TrainPlan(
        stages=tuple(
            StageSettings(stage=s + 1, edge=4 * 2**s, lr=lr_for_edge(4 * 2**s),
                          iterations=it)
            for s, it in enumerate(stages)
        ),
        batch_size=batch_size,
        seed=seed,
        checkpoint_every=checkpoint_every,
    )
    vols = synthetic_suite(n, edge, (0.25, 0.35), (2.0, 3.0), seed=seed)
    samples = [v.data for v in vols]
    levels = dataset_levels(samples, plan.stages)
    labels = np.array([[s.mean()] for s in samples], dtype=np.float32)
    schema = ConditionSchema(porosity=True)
    ranges = LabelRange(ranges={"phi": (0.25, 0.35)})
    spec = GeneratorSpec(widths=(4, 4)[: len(stages)])
    return plan, schema, ranges, levels, labels, spec


class TestTrainerMechanics:
    def test_step_updates_only_intended_network(self, tmp_path):
        plan, schema, ranges, levels, labels, spec = tiny_setup()
        tr = ProgressiveTrainer(plan, schema, ranges, levels, labels, spec, str(tmp_path))
        g_before = {k: v.clone() for k, v in tr.generator.state_dict().items()}
        d_before = {k: v.clone() for k, v in tr.discriminator.state_dict().items()}

        settings = plan.stages[0]
        tr.phase = StagePhase(stage=1, alpha=1.0)
        real, labels_real = tr._real_batch()
        tr.opt_d.zero_grad(set_to_none=True)
        ld = loss_discriminator(
            tr._critic, tr._generate, real, labels_real, tr._noise(), labels_real,
            lambda_gp=plan.lambda_gp, rng=tr.torch_rng,
        )
        ld.backward()
        tr.opt_d.step()
        for k, v in tr.generator.state_dict().items():
            assert torch.equal(v, g_before[k]), f"generator {k} changed by D step"
        assert any(
            not torch.equal(v, d_before[k])
            for k, v in tr.discriminator.state_dict().items()
        )

        d_after_dstep = {k: v.clone() for k, v in tr.discriminator.state_dict().items()}
        tr.opt_g.zero_grad(set_to_none=True)
        lg = loss_generator(tr._critic, tr._generate, tr._noise(), labels_real)
        lg.backward()
        tr.opt_g.step()
        for k, v in tr.discriminator.state_dict().items():
            assert torch.equal(v, d_after_dstep[k]), f"discriminator {k} changed by G step"
        assert any(
            not torch.equal(v, g_before[k]) for k, v in tr.generator.state_dict().items()
        )

    def test_alpha_ramp_endpoints(self, tmp_path):
        plan, schema, ranges, levels, labels, spec = tiny_setup(stages=(2, 10))
        tr = ProgressiveTrainer(plan, schema, ranges, levels, labels, spec, str(tmp_path))
        settings = plan.stages[1]
        assert tr._alpha(settings, 0) == 0.0 or tr.phase.stage == 1
        tr.train_stage()
        tr.advance()
        assert tr.phase.stage == 2 and tr.phase.alpha == 0.0
        assert tr._alpha(settings, 0) == 0.0
        assert tr._alpha(settings, 5) == 1.0  # fade over first half of 10
        assert tr._alpha(settings, 10) == 1.0

    def test_stage1_alpha_always_one(self, tmp_path):
        plan, schema, ranges, levels, labels, spec = tiny_setup(stages=(3,), edge=4)
        tr = ProgressiveTrainer(plan, schema, ranges, levels, labels, spec, str(tmp_path))
        assert tr._alpha(plan.stages[0], 0) == 1.0

    def test_checkpoint_resume_replays_losses_bitwise(self, tmp_path):
        plan, schema, ranges, levels, labels, spec = tiny_setup(
            stages=(10,), edge=4, checkpoint_every=5
        )
        tr = ProgressiveTrainer(plan, schema, ranges, levels, labels, spec,
                                str(tmp_path / "a"))
        records = tr.train_stage()
        mid = next(r for r in records if r.iteration == 5)
        full_log = list(tr.loss_log)

        tr2 = ProgressiveTrainer.restore(mid.path, levels, labels,
                                         out_dir=str(tmp_path / "b"))
        assert tr2.global_iteration == 5
        tr2.train_stage()
        assert tr2.loss_log == full_log[5:]

    def test_divergence_aborts_with_checkpoint(self, tmp_path):
        plan, schema, ranges, levels, labels, spec = tiny_setup(stages=(4,), edge=4)
        plan = TrainPlan(
            stages=plan.stages, batch_size=plan.batch_size, seed=plan.seed,
            lambda_gp=float("inf"),
        )
        tr = ProgressiveTrainer(plan, schema, ranges, levels, labels, spec, str(tmp_path))
        with pytest.raises(TrainingDivergedError) as err:
            tr.train_stage()
        assert err.value.checkpoint_path is not None

    def test_run_grows_through_stages(self, tmp_path):
        plan, schema, ranges, levels, labels, spec = tiny_setup(stages=(2, 2), edge=8)
        tr = ProgressiveTrainer(plan, schema, ranges, levels, labels, spec, str(tmp_path))
        path = tr.run()
        assert tr.phase.stage == 2
        assert path.endswith(".pt")
        out = tr.generator(
            make_latent(torch.randn(1, 1, 4, 4, 4), torch.zeros((1, 1))), tr.phase
        )
        assert out.shape[-1] == 8


class TestPlans:
    def test_lr_mapping(self):
        assert lr_for_edge(4) == lr_for_edge(8) == lr_for_edge(16) == 5e-3
        assert lr_for_edge(32) == 3.5e-3
        assert lr_for_edge(64) == 2.5e-3

    def test_full_plan_totals(self):
        plan = full_plan()
        assert plan.total_iterations == 2_880_000
        assert plan.batch_size == 32
        assert [st.lr for st in plan.stages] == [5e-3, 5e-3, 5e-3, 3.5e-3, 2.5e-3]
        assert plan.lambda_gp == 10.0

    def test_desk_plan_defaults(self):
        plan = desk_plan()
        assert plan.final_edge == 32
        assert [st.iterations for st in plan.stages] == [2000, 2000, 2000, 4000]
        assert [st.lr for st in plan.stages] == [5e-3, 5e-3, 5e-3, 3.5e-3]
        assert plan.batch_size == 16

    def test_contiguity_enforced(self):
        with pytest.raises(ValueError):
            TrainPlan(
                stages=(StageSettings(stage=2, edge=8, lr=1e-3, iterations=1),)
            )

    def test_stage_edge_enforced(self):
        with pytest.raises(ValueError):
            StageSettings(stage=2, edge=16, lr=1e-3, iterations=1)

    def test_plan_round_trip(self):
        plan = desk_plan(iterations=(5, 6, 7, 8), batch_size=3, seed=9)
        assert TrainPlan.from_dict(plan.to_dict()) == plan


class TestDatasetLevels:
    def test_level_shapes(self):
        plan = desk_plan(iterations=(1, 1, 1, 1))
        rng = np.random.default_rng(0)
        samples = [(rng.random((32, 32, 32)) < 0.4).astype(np.uint8) for _ in range(3)]
        levels = dataset_levels(samples, plan.stages)
        assert {s: a.shape for s, a in levels.items()} == {
            1: (3, 4, 4, 4), 2: (3, 8, 8, 8), 3: (3, 16, 16, 16), 4: (3, 32, 32, 32),
        }

    def test_edge_mismatch(self):
        plan = desk_plan(iterations=(1, 1, 1, 1))
        with pytest.raises(ValueError):
            dataset_levels([np.zeros((16, 16, 16), dtype=np.uint8)], plan.stages)
