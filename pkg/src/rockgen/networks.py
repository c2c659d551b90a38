"""Progressively growing 3D generator and critic networks.

The generator starts from an image-like latent z* (noise plus broadcast
label channels) at edge 4 and doubles the edge per stage through
transposed convolutions; a 1x1x1 convolution in block 1 keeps the whole
network fully convolutional, so a stage-5 model maps noise of edge e to
volumes of edge e * 16 for any e >= 4.  The critic mirrors the generator
and emits one unbounded score per volume (no output nonlinearity).

New stages fade in smoothly: the freshly added block's output is blended
in data space with the nearest-neighbor-upsampled previous-stage output,
weighted alpha vs 1 - alpha.

Layers use equalized learning rate (unit-normal init, He scaling applied
at call time) and, in the generator only, pixel-wise feature normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

DEFAULT_WIDTHS = (128, 128, 64, 32, 16)
LEAKY_SLOPE = 0.2
MAX_STAGES = 5


@dataclass(frozen=True)
class GeneratorSpec:
    """Structural hyperparameters shared by generator and critic."""

    widths: tuple = DEFAULT_WIDTHS
    leaky_slope: float = LEAKY_SLOPE
    noise_edge: int = 4
    output_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if len(self.widths) == 0 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if len(self.widths) > MAX_STAGES:
            raise ValueError(f"at most {MAX_STAGES} stages, got {len(self.widths)}")
        if self.noise_edge < 4:
            raise ValueError(f"noise edge must be >= 4, got {self.noise_edge}")

    @property
    def stage_count(self) -> int:
        return len(self.widths)

    def output_edge(self, stage: int, noise_edge: int | None = None) -> int:
        e = self.noise_edge if noise_edge is None else noise_edge
        return e * 2 ** (stage - 1)

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "leaky_slope": self.leaky_slope,
            "noise_edge": self.noise_edge,
            "output_range": list(self.output_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            widths=tuple(d["widths"]),
            leaky_slope=d["leaky_slope"],
            noise_edge=d["noise_edge"],
            output_range=tuple(d["output_range"]),
        )


@dataclass(frozen=True)
class StagePhase:
    """Progressive-training position: current stage and fade-in weight."""

    stage: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.stage < 1 or self.stage > MAX_STAGES:
            raise ValueError(f"stage must be in 1..{MAX_STAGES}, got {self.stage}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * torch.rsqrt(torch.mean(x * x, dim=1, keepdim=True) + 1e-8)


def _init_weight(shape, rng: torch.Generator | None) -> torch.Tensor:
    if rng is None:
        return torch.randn(shape)
    return torch.randn(shape, generator=rng)


class EqConv3d(nn.Module):
    """Conv3d with unit-normal weights scaled by gain/sqrt(fan_in) at call time."""

    def __init__(self, cin, cout, kernel, stride=1, padding=0, gain=math.sqrt(2.0),
                 rng=None):
        super().__init__()
        self.weight = nn.Parameter(_init_weight((cout, cin, kernel, kernel, kernel), rng))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.scale = gain / math.sqrt(cin * kernel**3)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv3d(
            x, self.weight * self.scale, self.bias,
            stride=self.stride, padding=self.padding,
        )


class EqConvTranspose3d(nn.Module):
    """Transposed conv with equalized scaling; k=3, s=2 doubles any edge."""

    def __init__(self, cin, cout, kernel=3, stride=2, padding=1, output_padding=1,
                 gain=math.sqrt(2.0), rng=None):
        super().__init__()
        self.weight = nn.Parameter(_init_weight((cin, cout, kernel, kernel, kernel), rng))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.scale = gain / math.sqrt(cin * kernel**3)
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def forward(self, x):
        return F.conv_transpose3d(
            x, self.weight * self.scale, self.bias,
            stride=self.stride, padding=self.padding,
            output_padding=self.output_padding,
        )


class EqLinear(nn.Module):
    def __init__(self, cin, cout, gain=1.0, rng=None):
        super().__init__()
        self.weight = nn.Parameter(_init_weight((cout, cin), rng))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.scale = gain / math.sqrt(cin)

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class _GBlock(nn.Module):
    """Generator block: (transposed) conv, leaky ReLU, pixel norm."""

    def __init__(self, cin, cout, slope, first: bool, rng=None):
        super().__init__()
        if first:
            self.conv = EqConv3d(cin, cout, kernel=1, rng=rng)
        else:
            self.conv = EqConvTranspose3d(cin, cout, rng=rng)
        self.act = nn.LeakyReLU(slope)
        self.norm = PixelNorm()

    def forward(self, x):
        return self.norm(self.act(self.conv(x)))


class Generator(nn.Module):
    """Fully convolutional conditional generator, grown stage by stage.

    Input: z* of shape (n, 1 + label_dim, e, e, e) with e >= 4.  Output:
    (n, 1, E, E, E) with E = e * 2^(stage-1), values in output_range via a
    final tanh.
    """

    def __init__(self, spec: GeneratorSpec, label_dim: int, stage: int = 1,
                 rng: torch.Generator | None = None):
        super().__init__()
        self.spec = spec
        self.label_dim = label_dim
        self.stage = 0
        self.blocks = nn.ModuleList()
        self.to_voxel = nn.ModuleList()
        for _ in range(stage):
            self.grow(rng)

    @property
    def in_channels(self) -> int:
        return 1 + self.label_dim

    def grow(self, rng: torch.Generator | None = None) -> None:
        """Append the next stage's block; existing parameters are untouched."""
        if self.stage >= self.spec.stage_count:
            raise ValueError(f"cannot grow past stage {self.spec.stage_count}")
        s = self.stage + 1
        cin = self.in_channels if s == 1 else self.spec.widths[s - 2]
        w = self.spec.widths[s - 1]
        self.blocks.append(
            _GBlock(cin, w, self.spec.leaky_slope, first=(s == 1), rng=rng)
        )
        self.to_voxel.append(EqConv3d(w, 1, kernel=1, gain=1.0, rng=rng))
        self.stage = s

    def forward(self, z: torch.Tensor, phase: StagePhase) -> torch.Tensor:
        if phase.stage != self.stage:
            raise ValueError(f"phase stage {phase.stage} != grown stage {self.stage}")
        if z.ndim != 5 or z.shape[1] != self.in_channels:
            raise ValueError(
                f"z* must be (n, {self.in_channels}, e, e, e), got {tuple(z.shape)}"
            )
        if z.shape[2] < 4 or z.shape[2] != z.shape[3] or z.shape[3] != z.shape[4]:
            raise ValueError(f"noise grid must be cubic with edge >= 4, got {tuple(z.shape[2:])}")
        h = self.blocks[0](z)
        prev = h
        for block in self.blocks[1 : self.stage]:
            prev = h
            h = block(h)
        out = torch.tanh(self.to_voxel[self.stage - 1](h))
        if self.stage > 1 and phase.alpha < 1.0:
            old = torch.tanh(self.to_voxel[self.stage - 2](prev))
            old = F.interpolate(old, scale_factor=2, mode="nearest")
            out = phase.alpha * out + (1.0 - phase.alpha) * old
        return out


class Discriminator(nn.Module):
    """Mirrored critic: strided convolutions down to 2^3, then a linear score.

    Input: volume with label channels appended, shape (n, 1 + label_dim,
    E, E, E) at the stage's training edge E = 4 * 2^(stage-1).  Output:
    (n,) unbounded scores (Wasserstein critic, no output nonlinearity).
    """

    def __init__(self, spec: GeneratorSpec, label_dim: int, stage: int = 1,
                 rng: torch.Generator | None = None):
        super().__init__()
        self.spec = spec
        self.label_dim = label_dim
        self.stage = 0
        self.blocks = nn.ModuleList()
        self.from_voxel = nn.ModuleList()
        self.act = nn.LeakyReLU(spec.leaky_slope)
        self.score = EqLinear(spec.widths[0] * 8, 1, rng=rng)
        for _ in range(stage):
            self.grow(rng)

    @property
    def in_channels(self) -> int:
        return 1 + self.label_dim

    def input_edge(self, stage: int | None = None) -> int:
        s = self.stage if stage is None else stage
        return 4 * 2 ** (s - 1)

    def grow(self, rng: torch.Generator | None = None) -> None:
        if self.stage >= self.spec.stage_count:
            raise ValueError(f"cannot grow past stage {self.spec.stage_count}")
        s = self.stage + 1
        w = self.spec.widths[s - 1]
        cout = self.spec.widths[0] if s == 1 else self.spec.widths[s - 2]
        self.from_voxel.append(EqConv3d(self.in_channels, w, kernel=1, rng=rng))
        self.blocks.append(EqConv3d(w, cout, kernel=3, stride=2, padding=1, rng=rng))
        self.stage = s

    def forward(self, x: torch.Tensor, phase: StagePhase) -> torch.Tensor:
        if phase.stage != self.stage:
            raise ValueError(f"phase stage {phase.stage} != grown stage {self.stage}")
        edge = self.input_edge()
        if x.ndim != 5 or x.shape[1] != self.in_channels or x.shape[2] != edge:
            raise ValueError(
                f"expected (n, {self.in_channels}, {edge}, {edge}, {edge}), "
                f"got {tuple(x.shape)}"
            )
        s = self.stage
        h = self.act(self.blocks[s - 1](self.act(self.from_voxel[s - 1](x))))
        if s > 1 and phase.alpha < 1.0:
            old = self.act(self.from_voxel[s - 2](F.avg_pool3d(x, 2)))
            h = phase.alpha * h + (1.0 - phase.alpha) * old
        for k in range(s - 2, -1, -1):
            h = self.act(self.blocks[k](h))
        return self.score(h.flatten(1)).squeeze(1)


def grow(generator: Generator, discriminator: Discriminator, phase: StagePhase,
         rng: torch.Generator | None = None) -> StagePhase:
    """Advance both networks one stage; alpha resets to 0 for the fade-in."""
    if phase.stage >= generator.spec.stage_count:
        raise ValueError(f"cannot grow past stage {generator.spec.stage_count}")
    generator.grow(rng)
    discriminator.grow(rng)
    return StagePhase(stage=phase.stage + 1, alpha=0.0)


def count_parameters(spec: GeneratorSpec, label_dim: int, stage: int,
                     network: str = "generator") -> int:
    """Closed-form parameter count for a grown network.

    Matches runtime enumeration exactly; useful for checkpoint sanity
    checks and memory budgeting.
    """
    if stage < 1 or stage > spec.stage_count:
        raise ValueError(f"stage must be in 1..{spec.stage_count}")
    cin = 1 + label_dim
    w = spec.widths
    total = 0
    if network == "generator":
        total += cin * w[0] + w[0]  # 1^3 conv in block 1
        for s in range(2, stage + 1):
            total += w[s - 2] * w[s - 1] * 27 + w[s - 1]
        for s in range(1, stage + 1):
            total += w[s - 1] + 1  # to-voxel 1^3 conv
    elif network == "discriminator":
        for s in range(1, stage + 1):
            total += cin * w[s - 1] + w[s - 1]  # from-voxel 1^3 conv
            cout = w[0] if s == 1 else w[s - 2]
            total += w[s - 1] * cout * 27 + cout
        total += w[0] * 8 + 1  # final linear on 2^3 features
    else:
        raise ValueError(f"network must be generator|discriminator, got {network!r}")
    return total
