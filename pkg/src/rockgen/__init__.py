"""rockgen: conditional progressive-GAN reconstruction of 3D digital rocks.

Train a conditional, progressively-growing Wasserstein GAN on binary
pore/solid volumes and generate arbitrary-size samples steered by rock
type, porosity, and (an)isotropic correlation length, with geostatistical
(two-point correlation, specific surface area) and physical (lattice
Boltzmann permeability) evaluation built in.
"""

from .conditioning import (
    ConditionLabel,
    ConditionSchema,
    LabelRange,
    compute_labels,
    decode_label_grid,
    encode_label_grid,
    label_matrix,
    make_latent,
    sample_generator_labels,
    select_anisotropic,
)
from .data import (
    ResolutionPyramid,
    RockSource,
    SubvolumeDataset,
    augment_rotations,
    build_pyramid,
    extract_subvolumes,
    resample_volume,
    rev_curve,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    DegenerateNormalizationError,
    FitError,
    NonBinaryVolumeError,
    PercolationError,
    RockgenError,
    TrainingDivergedError,
)
from .evaluation import (
    CohortReport,
    DescriptorSet,
    SWDReport,
    cohort_compare,
    extract_slice_patches,
    laplacian_levels,
    multiscale_swd,
    sliced_wasserstein,
)
from .experiment import generate, run_experiment
from .networks import (
    Discriminator,
    Generator,
    GeneratorSpec,
    StagePhase,
    count_parameters,
    grow,
)
from .permeability import FlowResult, lbm_permeability, percolation_check
from .synthetic import gaussian_field, synthetic_suite, synthetic_volume
from .training import (
    ProgressiveTrainer,
    TrainPlan,
    desk_plan,
    full_plan,
    gradient_penalty,
    loss_discriminator,
    loss_generator,
    run_schedule,
)
from .voxel import (
    CorrelationCurve,
    MomentSummary,
    VoxelVolume,
    binarize,
    fit_correlation_length,
    moment_summary,
    porosity,
    specific_surface_area,
    two_point_correlation,
)
from .volio import read_dataset, read_volume, write_dataset, write_volume

__version__ = "0.1.0"
