"""Joint myocardial T1/M0 mapping and diffeomorphic motion correction."""

__version__ = "0.1.0"

from .containers import (
    FitConfig,
    ImageSeries,
    MaskSet,
    ParametricMaps,
    VelocityFieldSet,
    min_max_normalize,
    validate_series,
)
from .deformation import (
    DisplacementField,
    compose,
    integrate_velocity,
    jacobian_determinant,
    warp,
)
from .losses import (
    LossBreakdown,
    fit_loss,
    smoothness_loss,
    soft_dice_loss,
    total_loss,
    total_loss_and_gradients,
)
from .metrics import EvalReport, dice, evaluate, hausdorff
from .optim import JointSolution, fit_uncorrected, joint_fit
from .phantom import PhantomConfig, PhantomScene, default_timestamps, generate_phantom
from .relaxometry import (
    VoxelFit,
    fit_map,
    fit_voxel,
    ir_signal,
    ir_signal_jacobian,
    r_squared,
    synthesize_series,
)

__all__ = [
    "DisplacementField",
    "EvalReport",
    "FitConfig",
    "ImageSeries",
    "JointSolution",
    "LossBreakdown",
    "MaskSet",
    "ParametricMaps",
    "PhantomConfig",
    "PhantomScene",
    "VelocityFieldSet",
    "VoxelFit",
    "compose",
    "default_timestamps",
    "dice",
    "evaluate",
    "fit_loss",
    "fit_map",
    "fit_uncorrected",
    "fit_voxel",
    "generate_phantom",
    "hausdorff",
    "integrate_velocity",
    "ir_signal",
    "ir_signal_jacobian",
    "jacobian_determinant",
    "joint_fit",
    "min_max_normalize",
    "r_squared",
    "smoothness_loss",
    "soft_dice_loss",
    "synthesize_series",
    "total_loss",
    "total_loss_and_gradients",
    "validate_series",
    "warp",
    "__version__",
]
