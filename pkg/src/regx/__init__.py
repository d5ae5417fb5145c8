"""regx - learning-free 3D deformable image registration.

Status: Alpha - APIs may change.

Highlights:
- MIND-SSC or inverse class-weighted one-hot features
- Dense SSD cost volume over up to 5000 discrete displacements
- Coupled convex regularisation with optional inverse consistency
- Adam instance optimisation with diffusion regularisation
- Dice, HD95, TRE, SDlogJ and cohort statistics

Quick start:
    from regx import load_volume, preset, register, save_volume

    fixed = load_volume("fixed.nii.gz")
    moving = load_volume("moving.nii.gz")
    result = register(fixed, moving, preset("task2"))
    save_volume(result.field, "field.nii.gz")
"""

# Version from package metadata (single source of truth: pyproject.toml)
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("regx")
except PackageNotFoundError:
    __version__ = "0.0.0+unknown"

from regx.config import (
    ConvexConfig,
    FeatureMode,
    InstanceOptConfig,
    MindConfig,
    RegistrationConfig,
)
from regx.convex import consistency_residual, coupled_convex, symmetrise
from regx.correlation import (
    CostVolume,
    SearchSpace,
    argmin_field,
    build_cost_volume,
    normalise_costs,
)
from regx.exceptions import (
    BudgetExceededError,
    ConfigError,
    EvaluationError,
    NonFiniteError,
    RegxError,
    ShapeMismatchError,
    VolumeFormatError,
    VolumeIOError,
)
from regx.features import extract_features, mind_ssc, seg_onehot_features
from regx.instance import (
    AdamState,
    InstanceOptResult,
    adam_optimise,
    loss_and_gradient,
    smooth_and_upsample,
)
from regx.io import (
    load_displacement,
    load_features,
    load_landmarks,
    load_volume,
    save_landmarks,
    save_volume,
)
from regx.metrics import MetricReport, cohort_stats, dice, hd95, tre
from regx.parallel import worker_scope
from regx.pipeline import RegistrationResult, evaluate, register
from regx.presets import load_config, preset
from regx.sampling import box_filter, trilinear_sample
from regx.transform import (
    Interpolation,
    folding_fraction,
    jacobian_determinant,
    sdlogj,
    warp,
)
from regx.volume import (
    DisplacementField,
    FeatureVolume,
    LabelVolume,
    LandmarkSet,
    Volume3D,
)

__all__ = [
    # Data model
    "Volume3D",
    "LabelVolume",
    "FeatureVolume",
    "DisplacementField",
    "LandmarkSet",
    # I/O
    "load_volume",
    "save_volume",
    "load_features",
    "load_displacement",
    "load_landmarks",
    "save_landmarks",
    # Primitives
    "box_filter",
    "trilinear_sample",
    # Features
    "mind_ssc",
    "seg_onehot_features",
    "extract_features",
    # Correlation
    "SearchSpace",
    "CostVolume",
    "build_cost_volume",
    "argmin_field",
    "normalise_costs",
    # Convex
    "coupled_convex",
    "symmetrise",
    "consistency_residual",
    # Instance optimisation
    "AdamState",
    "InstanceOptResult",
    "smooth_and_upsample",
    "loss_and_gradient",
    "adam_optimise",
    # Transform and metrics
    "Interpolation",
    "warp",
    "jacobian_determinant",
    "sdlogj",
    "folding_fraction",
    "dice",
    "hd95",
    "tre",
    "cohort_stats",
    "MetricReport",
    # Configuration
    "FeatureMode",
    "MindConfig",
    "ConvexConfig",
    "InstanceOptConfig",
    "RegistrationConfig",
    "preset",
    "load_config",
    # Pipeline
    "register",
    "evaluate",
    "RegistrationResult",
    "worker_scope",
    # Exceptions
    "RegxError",
    "VolumeFormatError",
    "VolumeIOError",
    "ShapeMismatchError",
    "BudgetExceededError",
    "ConfigError",
    "NonFiniteError",
    "EvaluationError",
    # Metadata
    "__version__",
]
