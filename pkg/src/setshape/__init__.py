"""setshape: hierarchical set-latent autoencoding of 3D occupancy fields,
with cascaded latent diffusion for generation."""

from .autoencoder import (
    EncodeResult,
    HierarchicalAutoencoder,
    LatentHierarchy,
    LevelConfig,
    ModelConfig,
    flat_forward,
)
from .diffusion import (
    DenoiserConfig,
    NoiseScheduleEDM,
    StageDenoiser,
    karras_sigmas,
    sample_cascade,
)
from .geometry import (
    AugmentationParams,
    TriangleMesh,
    apply_augmentation,
    load_mesh,
    normalize_unit_sphere,
    save_obj,
)
from .metrics import MetricReport, chamfer, fscore, metric_report
from .occupancy import occupancy_label, occupancy_label_detailed
from .queries import (
    SampledShape,
    balanced_query_batch,
    sample_near_points,
    sample_shape,
    sample_volume_points,
)
from .reconstruct import latent_noise_replacement, marching_cubes, reconstruct_mesh
from .shards import read_shard, write_shard
from .training import TrainConfig, gradient_check, train_autoencoder, train_step

__version__ = "0.1.0"

__all__ = [
    "AugmentationParams",
    "DenoiserConfig",
    "EncodeResult",
    "HierarchicalAutoencoder",
    "LatentHierarchy",
    "LevelConfig",
    "MetricReport",
    "ModelConfig",
    "NoiseScheduleEDM",
    "SampledShape",
    "StageDenoiser",
    "TrainConfig",
    "TriangleMesh",
    "apply_augmentation",
    "balanced_query_batch",
    "chamfer",
    "flat_forward",
    "fscore",
    "gradient_check",
    "karras_sigmas",
    "latent_noise_replacement",
    "load_mesh",
    "marching_cubes",
    "metric_report",
    "normalize_unit_sphere",
    "occupancy_label",
    "occupancy_label_detailed",
    "read_shard",
    "reconstruct_mesh",
    "sample_cascade",
    "sample_near_points",
    "sample_shape",
    "sample_volume_points",
    "save_obj",
    "train_autoencoder",
    "train_step",
    "write_shard",
]
