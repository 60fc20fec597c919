"""gmmalign: rigid point-cloud registration with latent Gaussian mixtures.

Submodules:
  geom3d     - clouds, rigid transforms, SO(3) sampling, text formats
  latent_gmm - isotropic mixtures, posterior, closed-form update, EM baselines
  mt_solver  - pose objectives and the reflection-safe weighted SVD alignment
  features   - rotation-invariant per-point network inputs
  corrnet    - correspondence network, hand-written gradients, Adam, training
  datagen    - procedural registration-pair datasets (clean/noisy/unseen/partial)
  evalbench  - RMSE/recall/CDF metrics, ICP baseline, refinement, runtime bench
  cli        - `gmmalign` command-line entry point
"""

__version__ = "0.1.0"

from .geom3d import (
    RigidTransform,
    apply_transform,
    compose,
    invert,
    random_rotation,
    rotation_angle,
)
from .latent_gmm import Gmm, em_fit, em_register, log_likelihood, m_theta, posterior_gamma
from .mt_solver import (
    DegenerateConfiguration,
    WeightedCorrespondences,
    mt_block,
    objective_double_sum,
    objective_single_sum,
    weighted_umeyama,
)
from .features import invariant_features
from .corrnet import CorrNetParams, TrainConfig, forward, register_pair, train
from .datagen import FAMILIES, ShapeSpec, build_dataset, make_pair, make_partial, sample_shape
from .evalbench import icp_point2point, recall, refine, rmse

__all__ = [
    "RigidTransform",
    "apply_transform",
    "compose",
    "invert",
    "random_rotation",
    "rotation_angle",
    "Gmm",
    "posterior_gamma",
    "m_theta",
    "log_likelihood",
    "em_fit",
    "em_register",
    "DegenerateConfiguration",
    "WeightedCorrespondences",
    "weighted_umeyama",
    "mt_block",
    "objective_double_sum",
    "objective_single_sum",
    "invariant_features",
    "CorrNetParams",
    "TrainConfig",
    "forward",
    "register_pair",
    "train",
    "FAMILIES",
    "ShapeSpec",
    "build_dataset",
    "make_pair",
    "make_partial",
    "sample_shape",
    "rmse",
    "recall",
    "icp_point2point",
    "refine",
]
