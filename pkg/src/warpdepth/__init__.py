"""Self-supervised depth and visual odometry by differentiable view synthesis.

The package optimizes per-frame inverse depth and 6-DoF pose (or trains
tiny convolutional predictors for both) purely from photometric and
dense-feature warp consistency between stereo and temporal image pairs,
and ships the matching evaluation protocols for depth accuracy and
odometry drift.
"""

from .camera import Intrinsics, WarpField, backproject, epipolar_warp_field, project
from .features import FeatureExtractor, extract, make_extractor, matching_cost_profile
from .losses import (
    InstanceFeatures,
    LossBreakdown,
    LossWeights,
    extract_instance_features,
    feature_reconstruction_loss,
    image_reconstruction_loss,
    inverse_depth_to_depth,
    smoothness_loss,
    total_loss,
)
from .se3 import SE3Transform, Twist, compose, invert, transform_point, twist_to_transform
from .warp import bilinear_sample, bilinear_sample_gradient, synthesize_view

__version__ = "0.1.0"
