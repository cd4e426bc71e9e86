"""The complete supervision stack with hand-derived gradients.

Three terms drive training: L1 photometric reconstruction between the
reference view and each synthesized live view (temporal and stereo), the
same L1 applied in dense-descriptor space, and an edge-aware smoothness
penalty on inverse depth. The total is a weighted sum; defaults
(1, 0.1, 10) give the photometric term the lead with features as an
auxiliary signal.

Every loss is a mean over its valid pixels rather than a raw sum, which
keeps the weights meaningful across resolutions. The L1 subgradient at an
exact tie is 0. Gradients flow to the inverse-depth grid (through the
depth conversion and both warp fields) and to the six temporal twist
parameters; the stereo transform is known and receives none.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import camera, features as features_mod, warp
from .errors import DegenerateInputError, DivergenceError, EmptyOverlapError
from .grids import channel_mean_abs, gradient_x, gradient_y, with_channel_axis
from .se3 import Twist

INV_DEPTH_EPS = 1e-4


def inverse_depth_to_depth(d_inv: np.ndarray) -> np.ndarray:
    """Depth in meters from non-negative inverse depth: 1 / (d_inv + 1e-4).

    The offset keeps depth finite when the predictor's ReLU output hits
    exactly zero (depth saturates at 10 km).
    """
    return 1.0 / (np.asarray(d_inv, dtype=np.float64) + INV_DEPTH_EPS)


def validate_inverse_depth(d_inv: np.ndarray) -> np.ndarray:
    d_inv = np.asarray(d_inv, dtype=np.float64)
    if d_inv.ndim != 2:
        raise ValueError("inverse depth must be a single-channel (H, W) grid")
    if not np.all(np.isfinite(d_inv)):
        raise ValueError("inverse depth contains non-finite values")
    if np.any(d_inv < 0):
        raise ValueError("inverse depth must be non-negative")
    return d_inv


@dataclass(frozen=True)
class LossWeights:
    lambda_ir: float = 1.0
    lambda_fr: float = 0.1
    lambda_ds: float = 10.0

    def __post_init__(self):
        if min(self.lambda_ir, self.lambda_fr, self.lambda_ds) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_ir: float
    l_fr: float
    l_ds: float
    total: float
    valid_pixel_counts: Dict[str, int] = field(default_factory=dict)


@dataclass
class InstanceFeatures:
    """Pre-extracted descriptor maps for one training instance; extractors
    are frozen, so these stay valid across optimization steps."""

    ref: np.ndarray
    temporal: np.ndarray
    stereo: np.ndarray


def extract_instance_features(extractor, instance) -> InstanceFeatures:
    return InstanceFeatures(
        ref=features_mod.extract(extractor, instance.ref_image),
        temporal=features_mod.extract(extractor, instance.temporal_live),
        stereo=features_mod.extract(extractor, instance.stereo_live),
    )


def _l1_mean(reference, synthesized, mask) -> Tuple[float, np.ndarray, int]:
    ref = with_channel_axis(np.asarray(reference, dtype=np.float64))
    syn = with_channel_axis(np.asarray(synthesized, dtype=np.float64))
    if ref.shape != syn.shape or ref.shape[:2] != mask.shape:
        raise ValueError("reference/synthesized/mask dimensions disagree")
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise EmptyOverlapError("no valid pixels to compare")
    n = count * ref.shape[2]
    diff = syn - ref
    loss = float(np.sum(np.abs(diff[mask])) / n)
    grad = np.sign(diff) / n
    grad[~mask] = 0.0
    return loss, grad, count


def image_reconstruction_loss(reference, synthesized, mask) -> Tuple[float, np.ndarray]:
    """Mean absolute photometric error over valid pixels and channels,
    with its gradient w.r.t. the synthesized grid (sign(synth - ref)/N)."""
    loss, grad, _ = _l1_mean(reference, synthesized, mask)
    if np.asarray(reference).ndim == 2:
        grad = grad[:, :, 0]
    return loss, grad


def feature_reconstruction_loss(ref_feat, synth_feat, mask) -> Tuple[float, np.ndarray]:
    """Identical contract to image_reconstruction_loss, applied to
    descriptor channels."""
    return image_reconstruction_loss(ref_feat, synth_feat, mask)


def smoothness_loss(d_inv: np.ndarray, image: np.ndarray) -> Tuple[float, np.ndarray]:
    """Edge-aware first-order penalty on inverse depth.

    Mean over all forward-difference stencil positions (horizontal and
    vertical pooled) of |d(d_inv)| * exp(-|dI|), where |dI| is the mean
    absolute image gradient across channels. Returns the loss and its
    gradient w.r.t. every inverse-depth entry.
    """
    d_inv = np.asarray(d_inv, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if d_inv.shape != image.shape[:2]:
        raise ValueError("inverse depth and image dimensions disagree")
    h, w = d_inv.shape
    if h < 2 and w < 2:
        raise DegenerateInputError("smoothness needs at least one 2-pixel stencil")
    total = 0.0
    n = 0
    grad = np.zeros_like(d_inv)
    if w >= 2:
        dx = d_inv[:, 1:] - d_inv[:, :-1]
        wx = np.exp(-channel_mean_abs(gradient_x(image)))
        total += float(np.sum(np.abs(dx) * wx))
        n += dx.size
        sx = np.sign(dx) * wx
        grad[:, 1:] += sx
        grad[:, :-1] -= sx
    if h >= 2:
        dy = d_inv[1:, :] - d_inv[:-1, :]
        wy = np.exp(-channel_mean_abs(gradient_y(image)))
        total += float(np.sum(np.abs(dy) * wy))
        n += dy.size
        sy = np.sign(dy) * wy
        grad[1:, :] += sy
        grad[:-1, :] -= sy
    return total / n, grad / n


def _reconstruction_term(ref_grid, live_grid, fld, want_twist, want_grads):
    if not want_grads:
        synth, mask = warp.bilinear_sample(live_grid, fld)
        loss, _, count = _l1_mean(ref_grid, synth, mask)
        return loss, None, None, count
    synth, gx, gy, mask = warp._sample_corners_fused(live_grid, fld)
    if np.asarray(ref_grid).ndim == 2:
        synth = synth[:, :, 0]
    loss, dsyn, count = _l1_mean(ref_grid, synth, mask)
    dcx = np.einsum("hwc,hwc->hw", dsyn, gx)
    dcy = np.einsum("hwc,hwc->hw", dsyn, gy)
    d_depth = dcx * fld.d_coords_d_depth[:, :, 0] + dcy * fld.d_coords_d_depth[:, :, 1]
    d_twist = None
    if want_twist:
        d_twist = np.einsum("hw,hwj->j", dcx, fld.d_coords_d_twist[:, :, 0, :]) + np.einsum(
            "hw,hwj->j", dcy, fld.d_coords_d_twist[:, :, 1, :]
        )
    return loss, d_depth, d_twist, count


def total_loss(
    instance,
    d_inv: np.ndarray,
    temporal_twist: Twist,
    extractor,
    weights: LossWeights,
    precomputed: Optional[InstanceFeatures] = None,
    with_gradients: bool = True,
    monocular: bool = False,
):
    """Evaluate the full weighted loss for one training instance.

    Synthesizes the temporal live view through the given twist and the
    stereo live view through the instance's known stereo transform, in
    image space and (if weighted) descriptor space, plus smoothness on the
    inverse depth itself. Terms with zero weight are skipped and reported
    as 0. `monocular=True` drops the stereo reconstruction terms entirely,
    which reintroduces the depth/translation scale ambiguity. A
    reconstruction term whose overlap is empty raises EmptyOverlapError; a
    non-finite total raises DivergenceError.

    Returns (LossBreakdown, d(total)/d(d_inv), d(total)/d(twist)); the
    gradient slots are None when with_gradients is False.
    """
    d_inv = validate_inverse_depth(d_inv)
    depth = inverse_depth_to_depth(d_inv)
    k = instance.intrinsics

    if with_gradients:
        t_field = camera.warp_field_jacobians(depth, temporal_twist, k)
        s_field = None
        if not monocular:
            s_field = camera.warp_field_with_depth_jacobian(depth, instance.stereo_transform, k)
    else:
        from .se3 import twist_to_transform

        t_field = camera.epipolar_warp_field(depth, twist_to_transform(temporal_twist), k)
        s_field = None
        if not monocular:
            s_field = camera.epipolar_warp_field(depth, instance.stereo_transform, k)

    counts: Dict[str, int] = {}
    d_loss_d_depth = np.zeros_like(depth) if with_gradients else None
    grad_twist = np.zeros(6) if with_gradients else None

    lt, gdt, gtt, ct = _reconstruction_term(
        instance.ref_image, instance.temporal_live, t_field, True, with_gradients
    )
    l_ir = lt
    counts["ir_temporal"] = ct
    counts["ir_stereo"] = 0
    if with_gradients:
        d_loss_d_depth += weights.lambda_ir * gdt
        grad_twist += weights.lambda_ir * gtt
    if not monocular:
        ls, gds, _, cs = _reconstruction_term(
            instance.ref_image, instance.stereo_live, s_field, False, with_gradients
        )
        l_ir += ls
        counts["ir_stereo"] = cs
        if with_gradients:
            d_loss_d_depth += weights.lambda_ir * gds

    l_fr = 0.0
    counts["fr_temporal"] = counts["fr_stereo"] = 0
    if weights.lambda_fr > 0:
        feats = precomputed or extract_instance_features(extractor, instance)
        lft, gft, gftt, cft = _reconstruction_term(
            feats.ref, feats.temporal, t_field, True, with_gradients
        )
        l_fr = lft
        counts["fr_temporal"] = cft
        if with_gradients:
            d_loss_d_depth += weights.lambda_fr * gft
            grad_twist += weights.lambda_fr * gftt
        if not monocular:
            lfs, gfs, _, cfs = _reconstruction_term(
                feats.ref, feats.stereo, s_field, False, with_gradients
            )
            l_fr += lfs
            counts["fr_stereo"] = cfs
            if with_gradients:
                d_loss_d_depth += weights.lambda_fr * gfs

    l_ds = 0.0
    grad_ds = None
    if weights.lambda_ds > 0:
        l_ds, grad_ds = smoothness_loss(d_inv, instance.ref_image)
        counts["ds_stencils"] = (
            d_inv.shape[0] * (d_inv.shape[1] - 1) + (d_inv.shape[0] - 1) * d_inv.shape[1]
        )

    total = weights.lambda_ir * l_ir + weights.lambda_fr * l_fr + weights.lambda_ds * l_ds
    if not np.isfinite(total):
        raise DivergenceError("loss is non-finite (l_ir=%r l_fr=%r l_ds=%r)" % (l_ir, l_fr, l_ds))

    grad_d_inv = None
    if with_gradients:
        # chain through D = 1/(d_inv + eps): dD/d(d_inv) = -D^2
        grad_d_inv = d_loss_d_depth * (-depth * depth)
        if grad_ds is not None:
            grad_d_inv += weights.lambda_ds * grad_ds

    breakdown = LossBreakdown(l_ir=l_ir, l_fr=l_fr, l_ds=l_ds, total=total,
                              valid_pixel_counts=counts)
    return breakdown, grad_d_inv, grad_twist
