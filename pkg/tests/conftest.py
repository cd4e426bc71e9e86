"""Shared helpers: smooth random grids and fully random training instances.

Random images are low-pass filtered so warp-loss gradient checks probe a
reasonably conditioned photometric landscape; the values themselves stay
arbitrary.
"""

import numpy as np
import pytest

from warpdepth.camera import Intrinsics
from warpdepth.se3 import Twist
from warpdepth.solver import TrainingInstance, stereo_transform_from_baseline


def smooth_image(rng, h, w, channels=3):
    img = rng.random((h + 8, w + 8, channels))
    for _ in range(3):
        img = 0.25 * (img[:-1, :-1] + img[1:, :-1] + img[:-1, 1:] + img[1:, 1:])
    img = img[:h, :w]
    img = (img - img.min()) / max(np.ptp(img), 1e-9)
    return 0.1 + 0.8 * img


def random_instance(seed, h=16, w=24, baseline=0.5):
    """Random smooth images, random positive inverse depth, small random
    twist; intrinsics sized so warps stay mostly in bounds."""
    rng = np.random.default_rng(seed)
    k = Intrinsics(fx=20.0, fy=20.0, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)
    inst = TrainingInstance(
        ref_image=smooth_image(rng, h, w),
        temporal_live=smooth_image(rng, h, w),
        stereo_live=smooth_image(rng, h, w),
        intrinsics=k,
        stereo_transform=stereo_transform_from_baseline(baseline),
    )
    d_inv = 0.08 + 0.06 * rng.random((h, w))
    twist = Twist(0.02 * rng.standard_normal(3), 0.1 * rng.standard_normal(3))
    return inst, d_inv, twist


def exact_shift_instance(seed=0, w=96, h=64, temporal_px=3, stereo_px=5):
    """Instance whose live views are bit-exact integer shifts of the
    reference: a fronto plane at the depth that makes the stereo disparity
    exactly `stereo_px`, with a pure-lateral temporal motion of exactly
    `temporal_px` pixels. All three images are crops of one rendered
    frame, so ground-truth warps hit integer coordinates and residuals
    are exactly zero; this realizes the idealized optimum where even the
    L1 sign gradient vanishes identically.
    """
    from warpdepth import synthetic
    from warpdepth.se3 import SE3Transform

    fx = 80.0
    baseline = 0.5
    depth = fx * baseline / stereo_px
    k = Intrinsics(fx, fx, (w - 1) / 2.0, (h - 1) / 2.0)
    scene = synthetic.SyntheticScene(
        kind="plane", width=w + stereo_px, height=h, intrinsics=k,
        baseline=baseline, camera_path=[Twist.zero()], seed=seed,
        plane_depth=depth,
    )
    img, _ = synthetic.render_frame(scene, SE3Transform.identity())
    inst = TrainingInstance(
        ref_image=img[:, :w],
        temporal_live=img[:, temporal_px : w + temporal_px],
        stereo_live=img[:, stereo_px : w + stereo_px],
        intrinsics=k,
        stereo_transform=stereo_transform_from_baseline(baseline),
        gt_depth=np.full((h, w), depth),
        gt_temporal_twist=Twist(np.zeros(3),
                                np.array([-temporal_px * depth / fx, 0.0, 0.0])),
    )
    return inst


def kink_skip_set(inst, d_inv, twist, feats):
    """Entries whose finite-difference probe would straddle a documented
    loss kink: a bilinear node (integer warp coordinate, excluding exactly
    snapped ones, which do not move), an L1 residual tie, or a smoothness
    stencil tie. The analytic gradient uses a fixed subgradient at these
    points, so two-sided differences are meaningless there.
    """
    from warpdepth import camera, losses, se3, warp

    depth = losses.inverse_depth_to_depth(d_inv)
    k = inst.intrinsics
    tfld = camera.epipolar_warp_field(depth, se3.twist_to_transform(twist), k)
    sfld = camera.epipolar_warp_field(depth, inst.stereo_transform, k)
    skip = np.zeros(d_inv.shape, dtype=bool)
    node_tol, tie_tol = 5e-5, 2e-5
    for fld, live, flive in ((tfld, inst.temporal_live, feats.temporal),
                             (sfld, inst.stereo_live, feats.stereo)):
        frac = np.abs(fld.coords - np.round(fld.coords))
        skip |= fld.mask & (((frac > 0) & (frac < node_tol)).any(axis=2))
        for ref, live_grid in ((inst.ref_image, live), (feats.ref, flive)):
            synth, m = warp.bilinear_sample(live_grid, fld)
            resid = np.abs(synth - ref)
            rmin = resid.min(axis=2) if resid.ndim == 3 else resid
            skip |= m & (rmin < tie_tol)
    tie = np.zeros_like(skip)
    dx = np.abs(np.diff(d_inv, axis=1))
    dy = np.abs(np.diff(d_inv, axis=0))
    tie[:, 1:] |= dx < 1e-5
    tie[:, :-1] |= dx < 1e-5
    tie[1:, :] |= dy < 1e-5
    tie[:-1, :] |= dy < 1e-5
    return skip | tie


@pytest.fixture
def rng():
    return np.random.default_rng(0)
