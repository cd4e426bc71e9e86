"""Optimization drivers: instance assembly, direct per-instance solving,
and predictor training over a dataset.

Direct mode treats one frame's inverse depth and the temporal twist as
free variables and runs Adam on the warp losses; predictor mode runs the
same losses through DepthNet/PoseNet and backpropagates into their
weights. Both are strictly deterministic given seeds and inputs: batch
size is 1, instance order is as given (no shuffle), and the learning rate
is constant unless the caller passes an explicit schedule.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses as losses_mod
from . import nets as nets_mod
from .camera import Intrinsics
from .errors import DivergenceError
from .losses import InstanceFeatures, LossBreakdown, LossWeights
from .se3 import SE3Transform, Twist


@dataclass
class TrainingInstance:
    """One stereo-temporal triple: the reference frame, the previous left
    frame (temporal live), and the same-time right frame (stereo live),
    plus calibration. Ground truth, when present, is for evaluation only.
    """

    ref_image: np.ndarray
    temporal_live: np.ndarray
    stereo_live: np.ndarray
    intrinsics: Intrinsics
    stereo_transform: SE3Transform
    gt_depth: Optional[np.ndarray] = None
    gt_temporal_twist: Optional[Twist] = None
    ref_index: int = 0

    def __post_init__(self):
        shapes = {self.ref_image.shape, self.temporal_live.shape, self.stereo_live.shape}
        if len(shapes) != 1:
            raise ValueError("instance images must share dimensions, got %s" % shapes)


def stereo_transform_from_baseline(baseline: float) -> SE3Transform:
    """Left->right transform for a right camera displaced +baseline along x
    in left coordinates: pure translation (-baseline, 0, 0)."""
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    return SE3Transform(np.eye(3), np.array([-baseline, 0.0, 0.0]))


def assemble_instances(
    lefts: Sequence[Optional[np.ndarray]],
    rights: Sequence[Optional[np.ndarray]],
    intrinsics: Intrinsics,
    baseline: float,
    gt_depths: Optional[Sequence[Optional[np.ndarray]]] = None,
    gt_twists: Optional[Sequence[Optional[Twist]]] = None,
) -> List[TrainingInstance]:
    """Pair consecutive frames into instances: for frames (t, t+1) the
    later frame is the reference and frame t is the temporal live view.
    Frames whose stereo partner is missing are skipped with a warning.
    gt_twists[t] is the ref->live transform for the pair (t, t+1).
    """
    if len(lefts) != len(rights):
        raise ValueError("left/right frame lists differ in length")
    if len(lefts) < 2:
        raise ValueError("need at least 2 temporal frames")
    stereo = stereo_transform_from_baseline(baseline)
    out = []
    for t in range(len(lefts) - 1):
        ref, live, right = lefts[t + 1], lefts[t], rights[t + 1]
        if ref is None or live is None:
            continue
        if right is None:
            warnings.warn("frame %d has no stereo partner; instance skipped" % (t + 1))
            continue
        out.append(
            TrainingInstance(
                ref_image=ref,
                temporal_live=live,
                stereo_live=right,
                intrinsics=intrinsics,
                stereo_transform=stereo,
                gt_depth=None if gt_depths is None else gt_depths[t + 1],
                gt_temporal_twist=None if gt_twists is None else gt_twists[t],
                ref_index=t + 1,
            )
        )
    return out


@dataclass
class SolveReport:
    history: List[LossBreakdown]
    final_d_inv: np.ndarray
    final_twist: Twist
    converged: bool
    wall_time: float

    @property
    def iterations(self) -> int:
        return len(self.history)


def optimize_direct(
    instance: TrainingInstance,
    init_d_inv: np.ndarray,
    init_twist: Twist,
    weights: LossWeights,
    extractor,
    iterations: int,
    lr: float = 1e-3,
    free: Tuple[str, ...] = ("depth", "pose"),
    monocular: bool = False,
    lr_schedule: Optional[Callable[[int], float]] = None,
    log_fn: Optional[Callable[[int, LossBreakdown], None]] = None,
) -> SolveReport:
    """Adam descent on (inverse depth, temporal twist) for one instance.

    `free` picks which variables move; fixing one of them turns the solve
    into pure pose alignment or pure depth refinement. Inverse depth is
    projected back to >= 0 after every step, matching the ReLU range of
    the predictor. Divergence (non-finite loss or a rotation leaving the
    principal domain) aborts with a diagnostic.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not free or any(f not in ("depth", "pose") for f in free):
        raise ValueError("free must name 'depth' and/or 'pose'")
    t0 = time.perf_counter()
    d_inv = losses_mod.validate_inverse_depth(init_d_inv).copy()
    twist_vec = init_twist.as_vector()
    params = {}
    if "depth" in free:
        params["d_inv"] = d_inv
    if "pose" in free:
        params["twist"] = twist_vec
    state = nets_mod.AdamState(params, lr=lr)
    feats = None
    if weights.lambda_fr > 0:
        feats = losses_mod.extract_instance_features(extractor, instance)
    history: List[LossBreakdown] = []
    for it in range(iterations):
        if lr_schedule is not None:
            state.lr = lr_schedule(it)
        try:
            twist = Twist.from_vector(twist_vec)
        except ValueError as exc:
            raise DivergenceError("iteration %d: %s" % (it, exc)) from exc
        breakdown, g_dinv, g_twist = losses_mod.total_loss(
            instance, d_inv, twist, extractor, weights, precomputed=feats,
            monocular=monocular,
        )
        history.append(breakdown)
        if log_fn is not None:
            log_fn(it, breakdown)
        grads = {"d_inv": g_dinv, "twist": g_twist}
        nets_mod.adam_step(state, params, {k: grads[k] for k in params})
        np.maximum(d_inv, 0.0, out=d_inv)
    converged = False
    if len(history) > 20:
        recent = [b.total for b in history[-20:]]
        converged = (max(recent) - min(recent)) <= 1e-6 * max(abs(recent[-1]), 1e-12)
    return SolveReport(
        history=history,
        final_d_inv=d_inv,
        final_twist=Twist.from_vector(twist_vec),
        converged=converged,
        wall_time=time.perf_counter() - t0,
    )


@dataclass
class TrainRecord:
    epoch: int
    instance: int
    l_ir: float
    l_fr: float
    l_ds: float
    total: float


@dataclass
class TrainReport:
    records: List[TrainRecord] = field(default_factory=list)

    def epoch_means(self) -> List[Tuple[int, float]]:
        sums: Dict[int, List[float]] = {}
        for r in self.records:
            sums.setdefault(r.epoch, []).append(r.total)
        return [(e, float(np.mean(v))) for e, v in sorted(sums.items())]


def train_predictors(
    dataset: Sequence[TrainingInstance],
    depth_net: nets_mod.DepthNet,
    pose_net: nets_mod.PoseNet,
    weights: LossWeights,
    extractor,
    epochs: int,
    lr: float = 1e-3,
    depth_state: Optional[nets_mod.AdamState] = None,
    pose_state: Optional[nets_mod.AdamState] = None,
    start_epoch: int = 0,
    log_fn: Optional[Callable[[TrainRecord], None]] = None,
) -> TrainReport:
    """Per-instance (batch size 1) warp-loss training of both predictors.

    Instances are visited in the given order every epoch. Descriptor maps
    are extracted once per instance and cached; extractors are frozen, so
    the cache stays valid. Passing existing Adam states resumes a run
    bit-exactly.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if depth_state is None:
        depth_state = nets_mod.AdamState(depth_net.parameters(), lr=lr)
    if pose_state is None:
        pose_state = nets_mod.AdamState(pose_net.parameters(), lr=lr)
    feature_cache: List[Optional[InstanceFeatures]] = [None] * len(dataset)
    if weights.lambda_fr > 0:
        for i, inst in enumerate(dataset):
            feature_cache[i] = losses_mod.extract_instance_features(extractor, inst)
    report = TrainReport()
    for epoch in range(start_epoch, start_epoch + epochs):
        for i, inst in enumerate(dataset):
            d_inv = depth_net.forward(inst.ref_image)
            twist_vec = pose_net.forward_vector(inst.ref_image, inst.temporal_live)
            try:
                twist = Twist.from_vector(twist_vec)
            except ValueError as exc:
                raise DivergenceError(
                    "epoch %d instance %d: %s" % (epoch, i, exc)
                ) from exc
            breakdown, g_dinv, g_twist = losses_mod.total_loss(
                inst, d_inv, twist, extractor, weights, precomputed=feature_cache[i]
            )
            depth_net.zero_gradients()
            pose_net.zero_gradients()
            depth_net.backward(g_dinv)
            pose_net.backward(g_twist)
            nets_mod.adam_step(depth_state, depth_net.parameters(), depth_net.gradients())
            nets_mod.adam_step(pose_state, pose_net.parameters(), pose_net.gradients())
            rec = TrainRecord(epoch, i, breakdown.l_ir, breakdown.l_fr, breakdown.l_ds,
                              breakdown.total)
            report.records.append(rec)
            if log_fn is not None:
                log_fn(rec)
    return report


def evaluate_instances(
    dataset: Sequence[TrainingInstance],
    depth_net: nets_mod.DepthNet,
    pose_net: nets_mod.PoseNet,
    weights: LossWeights,
    extractor,
) -> float:
    """Mean total loss of the predictors over a dataset (no gradients)."""
    totals = []
    for inst in dataset:
        d_inv = depth_net.forward(inst.ref_image)
        twist = Twist.from_vector(pose_net.forward_vector(inst.ref_image, inst.temporal_live))
        breakdown, _, _ = losses_mod.total_loss(
            inst, d_inv, twist, extractor, weights, with_gradients=False
        )
        totals.append(breakdown.total)
    return float(np.mean(totals))
