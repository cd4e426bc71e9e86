"""Evaluation protocols: standard seven-number depth accuracy under a depth
cap, and odometry drift over 100..800 m sub-sequences of a driving-style
trajectory, including trajectory integration and monocular scale alignment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import se3
from .errors import DegenerateInputError
from .se3 import SE3Transform

DRIFT_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass
class Trajectory:
    """Ordered camera-to-world poses. The first pose may be arbitrary;
    every metric below is relative."""

    frame_indices: List[int]
    poses: List[SE3Transform]

    def __post_init__(self):
        if len(self.frame_indices) != len(self.poses):
            raise ValueError("frame indices and poses differ in length")
        idx = np.asarray(self.frame_indices)
        if len(idx) > 1 and not np.all(np.diff(idx) > 0):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    cap: float
    valid_count: int


def depth_metrics(pred: np.ndarray, gt: np.ndarray, cap: float,
                  mask: Optional[np.ndarray] = None) -> DepthMetrics:
    """Standard error/accuracy numbers over pixels with 0 < gt <= cap.

    Predictions are clamped to [1e-3, cap] first, which protects the log
    term and mirrors the capped evaluation range. delta_k is the fraction
    of pixels with max(p/g, g/p) < 1.25**k.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("pred/gt dimensions disagree")
    valid = (gt > 0) & (gt <= cap)
    if mask is not None:
        valid &= mask.astype(bool)
    n = int(np.count_nonzero(valid))
    if n == 0:
        raise DegenerateInputError("no valid pixels under cap %.3g" % cap)
    p = np.clip(pred[valid], 1e-3, cap)
    g = gt[valid]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        cap=float(cap),
        valid_count=n,
    )


def integrate_trajectory(relative_poses: Sequence[SE3Transform],
                         initial_pose: Optional[SE3Transform] = None,
                         frame_indices: Optional[Sequence[int]] = None) -> Trajectory:
    """Absolute camera-to-world poses from per-step ref->live transforms.

    With the frame pairing (live = t, ref = t+1), a stored relative pose
    maps frame-(t+1) coordinates into frame-t coordinates, so integration
    is a left-composition: C[t+1] = C[t] @ rel[t].
    """
    if len(relative_poses) < 1:
        raise ValueError("need at least one relative pose")
    poses = [SE3Transform.identity() if initial_pose is None else initial_pose]
    for rel in relative_poses:
        poses.append(se3.compose(poses[-1], rel))
    if frame_indices is None:
        frame_indices = list(range(len(poses)))
    return Trajectory(list(frame_indices), poses)


def extract_relative_poses(traj: Trajectory) -> List[SE3Transform]:
    """Per-step ref->live transforms; inverse of integrate_trajectory."""
    return [
        se3.compose(se3.invert(traj.poses[t]), traj.poses[t + 1])
        for t in range(len(traj) - 1)
    ]


def align_scale(pred: Trajectory, gt: Trajectory) -> Tuple[float, Trajectory]:
    """Least-squares scalar fit of predicted positions onto ground truth.

    Returns s minimizing sum ||s * p_pred - p_gt||^2 (closed form) and the
    trajectory with translations scaled by s; rotations are untouched.
    """
    if len(pred) != len(gt) or len(pred) < 2:
        raise ValueError("trajectories must have equal length >= 2")
    pp = pred.positions()
    pg = gt.positions()
    denom = float(np.sum(pp * pp))
    if denom <= 0.0:
        raise DegenerateInputError("predicted trajectory has zero motion")
    s = float(np.sum(pp * pg)) / denom
    scaled = Trajectory(
        list(pred.frame_indices),
        [SE3Transform(p.rotation, s * p.translation) for p in pred.poses],
    )
    return s, scaled


@dataclass
class LengthBin:
    length: float
    t_err_percent: float
    r_err_deg_per_100m: float
    count: int


@dataclass
class OdomMetrics:
    t_err_percent: float
    r_err_deg_per_100m: float
    num_subsequences: int
    per_length: List[LengthBin]

    @property
    def empty(self) -> bool:
        return self.num_subsequences == 0


def _path_distances(traj: Trajectory) -> np.ndarray:
    pos = traj.positions()
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _rotation_angle(r: np.ndarray) -> float:
    return float(np.arccos(np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)))


def _subsequence_errors(pred: Trajectory, gt: Trajectory, step: int,
                        lengths: Sequence[float]):
    if len(pred) != len(gt):
        raise ValueError("trajectories must be time-aligned with equal length")
    dist = _path_distances(gt)
    rows = []  # (length, t_err fraction, r_err rad/m)
    for first in range(0, len(gt), step):
        for length in lengths:
            beyond = np.nonzero(dist[first:] > dist[first] + length)[0]
            if beyond.size == 0:
                continue
            last = first + int(beyond[0])
            rel_gt = se3.compose(se3.invert(gt.poses[first]), gt.poses[last])
            rel_pred = se3.compose(se3.invert(pred.poses[first]), pred.poses[last])
            err = se3.compose(se3.invert(rel_gt), rel_pred)
            rows.append(
                (
                    length,
                    float(np.linalg.norm(err.translation)) / length,
                    _rotation_angle(err.rotation) / length,
                )
            )
    return rows


def odometry_drift(pred: Trajectory, gt: Trajectory, step: int = 10,
                   lengths: Sequence[float] = DRIFT_LENGTHS) -> OdomMetrics:
    """Average translational (%) and rotational (deg/100 m) drift over all
    sub-sequences of the given path lengths, starting every `step` frames.

    Too-short trajectories produce an empty (flagged) result, not zeros.
    """
    rows = _subsequence_errors(pred, gt, step, lengths)
    per_length = []
    for length in lengths:
        sel = [r for r in rows if r[0] == length]
        if not sel:
            continue
        per_length.append(
            LengthBin(
                length=length,
                t_err_percent=100.0 * float(np.mean([r[1] for r in sel])),
                r_err_deg_per_100m=float(np.degrees(np.mean([r[2] for r in sel]))) * 100.0,
                count=len(sel),
            )
        )
    if not rows:
        return OdomMetrics(float("nan"), float("nan"), 0, [])
    return OdomMetrics(
        t_err_percent=100.0 * float(np.mean([r[1] for r in rows])),
        r_err_deg_per_100m=float(np.degrees(np.mean([r[2] for r in rows]))) * 100.0,
        num_subsequences=len(rows),
        per_length=per_length,
    )


def drift_vs_length(pred: Trajectory, gt: Trajectory, step: int = 10,
                    lengths: Sequence[float] = DRIFT_LENGTHS) -> List[LengthBin]:
    """Per-length drift breakdown; bins with no valid sub-sequence are
    simply absent from the result rather than reported as zero."""
    return odometry_drift(pred, gt, step=step, lengths=lengths).per_length
