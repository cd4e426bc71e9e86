"""File formats and sequence ingestion.

Formats kept deliberately small and byte-deterministic:

  PGM (P5) / PPM (P6)   8-bit images, normalized to [0, 1] on load
  PFM                   little-endian float32 grids (depth maps, features),
                        bottom-to-top scanlines per the de-facto standard
  poses.txt             12 whitespace-separated floats per line, row-major
                        3x4 camera-to-world
  calib.txt             flat key=value (fx, fy, cx, cy, baseline), plus an
                        adapter for projection-matrix calibration lines

Directory layout for a sequence:

  sequence/
    image_left/NNNNNN.ppm     image_right/NNNNNN.ppm
    depth_left/NNNNNN.pfm     (optional ground truth)
    calib.txt                 poses.txt (optional)

Every loader rejects non-finite payloads.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import se3
from .camera import Intrinsics
from .errors import ParseError
from .evaluation import Trajectory
from .se3 import SE3Transform, Twist
from .solver import TrainingInstance, assemble_instances


# ---------------------------------------------------------------- images

def save_image(path, grid: np.ndarray):
    """Write an 8-bit PGM (single-channel) or PPM (3-channel) image.

    Values are clipped to [0, 1] and quantized to 255 levels.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        magic, payload = b"P5", grid[:, :, None]
    elif grid.ndim == 3 and grid.shape[2] == 3:
        magic, payload = b"P6", grid
    else:
        raise ValueError("expected (H, W) or (H, W, 3) grid, got %s" % (grid.shape,))
    data = np.rint(np.clip(payload, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (grid.shape[1], grid.shape[0]))
        fh.write(data.tobytes())


def _read_pnm_tokens(fh, count):
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise ParseError("unexpected end of header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens


def load_image(path) -> np.ndarray:
    """Read a P5/P6 image into a [0, 1] float grid."""
    with open(path, "rb") as fh:
        magic = fh.readline().split(b"#", 1)[0].strip()
        if magic not in (b"P5", b"P6"):
            raise ParseError("unsupported image magic %r" % magic)
        w, h, maxval = (int(t) for t in _read_pnm_tokens(fh, 3))
        if maxval != 255:
            raise ParseError("only 8-bit images are supported (maxval %d)" % maxval)
        channels = 1 if magic == b"P5" else 3
        raw = fh.read(w * h * channels)
    if len(raw) != w * h * channels:
        raise ParseError("truncated pixel data in %s" % path)
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return data.reshape(h, w) if channels == 1 else data.reshape(h, w, 3)


# ----------------------------------------------------------------- PFM

def save_pfm(path, grid: np.ndarray):
    """Write a float32 PFM (single- or 3-channel, little-endian)."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim == 2:
        magic = b"Pf"
    elif grid.ndim == 3 and grid.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError("PFM supports (H, W) or (H, W, 3), got %s" % (grid.shape,))
    if not np.all(np.isfinite(grid)):
        raise ValueError("refusing to write non-finite values")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n-1.0\n" % (grid.shape[1], grid.shape[0]))
        fh.write(np.ascontiguousarray(grid[::-1], dtype="<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    """Read a PFM; the sign of the scale line encodes endianness."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ParseError("unsupported PFM magic %r" % magic)
        w, h = (int(t) for t in _read_pnm_tokens(fh, 2))
        scale = float(_read_pnm_tokens(fh, 1)[0])
        channels = 1 if magic == b"Pf" else 3
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read(w * h * channels * 4)
    if len(raw) != w * h * channels * 4:
        raise ParseError("truncated PFM data in %s" % path)
    data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    data = data.reshape(h, w) if channels == 1 else data.reshape(h, w, 3)
    data = data[::-1].copy()
    if not np.all(np.isfinite(data)):
        raise ParseError("PFM contains non-finite values: %s" % path)
    return data


# ---------------------------------------------------------------- poses

def save_poses(path, traj: Trajectory):
    """Write camera-to-world poses, 12 floats per line (row-major 3x4)."""
    with open(path, "w") as fh:
        for pose in traj.poses:
            m = np.hstack([pose.rotation, pose.translation[:, None]])
            fh.write(" ".join("%.17g" % v for v in m.ravel()) + "\n")


def load_kitti_poses(path) -> Trajectory:
    """Read a 12-floats-per-line pose file into a Trajectory.

    Rotations are re-orthonormalized; drift beyond 1e-4 is a parse error.
    """
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 12:
                raise ParseError("expected 12 values, got %d" % len(parts), line=lineno)
            try:
                vals = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if not np.all(np.isfinite(vals)):
                raise ParseError("non-finite pose entry", line=lineno)
            m = vals.reshape(3, 4)
            r = m[:, :3]
            err = np.max(np.abs(r.T @ r - np.eye(3)))
            if err > 1e-4:
                raise ParseError("rotation not orthonormal (err %.3e)" % err, line=lineno)
            if err > 1e-12:
                u, _, vt = np.linalg.svd(r)
                r = u @ vt
                if np.linalg.det(r) < 0:
                    r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
            poses.append(SE3Transform(r, m[:, 3]))
    if not poses:
        raise ParseError("pose file is empty: %s" % path)
    return Trajectory(list(range(len(poses))), poses)


# ---------------------------------------------------------- calibration

def save_calibration(path, k: Intrinsics, baseline: float):
    with open(path, "w") as fh:
        for key, val in (("fx", k.fx), ("fy", k.fy), ("cx", k.cx), ("cy", k.cy),
                         ("baseline", baseline)):
            fh.write("%s=%.17g\n" % (key, val))


def load_calibration(path) -> Tuple[Intrinsics, float]:
    """Read flat key=value calibration (fx, fy, cx, cy, baseline)."""
    values: Dict[str, float] = {}
    with open(path) as fh:
        text = fh.read()
    if ":" in text and "=" not in text:
        return parse_projection_calibration(text)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key=value", line=lineno)
        key, val = line.split("=", 1)
        try:
            values[key.strip()] = float(val)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    missing = {"fx", "fy", "cx", "cy", "baseline"} - set(values)
    if missing:
        raise ParseError("calibration missing keys: %s" % sorted(missing))
    k = Intrinsics(values["fx"], values["fy"], values["cx"], values["cy"])
    if values["baseline"] <= 0:
        raise ParseError("baseline must be positive")
    return k, values["baseline"]


def parse_projection_calibration(text: str) -> Tuple[Intrinsics, float]:
    """Adapter for benchmark-style calibration: lines 'Pn: <12 floats>'
    holding 3x4 projection matrices. Intrinsics come from the left color
    camera (P2), the stereo baseline from the offset between P2 and P3:
    b = (P2[0,3] - P3[0,3]) / fx.
    """
    mats = {}
    for line in text.splitlines():
        m = re.match(r"\s*(P\d)\s*:\s*(.+)", line)
        if not m:
            continue
        vals = [float(v) for v in m.group(2).split()]
        if len(vals) == 12:
            mats[m.group(1)] = np.array(vals).reshape(3, 4)
    if "P2" not in mats or "P3" not in mats:
        raise ParseError("projection calibration needs P2 and P3 lines")
    p2, p3 = mats["P2"], mats["P3"]
    k = Intrinsics(fx=p2[0, 0], fy=p2[1, 1], cx=p2[0, 2], cy=p2[1, 2])
    baseline = (p2[0, 3] - p3[0, 3]) / p2[0, 0]
    if baseline <= 0:
        raise ParseError("non-positive baseline from projection matrices")
    return k, baseline


# ------------------------------------------------------------- sequences

@dataclass
class SequenceManifest:
    root: str
    left_paths: List[str]
    right_paths: List[Optional[str]]
    intrinsics: Intrinsics
    baseline: float
    poses_path: Optional[str] = None
    depth_paths: Optional[List[Optional[str]]] = None

    @property
    def frame_count(self) -> int:
        return len(self.left_paths)


def scan_sequence(root) -> SequenceManifest:
    """Build a manifest from the on-disk layout described above."""
    left_dir = os.path.join(root, "image_left")
    right_dir = os.path.join(root, "image_right")
    if not os.path.isdir(left_dir):
        raise FileNotFoundError("no image_left/ under %s" % root)
    lefts = sorted(f for f in os.listdir(left_dir) if f.endswith((".ppm", ".pgm")))
    if not lefts:
        raise FileNotFoundError("no images in %s" % left_dir)
    left_paths = [os.path.join(left_dir, f) for f in lefts]
    right_paths: List[Optional[str]] = []
    for f in lefts:
        cand = os.path.join(right_dir, f)
        right_paths.append(cand if os.path.isfile(cand) else None)
    k, baseline = load_calibration(os.path.join(root, "calib.txt"))
    poses_path = os.path.join(root, "poses.txt")
    depth_dir = os.path.join(root, "depth_left")
    depth_paths = None
    if os.path.isdir(depth_dir):
        depth_paths = []
        for f in lefts:
            cand = os.path.join(depth_dir, os.path.splitext(f)[0] + ".pfm")
            depth_paths.append(cand if os.path.isfile(cand) else None)
    return SequenceManifest(
        root=str(root),
        left_paths=left_paths,
        right_paths=right_paths,
        intrinsics=k,
        baseline=baseline,
        poses_path=poses_path if os.path.isfile(poses_path) else None,
        depth_paths=depth_paths,
    )


def load_instances(manifest: SequenceManifest) -> List[TrainingInstance]:
    """Read a manifest's frames and assemble consecutive-pair instances,
    attaching ground-truth depth and relative pose when available."""
    lefts = [load_image(p) for p in manifest.left_paths]
    rights = [None if p is None else load_image(p) for p in manifest.right_paths]
    gt_depths = None
    if manifest.depth_paths is not None:
        gt_depths = [None if p is None else load_pfm(p) for p in manifest.depth_paths]
    gt_twists = None
    if manifest.poses_path is not None:
        traj = load_kitti_poses(manifest.poses_path)
        if len(traj) == len(lefts):
            gt_twists = []
            for t in range(len(lefts) - 1):
                rel = se3.compose(se3.invert(traj.poses[t]), traj.poses[t + 1])
                gt_twists.append(se3.transform_to_twist(rel))
    return assemble_instances(
        lefts, rights, manifest.intrinsics, manifest.baseline,
        gt_depths=gt_depths, gt_twists=gt_twists,
    )


def write_sequence(root, lefts, rights, intrinsics: Intrinsics, baseline: float,
                   poses: Optional[Trajectory] = None,
                   depths: Optional[List[np.ndarray]] = None,
                   meta: Optional[Dict[str, object]] = None):
    """Write a rendered sequence in the standard layout."""
    os.makedirs(os.path.join(root, "image_left"), exist_ok=True)
    os.makedirs(os.path.join(root, "image_right"), exist_ok=True)
    for t, (il, ir) in enumerate(zip(lefts, rights)):
        save_image(os.path.join(root, "image_left", "%06d.ppm" % t), il)
        save_image(os.path.join(root, "image_right", "%06d.ppm" % t), ir)
    save_calibration(os.path.join(root, "calib.txt"), intrinsics, baseline)
    if poses is not None:
        save_poses(os.path.join(root, "poses.txt"), poses)
    if depths is not None:
        os.makedirs(os.path.join(root, "depth_left"), exist_ok=True)
        for t, d in enumerate(depths):
            save_pfm(os.path.join(root, "depth_left", "%06d.pfm" % t), d)
    if meta:
        with open(os.path.join(root, "scene_meta.txt"), "w") as fh:
            for key in sorted(meta):
                fh.write("%s=%s\n" % (key, meta[key]))


def read_key_values(path) -> Dict[str, str]:
    out: Dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, val = line.split("=", 1)
                out[key] = val
    return out
