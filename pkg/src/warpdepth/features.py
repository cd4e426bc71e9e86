"""Fixed dense feature extractors for the feature reconstruction loss.

Three kinds are available, all frozen (no parameters are ever trained):

  identity             the image itself, untouched
  gradient_descriptor  Gaussian-blurred x/y gradients stacked over a 3x3
                       neighborhood (2 * C * 9 channels), standardized
  random_conv          one seeded 5x5 convolution to 16 channels scaled by
                       1/sqrt(fan-in), standardized

Extractors preserve spatial dimensions; any padding they need internally
uses symmetric boundary replication. Standardization maps each non-
degenerate channel to mean 0, std 1 over the full image; zero-variance
channels are left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .grids import with_channel_axis

KINDS = ("identity", "gradient_descriptor", "random_conv")

_GAUSS5 = np.exp(-0.5 * np.arange(-2.0, 3.0) ** 2)
_GAUSS5 = _GAUSS5 / _GAUSS5.sum()


@dataclass(frozen=True)
class FeatureExtractor:
    kind: str
    seed: int = 0
    kernel: Optional[np.ndarray] = None  # (5, 5, in, out) for random_conv

    def output_channels(self, in_channels: int) -> int:
        if self.kind == "identity":
            return in_channels
        if self.kind == "gradient_descriptor":
            return 2 * in_channels * 9
        return self.kernel.shape[3]


def make_extractor(kind: str, seed: int = 0, in_channels: int = 3) -> FeatureExtractor:
    if kind not in KINDS:
        raise ValueError("unknown extractor kind %r (choose from %s)" % (kind, KINDS))
    if kind == "random_conv":
        rng = np.random.default_rng(seed)
        fan_in = 5 * 5 * in_channels
        kernel = rng.standard_normal((5, 5, in_channels, 16)) / np.sqrt(fan_in)
        return FeatureExtractor(kind=kind, seed=seed, kernel=kernel)
    return FeatureExtractor(kind=kind, seed=seed)


def _blur5(img: np.ndarray) -> np.ndarray:
    """Separable 5-tap Gaussian (sigma = 1) with symmetric borders."""
    p = np.pad(img, ((2, 2), (0, 0), (0, 0)), mode="symmetric")
    out = sum(w * p[i : i + img.shape[0]] for i, w in enumerate(_GAUSS5))
    p = np.pad(out, ((0, 0), (2, 2), (0, 0)), mode="symmetric")
    return sum(w * p[:, i : i + img.shape[1]] for i, w in enumerate(_GAUSS5))


def _central_gradients(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    px = np.pad(img, ((0, 0), (1, 1), (0, 0)), mode="symmetric")
    gx = 0.5 * (px[:, 2:] - px[:, :-2])
    py = np.pad(img, ((1, 1), (0, 0), (0, 0)), mode="symmetric")
    gy = 0.5 * (py[2:] - py[:-2])
    return gx, gy


def _standardize(feat: np.ndarray) -> np.ndarray:
    mu = feat.mean(axis=(0, 1))
    sigma = feat.std(axis=(0, 1))
    ok = sigma > 1e-12
    out = np.array(feat)
    out[:, :, ok] = (feat[:, :, ok] - mu[ok]) / sigma[ok]
    return out


def extract(e: FeatureExtractor, image: np.ndarray) -> np.ndarray:
    """Dense feature map with the same spatial dimensions as the image."""
    img = with_channel_axis(np.asarray(image, dtype=np.float64))
    if e.kind == "identity":
        return np.array(image, dtype=np.float64)
    if e.kind == "gradient_descriptor":
        h, w, c = img.shape
        gx, gy = _central_gradients(_blur5(img))
        grads = np.concatenate([gx, gy], axis=2)
        padded = np.pad(grads, ((1, 1), (1, 1), (0, 0)), mode="symmetric")
        planes = [
            padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            for dy in (-1, 0, 1)
            for dx in (-1, 0, 1)
        ]
        return _standardize(np.concatenate(planes, axis=2))
    if e.kernel.shape[2] != img.shape[2]:
        raise ValueError(
            "random_conv extractor built for %d input channels, image has %d"
            % (e.kernel.shape[2], img.shape[2])
        )
    h, w, _ = img.shape
    padded = np.pad(img, ((2, 2), (2, 2), (0, 0)), mode="symmetric")
    out = np.zeros((h, w, e.kernel.shape[3]))
    for dy in range(5):
        for dx in range(5):
            out += padded[dy : dy + h, dx : dx + w] @ e.kernel[dy, dx]
    return _standardize(out)


@dataclass
class MatchingCostProfile:
    """L1 descriptor distance along a row of disparity hypotheses."""

    disparities: np.ndarray
    costs: np.ndarray
    truncated: bool

    def argmin_disparity(self) -> int:
        return int(self.disparities[np.argmin(self.costs)])


def matching_cost_profile(
    left: np.ndarray,
    right: np.ndarray,
    e: FeatureExtractor,
    row: int,
    pixel: int,
    disparity_range: Sequence[int],
    precomputed: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> MatchingCostProfile:
    """Cost curve for matching one left-image pixel against the right image.

    Assumes a rectified pair (pure horizontal disparity): candidate d
    compares the descriptor at (row, pixel) with (row, pixel - d).
    Disparities that would leave the image are dropped and the profile is
    flagged truncated.
    """
    if precomputed is not None:
        fl, fr = precomputed
    else:
        fl, fr = extract(e, left), extract(e, right)
    fl = with_channel_axis(fl)
    fr = with_channel_axis(fr)
    width = fr.shape[1]
    ds, costs = [], []
    truncated = False
    ref = fl[row, pixel]
    for d in disparity_range:
        xr = pixel - int(d)
        if xr < 0 or xr > width - 1:
            truncated = True
            continue
        ds.append(int(d))
        costs.append(float(np.mean(np.abs(ref - fr[row, xr]))))
    if not ds:
        raise ValueError("disparity range leaves no in-bounds candidates")
    return MatchingCostProfile(np.array(ds), np.array(costs), truncated)
