"""Tiny convolutional predictors with hand-coded forward/backward passes.

Two nets are provided at desk scale, each well under 100k parameters:

  DepthNet  4 stride-2 3x3 conv+ReLU stages (3->16->32->64->64), a 1x1
            projection to one channel, x16 bilinear upsampling back to
            input resolution with one skip connection from the stride-4
            stage, and a final ReLU so the inverse-depth output is
            non-negative.
  PoseNet   the same encoder on 6 concatenated channels (reference first),
            global average pooling, and two fully-connected layers
            (64->32->6) producing an axis-angle + translation twist.

Initialization is seeded He-style for conv/FC weights. The pose head and
the depth projection layers start small (x0.01 / x0.1 with a small
positive projection bias) so early predictions sit near the identity pose
and a plausible scene scale instead of the ReLU dead zone; warp losses
provide no useful gradient from wild initial states. No batch norm, no
data augmentation, no run-time shuffle anywhere in the package.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .se3 import Twist


class Conv2d:
    """3x3 or 1x1 convolution, zero padding k//2, square stride."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, rng=None, weight_scale=None,
                 bias_init=0.0):
        fan_in = kernel * kernel * in_ch
        scale = np.sqrt(2.0 / fan_in) if weight_scale is None else weight_scale
        self.weight = rng.standard_normal((kernel, kernel, in_ch, out_ch)) * scale
        self.bias = np.full(out_ch, float(bias_init))
        self.kernel = kernel
        self.stride = stride
        self.pad = kernel // 2
        self._cache = None
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def out_shape(self, h, w):
        k, s, p = self.kernel, self.stride, self.pad
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h, w, cin = x.shape
        if cin != self.weight.shape[2]:
            raise ValueError("expected %d input channels, got %d" % (self.weight.shape[2], cin))
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = self.out_shape(h, w)
        xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
        cols = np.empty((ho, wo, k, k, cin))
        for ky in range(k):
            for kx in range(k):
                cols[:, :, ky, kx, :] = xp[ky : ky + s * ho : s, kx : kx + s * wo : s, :]
        cols2 = cols.reshape(ho * wo, k * k * cin)
        y = cols2 @ self.weight.reshape(k * k * cin, -1) + self.bias
        self._cache = (cols2, (h, w, cin))
        return y.reshape(ho, wo, -1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cols2, (h, w, cin) = self._cache
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo, cout = dy.shape
        dyf = dy.reshape(ho * wo, cout)
        self.grad_weight += (cols2.T @ dyf).reshape(self.weight.shape)
        self.grad_bias += dyf.sum(axis=0)
        dcols = (dyf @ self.weight.reshape(k * k * cin, cout).T).reshape(ho, wo, k, k, cin)
        dxp = np.zeros((h + 2 * p, w + 2 * p, cin))
        for ky in range(k):
            for kx in range(k):
                dxp[ky : ky + s * ho : s, kx : kx + s * wo : s, :] += dcols[:, :, ky, kx, :]
        return dxp[p : p + h, p : p + w, :] if p else dxp

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return dy * self._mask


class BilinearUpsample:
    """Integer-factor upsampling with half-pixel alignment and edge clamp."""

    def __init__(self, factor: int):
        self.factor = int(factor)
        self._cache = None

    def _axis_taps(self, n_in, n_out):
        pos = np.clip((np.arange(n_out) + 0.5) / self.factor - 0.5, 0.0, n_in - 1.0)
        i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
        return i0, pos - i0

    def forward(self, x):
        h, w, c = x.shape
        f = self.factor
        y0, wy = self._axis_taps(h, h * f)
        x0, wx = self._axis_taps(w, w * f)
        self._cache = ((h, w, c), y0, wy, x0, wx)
        top = x[y0][:, x0] * (1 - wx)[None, :, None] + x[y0][:, x0 + 1] * wx[None, :, None]
        bot = x[y0 + 1][:, x0] * (1 - wx)[None, :, None] + x[y0 + 1][:, x0 + 1] * wx[None, :, None]
        return top * (1 - wy)[:, None, None] + bot * wy[:, None, None]

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        (h, w, c), y0, wy, x0, wx = self._cache
        dx = np.zeros((h, w, c))
        for oy, oxw in ((0, 0), (0, 1), (1, 0), (1, 1)):
            wgt = (wy if oy else 1 - wy)[:, None, None] * (wx if oxw else 1 - wx)[None, :, None]
            np.add.at(dx, (np.repeat(y0 + oy, len(x0)), np.tile(x0 + oxw, len(y0))),
                      (dy * wgt).reshape(-1, c))
        return dx


class Linear:
    def __init__(self, n_in, n_out, rng=None, weight_scale=None):
        scale = np.sqrt(2.0 / n_in) if weight_scale is None else weight_scale
        self.weight = rng.standard_normal((n_in, n_out)) * scale
        self.bias = np.zeros(n_out)
        self._x = None
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, dy):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        self.grad_weight += np.outer(self._x, dy)
        self.grad_bias += dy
        return dy @ self.weight.T

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}


class GlobalAvgPool:
    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(0, 1))

    def backward(self, dy):
        if self._shape is None:
            raise RuntimeError("backward called before forward")
        h, w, c = self._shape
        return np.broadcast_to(dy / (h * w), (h, w, c)).copy()


class _NetBase:
    """Shared parameter bookkeeping over named layers."""

    def _param_layers(self):
        return [(name, layer) for name, layer in self.layers.items() if hasattr(layer, "params")]

    def parameters(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, layer in self._param_layers():
            for pn, arr in layer.params().items():
                out["%s.%s" % (name, pn)] = arr
        return out

    def gradients(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, layer in self._param_layers():
            for pn, arr in layer.grads().items():
                out["%s.%s" % (name, pn)] = arr
        return out

    def zero_gradients(self):
        for g in self.gradients().values():
            g[...] = 0.0

    def parameter_count(self) -> int:
        return sum(a.size for a in self.parameters().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: np.array(v) for k, v in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = self.parameters()
        if set(params) != set(state):
            raise ValueError("state dict keys do not match the network")
        for k, arr in params.items():
            src = np.asarray(state[k])
            if src.shape != arr.shape:
                raise ValueError("shape mismatch for %s: %s vs %s" % (k, src.shape, arr.shape))
            arr[...] = src


class DepthNet(_NetBase):
    """Single-view inverse-depth predictor. Input dims must be divisible
    by the total stride (16)."""

    STRIDE = 16

    def __init__(self, seed: int = 0, in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.layers = {
            "enc1": Conv2d(in_channels, 16, 3, 2, rng),
            "relu1": ReLU(),
            "enc2": Conv2d(16, 32, 3, 2, rng),
            "relu2": ReLU(),
            "enc3": Conv2d(32, 64, 3, 2, rng),
            "relu3": ReLU(),
            "enc4": Conv2d(64, 64, 3, 2, rng),
            "relu4": ReLU(),
            "proj": Conv2d(64, 1, 1, 1, rng, weight_scale=np.sqrt(2.0 / 64) * 0.1,
                           bias_init=0.025),
            "up_coarse": BilinearUpsample(4),
            "skip_proj": Conv2d(32, 1, 1, 1, rng, weight_scale=np.sqrt(2.0 / 32) * 0.1,
                                bias_init=0.025),
            "up_full": BilinearUpsample(4),
            "relu_out": ReLU(),
        }

    def forward(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3:
            raise ValueError("expected an (H, W, C) image")
        h, w = image.shape[:2]
        if h % self.STRIDE or w % self.STRIDE:
            raise ValueError("image dims (%d, %d) not divisible by stride %d" % (h, w, self.STRIDE))
        L = self.layers
        e1 = L["relu1"].forward(L["enc1"].forward(image))
        e2 = L["relu2"].forward(L["enc2"].forward(e1))
        e3 = L["relu3"].forward(L["enc3"].forward(e2))
        e4 = L["relu4"].forward(L["enc4"].forward(e3))
        coarse = L["up_coarse"].forward(L["proj"].forward(e4))
        fused = coarse + L["skip_proj"].forward(e2)
        out = L["relu_out"].forward(L["up_full"].forward(fused))
        return out[:, :, 0]

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        L = self.layers
        g = L["relu_out"].backward(d_out[:, :, None])
        g_fused = L["up_full"].backward(g)
        g_skip = L["skip_proj"].backward(g_fused)  # skip branch into the stride-4 stage
        g = L["up_coarse"].backward(g_fused)
        g = L["proj"].backward(g)
        g = L["enc4"].backward(L["relu4"].backward(g))
        g = L["enc3"].backward(L["relu3"].backward(g))
        g = L["enc2"].backward(L["relu2"].backward(g + g_skip))
        return L["enc1"].backward(L["relu1"].backward(g))


class PoseNet(_NetBase):
    """Two-view twist regressor over channel-concatenated images."""

    STRIDE = 16

    def __init__(self, seed: int = 0, in_channels: int = 6):
        rng = np.random.default_rng(seed)
        self.layers = {
            "enc1": Conv2d(in_channels, 16, 3, 2, rng),
            "relu1": ReLU(),
            "enc2": Conv2d(16, 32, 3, 2, rng),
            "relu2": ReLU(),
            "enc3": Conv2d(32, 64, 3, 2, rng),
            "relu3": ReLU(),
            "enc4": Conv2d(64, 64, 3, 2, rng),
            "relu4": ReLU(),
            "pool": GlobalAvgPool(),
            "fc1": Linear(64, 32, rng),
            "relu5": ReLU(),
            "fc2": Linear(32, 6, rng, weight_scale=np.sqrt(2.0 / 32) * 0.01),
        }

    def forward_vector(self, ref: np.ndarray, live: np.ndarray) -> np.ndarray:
        if ref.shape != live.shape:
            raise ValueError("reference and live dimensions disagree")
        x = np.concatenate([ref, live], axis=2)
        L = self.layers
        for name in ("enc1", "relu1", "enc2", "relu2", "enc3", "relu3", "enc4", "relu4"):
            x = L[name].forward(x)
        x = L["pool"].forward(x)
        x = L["relu5"].forward(L["fc1"].forward(x))
        return L["fc2"].forward(x)

    def backward(self, d_twist: np.ndarray) -> np.ndarray:
        L = self.layers
        g = L["fc2"].backward(np.asarray(d_twist, dtype=np.float64).reshape(6))
        g = L["fc1"].backward(L["relu5"].backward(g))
        g = L["pool"].backward(g)
        for name in ("relu4", "enc4", "relu3", "enc3", "relu2", "enc2", "relu1", "enc1"):
            g = L[name].backward(g)
        return g


def depth_forward(net: DepthNet, image: np.ndarray) -> np.ndarray:
    """Non-negative inverse-depth grid at input resolution."""
    return net.forward(image)


def pose_forward(net: PoseNet, ref: np.ndarray, live: np.ndarray) -> Twist:
    """Twist for the ref->live transform; inputs concatenated reference
    first. No symmetry under swapping the views is enforced or implied."""
    return Twist.from_vector(net.forward_vector(ref, live))


def backward(net, upstream: np.ndarray):
    """Reverse-mode pass through a net; returns (parameter grads, input grad).

    Gradients accumulate until zero_gradients(); call forward first or a
    state error is raised.
    """
    input_grad = net.backward(upstream)
    return net.gradients(), input_grad


class AdamState:
    """First/second moment accumulators for a named parameter set."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out["m.%s" % k] = self.m[k]
            out["v.%s" % k] = self.v[k]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], step_count: int):
        for k in self.m:
            self.m[k][...] = arrays["m.%s" % k]
            self.v[k][...] = arrays["v.%s" % k]
        self.step_count = int(step_count)


def adam_step(state: AdamState, params: Dict[str, np.ndarray],
              grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Bias-corrected Adam update, in place on the parameter arrays."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError("gradient shape %s does not match %s for %s"
                             % (g.shape, p.shape, key))
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


_CKPT_MAGIC = b"WDPC"
_CKPT_VERSION = 1


def save_checkpoint(path, arrays: Dict[str, np.ndarray], meta: Optional[Dict] = None):
    """Write named float64 arrays plus a small JSON meta block.

    The layout is byte-deterministic: a 4-byte magic, a little-endian
    uint64 header length, a JSON header (sorted keys) describing shapes
    and the meta dict, then the raw array bytes in key order.
    """
    meta = dict(meta or {})
    keys = sorted(arrays)
    header = {
        "version": _CKPT_VERSION,
        "meta": meta,
        "entries": [{"key": k, "shape": list(arrays[k].shape)} for k in keys],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in keys:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a checkpoint file: %s" % path)
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != _CKPT_VERSION:
            raise ValueError("unsupported checkpoint version %r" % header.get("version"))
        arrays = {}
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            arrays[entry["key"]] = np.frombuffer(
                fh.read(8 * n), dtype="<f8"
            ).reshape(shape).copy()
    return arrays, header["meta"]
