import numpy as np
import pytest

from conftest import smooth_image
from warpdepth import camera, warp
from warpdepth.camera import Intrinsics, WarpField
from warpdepth.se3 import SE3Transform


def field_from_coords(coords, mask=None):
    coords = np.asarray(coords, dtype=np.float64)
    if mask is None:
        mask = np.ones(coords.shape[:2], dtype=bool)
    return WarpField(coords=coords, mask=mask)


def identity_coords(h, w):
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return np.stack([xs, ys], axis=-1)


def test_integer_coordinates_reproduce_source(rng):
    live = rng.random((6, 7, 3))
    field = field_from_coords(identity_coords(6, 7))
    out, mask = warp.bilinear_sample(live, field)
    # last row/column have no 4-neighbor cell and are masked
    assert mask[:5, :6].all()
    assert not mask[5, :].any() and not mask[:, 6].any()
    assert np.array_equal(out[:5, :6], live[:5, :6])


def test_midpoint_interpolation():
    live = np.array([[0.0, 1.0], [0.0, 1.0]])
    coords = np.array([[[0.5, 0.0]]])
    out, mask = warp.bilinear_sample(live, field_from_coords(coords))
    assert mask.all()
    assert out[0, 0] == pytest.approx(0.5)


def test_random_field_matches_four_tap_oracle(rng):
    live = rng.random((9, 11, 2))
    h, w = 7, 8
    coords = np.stack(
        [rng.uniform(0, 10.0 - 1e-6, size=(h, w)), rng.uniform(0, 8.0 - 1e-6, size=(h, w))],
        axis=-1,
    )
    out, mask = warp.bilinear_sample(live, field_from_coords(coords))
    for i in range(h):
        for j in range(w):
            x, y = coords[i, j]
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            if x0 > 9 or y0 > 7:
                assert not mask[i, j]
                continue
            assert mask[i, j]
            wx, wy = x - x0, y - y0
            expect = (
                (1 - wx) * (1 - wy) * live[y0, x0]
                + wx * (1 - wy) * live[y0, x0 + 1]
                + (1 - wx) * wy * live[y0 + 1, x0]
                + wx * wy * live[y0 + 1, x0 + 1]
            )
            assert np.allclose(out[i, j], expect, atol=1e-15)


def test_sampled_values_are_convex_combinations(rng):
    live = rng.random((9, 11))
    coords = np.stack(
        [rng.uniform(0, 9.999, size=(6, 6)), rng.uniform(0, 7.999, size=(6, 6))], axis=-1
    )
    out, mask = warp.bilinear_sample(live, field_from_coords(coords))
    for i in range(6):
        for j in range(6):
            if not mask[i, j]:
                continue
            x0, y0 = int(coords[i, j, 0]), int(coords[i, j, 1])
            cell = live[y0 : y0 + 2, x0 : x0 + 2]
            assert cell.min() - 1e-12 <= out[i, j] <= cell.max() + 1e-12


def test_gradient_zero_on_constant_image():
    live = np.full((6, 6), 2.5)
    coords = identity_coords(4, 4) + 0.3
    grad, mask = warp.bilinear_sample_gradient(live, field_from_coords(coords))
    assert mask.all()
    assert np.allclose(grad, 0.0)


def test_gradient_on_linear_ramp():
    xs, ys = np.meshgrid(np.arange(8.0), np.arange(6.0))
    live = xs.copy()
    coords = identity_coords(4, 5) + 0.25
    grad, mask = warp.bilinear_sample_gradient(live, field_from_coords(coords))
    assert np.allclose(grad[mask][:, 0], 1.0)
    assert np.allclose(grad[mask][:, 1], 0.0)
    live_y = ys.copy()
    grad, mask = warp.bilinear_sample_gradient(live_y, field_from_coords(coords))
    assert np.allclose(grad[mask][:, 0], 0.0)
    assert np.allclose(grad[mask][:, 1], 1.0)


def test_gradient_matches_finite_differences(rng):
    live = smooth_image(rng, 12, 14, 1)[:, :, 0]
    coords = np.stack(
        [rng.uniform(1.1, 12.4, size=(5, 5)), rng.uniform(1.1, 10.4, size=(5, 5))],
        axis=-1,
    )
    # keep probes away from integer nodes where bilinear has no derivative
    frac = coords - np.floor(coords)
    coords = np.where(frac < 0.05, coords + 0.1, coords)
    coords = np.where(frac > 0.95, coords - 0.1, coords)
    field = field_from_coords(coords)
    grad, mask = warp.bilinear_sample_gradient(live, field)
    eps = 1e-6
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = eps
        hi, _ = warp.bilinear_sample(live, field_from_coords(coords + shift))
        lo, _ = warp.bilinear_sample(live, field_from_coords(coords - shift))
        fd = (hi - lo) / (2 * eps)
        rel = np.abs(grad[mask][:, axis] - fd[mask]) / np.maximum(np.abs(fd[mask]), 1e-6)
        assert rel.max() < 1e-5


def test_synthesize_view_identity(rng):
    live = rng.random((16, 20, 3))
    depth = np.full((16, 20), 5.0)
    k = Intrinsics(fx=30.0, fy=30.0, cx=9.5, cy=7.5)
    out, mask = warp.synthesize_view(live, depth, SE3Transform.identity(), k)
    assert np.array_equal(out[mask], live[mask])
    assert mask[:15, :19].all()


def test_synthesize_channel_independence(rng):
    live = rng.random((16, 20, 32))
    depth = 4.0 + rng.random((16, 20))
    k = Intrinsics(fx=25.0, fy=25.0, cx=9.5, cy=7.5)
    t = SE3Transform(np.eye(3), np.array([-0.3, 0.05, 0.1]))
    full, mask_full = warp.synthesize_view(live, depth, t, k)
    for c in [0, 7, 31]:
        single, mask_c = warp.synthesize_view(live[:, :, c], depth, t, k)
        assert np.array_equal(mask_full, mask_c)
        assert np.array_equal(full[:, :, c], single)


def test_malformed_field_raises(rng):
    live = rng.random((4, 4))
    bad = WarpField(coords=np.zeros((5, 5, 3)), mask=np.ones((5, 5), dtype=bool))
    with pytest.raises(ValueError):
        warp.bilinear_sample(live, bad)
    bad = WarpField(coords=np.zeros((5, 5, 2)), mask=np.ones((4, 5), dtype=bool))
    with pytest.raises(ValueError):
        warp.bilinear_sample(live, bad)
