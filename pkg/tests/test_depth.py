import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocdepth.depth import (
    DepthImage,
    PointCloud,
    Scene,
    background_subsample,
    build_depth_map,
    decode_depth_image,
    depth_bins,
    encode_depth_image,
    foreground_mask,
    hflip,
    load_depth_image,
    minpool_downsample,
    save_depth_image,
    scale_augment,
)
from ocdepth.geometry import Box3D, CameraIntrinsics, box2d_from_box, points_in_box, project

from oracles import brute_force_depth_map

CAM = CameraIntrinsics(fu=200.0, fv=200.0, cx=64.0, cy=24.0, width=128, height=48)


def random_cloud(rng, n=3000):
    pts = np.column_stack([rng.uniform(-20, 20, n), rng.uniform(-5, 3, n), rng.uniform(-5, 90, n)])
    return PointCloud(pts)


def random_image(rng, shape=(16, 24), p_valid=0.4, stride=1):
    valid = rng.random(shape) < p_valid
    grid = np.where(valid, rng.uniform(0.5, 80, shape), 0.0)
    return DepthImage(grid, valid, stride=stride)


class TestBuild:
    def test_empty_cloud(self):
        d = build_depth_map(PointCloud(np.zeros((0, 3))), CAM)
        assert d.grid.shape == (48, 128) and not d.valid.any()

    def test_nearest_wins(self):
        pts = np.array([[0.0, 0.0, 10.0], [0.0, 0.0, 7.0]])
        d = build_depth_map(PointCloud(pts), CAM)
        assert d.valid.sum() == 1
        assert d.grid[24, 64] == 7.0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        pc = random_cloud(rng)
        d = build_depth_map(pc, CAM)
        ref = brute_force_depth_map(pc.points, CAM, d.grid.shape)
        np.testing.assert_array_equal(d.valid, np.isfinite(ref))
        np.testing.assert_array_equal(d.grid[d.valid], ref[d.valid])
        d.check_invariants()

    def test_far_points_dropped(self):
        d = build_depth_map(PointCloud(np.array([[0.0, 0.0, 81.0]])), CAM)
        assert not d.valid.any()

    def test_non_finite_cloud_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, np.nan, 1.0]]))


class TestMinpool:
    def test_block_min(self):
        grid = np.zeros((4, 4))
        valid = np.zeros((4, 4), dtype=bool)
        grid[0, 0], grid[1, 2] = 12.0, 9.0
        valid[0, 0] = valid[1, 2] = True
        out = minpool_downsample(DepthImage(grid, valid), 4)
        assert out.grid.shape == (1, 1) and out.grid[0, 0] == 9.0 and out.stride == 4

    def test_all_invalid_block(self):
        out = minpool_downsample(DepthImage.empty(8, 8), 4)
        assert not out.valid.any()

    def test_non_divisible(self):
        with pytest.raises(ValueError):
            minpool_downsample(DepthImage.empty(10, 8), 4)

    def test_brute_force(self):
        rng = np.random.default_rng(1)
        d = random_image(rng, (16, 24), 0.2)
        out = minpool_downsample(d, 4)
        for r in range(4):
            for c in range(6):
                block = d.grid[4 * r : 4 * r + 4, 4 * c : 4 * c + 4]
                vb = d.valid[4 * r : 4 * r + 4, 4 * c : 4 * c + 4]
                if vb.any():
                    assert out.valid[r, c] and out.grid[r, c] == block[vb].min()
                else:
                    assert not out.valid[r, c]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4]))
    def test_never_increases(self, seed, factor):
        rng = np.random.default_rng(seed)
        d = random_image(rng, (8, 16), 0.3)
        out = minpool_downsample(d, factor)
        for r, c in zip(*np.nonzero(out.valid)):
            block = d.grid[r * factor : (r + 1) * factor, c * factor : (c + 1) * factor]
            vb = d.valid[r * factor : (r + 1) * factor, c * factor : (c + 1) * factor]
            assert out.grid[r, c] in block[vb]
            assert np.all(out.grid[r, c] <= block[vb])


class TestMasks:
    def scene(self, rng):
        boxes = [
            Box3D((rng.uniform(-3, 3), 0.5, rng.uniform(8, 30)), (1.6, 1.5, 3.9), rng.uniform(-3, 3)) for _ in range(3)
        ]
        pts = [random_cloud(rng, 2000).points]
        for b in boxes:
            local = rng.uniform(-0.5, 0.5, size=(300, 3)) * np.array([b.l, b.h, b.w])
            c, s = math.cos(b.yaw), math.sin(b.yaw)
            rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
            pts.append(local @ rot.T + np.array(b.center))
        return boxes, PointCloud(np.concatenate(pts))

    def test_box_containing_everything(self):
        rng = np.random.default_rng(2)
        pc = PointCloud(np.column_stack([rng.uniform(-1, 1, 200), rng.uniform(-1, 1, 200), rng.uniform(9, 11, 200)]))
        big = Box3D((0, 0, 10), (10, 10, 10), 0.0)
        d = foreground_mask(build_depth_map(pc, CAM), pc, [big], CAM)
        np.testing.assert_array_equal(d.fg_mask, d.valid)

    def test_no_boxes(self):
        rng = np.random.default_rng(3)
        pc = random_cloud(rng)
        d = foreground_mask(build_depth_map(pc, CAM), pc, [], CAM)
        assert not d.fg_mask.any()

    def test_fraction_oracle(self):
        rng = np.random.default_rng(4)
        boxes, pc = self.scene(rng)
        d = foreground_mask(build_depth_map(pc, CAM), pc, boxes, CAM)
        # oracle: the nearest point of each pixel, then a containment test on that point alone
        best = {}
        for i, (x, y, z) in enumerate(pc.points):
            if not 0 < z <= 80:
                continue
            u, v, _ = project(CAM, (x, y, z))
            key = (math.floor(v), math.floor(u))
            if 0 <= key[0] < 48 and 0 <= key[1] < 128 and (key not in best or z < best[key][0]):
                best[key] = (z, i)
        fg = sum(any(points_in_box(b, pc.points[[i]])[0] for b in boxes) for _, i in best.values())
        assert d.fg_mask.sum() == fg
        assert d.fg_mask.mean() == pytest.approx(fg / d.grid.size)

    def test_subsample_caps_bins(self):
        rng = np.random.default_rng(5)
        grid = np.concatenate([rng.uniform(0, 10, 1000), rng.uniform(10, 20, 100)]).reshape(50, 22)
        d = DepthImage(grid, np.ones_like(grid, dtype=bool))
        out = background_subsample(d, seed=1)
        bins = depth_bins(grid[out.bg_mask])
        assert np.bincount(bins).tolist() == [100, 100]
        out.check_invariants()

    def test_subsample_equal_bins_keeps_all(self):
        grid = np.repeat(np.arange(8) * 10 + 5.0, 12).reshape(8, 12)
        d = DepthImage(grid, np.ones_like(grid, dtype=bool))
        assert background_subsample(d, 0).bg_mask.all()

    def test_subsample_deterministic_and_disjoint(self):
        rng = np.random.default_rng(6)
        boxes, pc = self.scene(rng)
        d = foreground_mask(build_depth_map(pc, CAM), pc, boxes, CAM)
        a, b = background_subsample(d, 9), background_subsample(d, 9)
        np.testing.assert_array_equal(a.bg_mask, b.bg_mask)
        a.check_invariants()
        counts = np.bincount(depth_bins(a.grid[a.bg_mask]))
        nz = counts[counts > 0]
        assert nz.max() - nz.min() <= nz.min()

    def test_last_bin_closed(self):
        assert depth_bins(np.array([0.0, 9.99, 10.0, 79.9, 80.0])).tolist() == [0, 0, 1, 7, 7]


class TestAugment:
    def scene(self, rng):
        boxes = [Box3D((rng.uniform(-4, 4), 0.8, rng.uniform(8, 30)), (1.6, 1.5, 3.9), rng.uniform(-3, 3))]
        d = random_image(rng, (12, 32), 0.5, stride=4)
        fg = d.valid & (rng.random(d.grid.shape) < 0.3)
        return Scene(boxes, DepthImage(d.grid, d.valid, fg, d.valid & ~fg, stride=4), CAM)

    def test_double_flip_identity(self):
        rng = np.random.default_rng(7)
        s = self.scene(rng)
        back = hflip(hflip(s))
        assert back.cam == s.cam
        for a, b in zip(back.boxes, s.boxes):
            np.testing.assert_allclose(a.center, b.center, atol=1e-12)
            assert math.remainder(a.yaw - b.yaw, 2 * math.pi) == pytest.approx(0, abs=1e-12)
        for name in ("grid", "valid", "fg_mask", "bg_mask"):
            np.testing.assert_array_equal(getattr(back.depth, name), getattr(s.depth, name))

    def test_centered_forward_box_maps_to_itself(self):
        cam = CameraIntrinsics(fu=200, fv=200, cx=64.0, cy=24, width=128, height=48)
        box = Box3D((0, 1, 20), (1.6, 1.5, 3.9), math.pi / 2)
        out = hflip(Scene([box], DepthImage.empty(12, 32, stride=4), cam))
        assert out.cam == cam
        np.testing.assert_allclose(out.boxes[0].center, box.center)
        assert out.boxes[0].yaw == pytest.approx(box.yaw)

    def test_keypoint_commutes_with_flip(self):
        rng = np.random.default_rng(8)
        s = self.scene(rng)
        f = hflip(s)
        u, v, _ = project(s.cam, s.boxes[0].center)
        uf, vf, _ = project(f.cam, f.boxes[0].center)
        assert uf == pytest.approx(CAM.width - u, abs=1e-9) and vf == pytest.approx(v)
        l, t, r, b = box2d_from_box(s.boxes[0], s.cam, clip=False)
        lf, tf, rf, bf = box2d_from_box(f.boxes[0], f.cam, clip=False)
        assert (lf, rf) == pytest.approx((CAM.width - r, CAM.width - l), abs=1e-9)

    def test_scale_identity(self):
        rng = np.random.default_rng(9)
        s = self.scene(rng)
        out = scale_augment(s, 1.0)
        np.testing.assert_array_equal(out.depth.grid, s.depth.grid)
        np.testing.assert_array_equal(out.depth.fg_mask, s.depth.fg_mask)
        assert out.boxes == s.boxes

    def test_scale_projection_consistency(self):
        rng = np.random.default_rng(10)
        s = self.scene(rng)
        for k in (0.6, 0.8, 1.2, 1.4):
            out = scale_augment(s, k)
            b0, b1 = s.boxes[0], out.boxes[0]
            assert b1.z == pytest.approx(b0.z / k)
            h0 = s.cam.fv * b0.h / b0.z
            h1 = out.cam.fv * b1.h / b1.z
            assert h1 == pytest.approx(k * h0)
            u0 = project(s.cam, b0.center)[0]
            u1 = project(out.cam, b1.center)[0]
            assert u1 - CAM.cx == pytest.approx(k * (u0 - CAM.cx))
            out.depth.check_invariants()

    def test_scale_inverse_recovers_depths(self):
        rng = np.random.default_rng(11)
        s = self.scene(rng)
        back = scale_augment(scale_augment(s, 0.8), 1 / 0.8)
        assert back.boxes[0].z == pytest.approx(s.boxes[0].z, abs=1e-9)
        orig = s.depth.grid[s.depth.valid]
        for val in back.depth.grid[back.depth.valid]:
            assert np.min(np.abs(orig - val)) <= 1e-9

    def test_scale_rejects_nonpositive(self):
        rng = np.random.default_rng(12)
        with pytest.raises(ValueError):
            scale_augment(self.scene(rng), 0.0)


class TestBinary:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        d = random_image(rng, (12, 37), 0.5, stride=4)
        fg = d.valid & (rng.random(d.grid.shape) < 0.3)
        d = DepthImage(np.round(d.grid * 256) / 256, d.valid, fg, d.valid & ~fg, stride=4)
        save_depth_image(tmp_path / "a.ocdi", d)
        back = load_depth_image(tmp_path / "a.ocdi")
        np.testing.assert_array_equal(back.grid, d.grid)
        np.testing.assert_array_equal(back.valid, d.valid)
        np.testing.assert_array_equal(back.fg_mask, d.fg_mask)
        np.testing.assert_array_equal(back.bg_mask, d.bg_mask)
        assert back.stride == 4 and back.d_max == d.d_max

    def test_corrupt(self):
        with pytest.raises(ValueError):
            decode_depth_image(b"nope")
        data = encode_depth_image(DepthImage.empty(4, 4))
        with pytest.raises(ValueError):
            decode_depth_image(data[:-1])
