import math

import numpy as np
import pytest

import gausstr as g


def test_exports():
    assert g.__version__
    assert g.EMPTY_CELL == 255


def test_camera_roundtrip():
    cam = g.look_at([4.0, 0.0, 2.5], [0.0, 0.0, 0.6], 70.0, 64)
    assert cam.width == cam.height == 64
    px = np.array([13.2, 40.7])
    world = g.unproject(px, 3.3, cam)
    back, z, behind = g.project(world, cam)
    assert not behind
    assert np.linalg.norm(back - px) < 1e-9
    assert abs(z - 3.3) < 1e-9


def test_covariance_examples():
    sigma = g.assemble_covariance([1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0])
    assert np.abs(sigma - np.diag([1.0, 4.0, 9.0])).max() < 1e-12
    h = math.sqrt(0.5)
    turned = g.assemble_covariance([1.0, 2.0, 1.0], [h, 0.0, 0.0, h])
    assert np.abs(turned - np.diag([4.0, 1.0, 1.0])).max() < 1e-9


def test_loss_values():
    ones = np.ones((2, 1))
    r = g.depth_loss_value([[2.0], [4.0]], [[3.0], [3.0]], ones, beta=0.2)
    assert abs(r["total"] - 0.3201) < 1e-4
    assert abs(r["total"] - (r["silog"] + 0.2 * r["l1"])) < 1e-12

    a = g.depth_loss_value([[2.0], [4.0]], [[3.0], [3.0]], ones)["silog"]
    b = g.depth_loss_value([[14.0], [28.0]], [[21.0], [21.0]], ones)["silog"]
    assert abs(a - b) < 1e-12

    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert abs(g.cosine_loss_value(feats, feats, ones)) < 1e-12
    assert abs(g.cosine_loss_value(feats, feats[::-1].copy(), ones) - 1.0) < 1e-9

    logits = np.full((3, 5), 0.37)
    ce = g.ce_loss_value(logits, [0, 2, 4], np.ones((3, 1)))
    assert abs(ce - math.log(5.0)) < 1e-9


def test_pca_shapes():
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(40, 6))
    comps, mean = g.pca_fit(samples, 3)
    assert comps.shape == (3, 6) and mean.shape == (6,)
    assert np.abs(comps @ comps.T - np.eye(3)).max() < 1e-9
    proj = g.pca_project(samples, comps, mean)
    assert proj.shape == (40, 3)


def _singleton(alpha=1.0):
    mu = np.array([[0.0, 0.0, 2.7]])
    scale = np.full((1, 3), 0.15)
    rot = np.array([[1.0, 0.0, 0.0, 0.0]])
    return mu, scale, rot, np.array([alpha]), np.array([[2.0]]), np.array([True])


def test_render_opaque_depth_and_determinism():
    cam = g.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], 40.0, 64)
    out = g.render(*_singleton(), cam)
    covered = out["trans"] < 1.0
    assert covered.any()
    assert np.abs(out["depth"][covered] - 2.7).max() <= 1e-9
    assert out["trans"].min() >= 0.0 and out["trans"].max() <= 1.0
    again = g.render(*_singleton(), cam)
    for k in ("feat", "depth", "trans"):
        assert np.array_equal(out[k], again[k])


def test_voxelize_and_iou():
    mu, scale, rot, alpha, _, active = _singleton(alpha=0.9)
    feat = np.array([[0.0, 1.0, 0.0]])  # matches prototype 1
    protos = np.eye(3)
    names = ["ground", "block", "background"]
    # Cell (ix, iy, iz) = (1, 1, 2) is centered exactly on the gaussian.
    gmin, gmax = [-0.75, -0.75, 1.45], [1.25, 1.25, 3.45]
    grid = g.voxelize(mu, scale, rot, alpha, feat, active, protos, names,
                      gmin, gmax, 0.5, tau=0.5)
    assert grid.shape == (4, 4, 4)
    assert grid[2, 1, 1] == 1
    assert (grid != g.EMPTY_CELL).sum() == 1
    r = g.iou_report(grid, grid, gmin, gmax, 0.5, 3)
    assert r["binary_iou"] == 1.0 and r["miou"] == 1.0
    assert len(r["per_class"]) == 3


def test_scene_trainer_pipeline():
    scene = g.generate_scene(seed=3, views=2, image_size=32, fov_deg=70.0,
                             box_classes=1, boxes=1, extent_xy=4.8,
                             extent_z=1.6, voxel=0.8, camera_radius=3.0,
                             camera_height=2.5, noise_sigma=0.05, feat_dim=16)
    assert scene.class_names == ["ground", "block1", "background"]
    gt = scene.ground_truth()
    assert gt.shape == scene.grid()["shape"] == (2, 6, 6)
    maps = scene.oracle_render(0, downsample=8)
    assert maps["feat"].shape == (4, 4, 16)
    assert maps["depth"].shape == (4, 4)

    tr = g.Trainer(scene, queries_per_view=8, layers=1, dim=16, heads=2,
                   points=2, levels=2, downsample=8, lr=2e-3, seed=3)
    first = tr.step()["total"]
    last = tr.train(40)["total"]
    assert math.isfinite(last) and last < first
    pred = tr.predict()
    assert pred["mu"].shape == (16, 3) and pred["feat"].shape == (16, 16)
    vox = tr.voxelize_prediction(tau=0.05)
    assert vox.shape == gt.shape
    ev = tr.evaluate(tau=0.05)
    assert set(ev) == {"binary_iou", "miou", "per_class"}
    assert 0.0 <= ev["binary_iou"] <= 1.0


def test_error_mapping():
    with pytest.raises(ValueError):
        g.generate_scene(seed=1, voxel=-0.5)
    mu, scale, rot, alpha, feat, active = _singleton()
    with pytest.raises(ValueError):
        g.voxelize(mu, scale, rot, alpha, feat, active, np.eye(3),
                   ["a", "b", "c"], [-1, -1, 0], [1, 1, 2], 0.5, 0.5)
