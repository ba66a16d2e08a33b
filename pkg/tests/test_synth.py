import numpy as np
import pytest

from stereodepth import synth
from stereodepth.field_core import FieldError


def test_single_plane_geometry():
    scene = synth.generate(synth.plane_spec(8.0, width=40, height=10))
    np.testing.assert_array_equal(scene.gt_disparity, 8.0)
    np.testing.assert_allclose(scene.gt_depth, scene.rig.bf / 8.0, rtol=1e-15)
    # left columns x < 8 map to x - 8 < 0 in the right view
    np.testing.assert_array_equal(scene.gt_occlusion[:, :8], 0.0)
    np.testing.assert_array_equal(scene.gt_occlusion[:, 8:], 1.0)
    assert not scene.zbuffer_occluded.any()


def test_same_seed_is_bit_identical():
    a = synth.generate(synth.two_layer_spec(width=48, height=32, seed=5))
    b = synth.generate(synth.two_layer_spec(width=48, height=32, seed=5))
    for name in ("left", "right", "gt_depth", "gt_disparity", "gt_occlusion"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = synth.generate(synth.two_layer_spec(width=48, height=32, seed=6))
    assert not np.array_equal(a.left, c.left)


def test_render_right_zero_disparity():
    left = np.random.default_rng(0).uniform(size=(4, 9, 3))
    right, visible = synth.render_right(left, np.zeros((4, 9)))
    np.testing.assert_array_equal(right, left)
    np.testing.assert_array_equal(visible, 1.0)


def test_render_right_uniform_shift_fills_holes():
    left = np.random.default_rng(1).uniform(size=(4, 12, 3))
    right, visible = synth.render_right(left, np.full((4, 12), 3.0))
    np.testing.assert_array_equal(right[:, :9], left[:, 3:])
    # the last 3 right columns have no source and copy the nearest reached column
    np.testing.assert_array_equal(right[:, 9:], np.repeat(left[:, 11:12], 3, axis=1))
    np.testing.assert_array_equal(visible[:, :3], 0.0)
    np.testing.assert_array_equal(visible[:, 3:], 1.0)


def test_two_layer_occluded_band_width():
    spec = synth.two_layer_spec(width=64, height=32)
    scene = synth.generate(spec)
    fg = spec.layers[1]
    delta = int(scene.rig.bf / fg.depth - scene.rig.bf / spec.layers[0].depth + 0.5)
    assert delta == 9
    rows = slice(fg.y0, fg.y1)
    band = scene.zbuffer_occluded[rows]
    np.testing.assert_array_equal(band[:, fg.x0 - delta : fg.x0], True)
    assert band.sum() == delta * (fg.y1 - fg.y0)
    assert not scene.zbuffer_occluded[: fg.y0].any()


def test_right_view_disparity_sees_foreground():
    spec = synth.two_layer_spec(width=64, height=32)
    scene = synth.generate(spec)
    fg = spec.layers[1]
    row = scene.right_disparity[fg.y0]
    np.testing.assert_array_equal(row[fg.x0 - 14 : fg.x1 - 14], 14.0)
    assert set(np.unique(scene.right_disparity)) == {5.0, 14.0}


def test_slanted_scene_right_view_matches_warp():
    spec = synth.slanted_spec(width=64, height=16, start=4.0, slope=0.05)
    scene = synth.generate(spec)
    assert not np.all(scene.gt_disparity == np.rint(scene.gt_disparity))
    # sampling the right image at x - d must give back the left image where visible
    from stereodepth import reconstruction as rc

    rebuilt = rc.reconstruct_left(scene.right, scene.gt_depth, scene.rig).value
    visible = scene.gt_occlusion > 0
    assert np.max(np.abs(rebuilt - scene.left)[visible]) < 0.05


def test_textureless_scene_is_flat():
    scene = synth.generate(synth.textureless_spec(width=32, height=16))
    assert np.ptp(scene.left[scene.gt_disparity == 5.0], axis=0).max() == 0.0


@pytest.mark.parametrize(
    "spec",
    [
        synth.SceneSpec(width=8, height=8, layers=()),
        synth.SceneSpec(width=8, height=8, layers=(synth.Layer(5.0, 1, 0, 8, 8),)),
        synth.SceneSpec(width=8, height=8, layers=(synth.Layer(-1.0, 0, 0, 8, 8),)),
        synth.SceneSpec(width=8, height=8, layers=(synth.Layer(100.0, 0, 0, 8, 8),)),
        synth.SceneSpec(width=8, height=8, layers=(synth.Layer(5.0, 0, 0, 8, 8), synth.Layer(3.0, 4, 4, 9, 8))),
    ],
)
def test_invalid_specs_rejected(spec):
    with pytest.raises(FieldError):
        synth.generate(spec)
