import numpy as np
import pytest

from stereodepth import field_core as fc
from stereodepth import geometry as geo
from stereodepth import occlusion as oc
from stereodepth import reconstruction as rc
from stereodepth import synth
from stereodepth.field_core import FieldError


def test_cyclic_volume_zero_level_identity():
    vol = fc.softmax_channels(np.random.default_rng(0).normal(size=(3, 6, 1))).value
    out = oc.cyclic_volume(vol, geo.DisparityLadder.from_levels([0.0]))
    np.testing.assert_array_equal(out, vol)


def test_cyclic_volume_loses_mass_at_border():
    # 8 pixels, one channel at disparity 3: the round trip left -> right -> left
    # drops the 3 columns whose right-view source left the frame
    ladder = geo.DisparityLadder.from_levels([3.0])
    left = np.ones((1, 8, 1))
    right = rc.shift_density_volume(left, ladder).value
    back = oc.cyclic_volume(right, ladder)
    np.testing.assert_array_equal(back[0, :, 0], [0, 0, 0, 1, 1, 1, 1, 1])
    assert np.all(back.sum(-1)[0, :3] < 1)


def test_mask_from_volume_examples():
    vol = np.zeros((1, 3, 2))
    vol[0, 1] = [0.2, 0.4]
    vol[0, 2] = [0.9, 0.5]
    np.testing.assert_allclose(oc.mask_from_volume(vol), [[0.0, 0.6, 1.0]], atol=1e-15)


def test_mask_from_disparity_examples():
    np.testing.assert_array_equal(oc.mask_from_disparity(np.full((2, 10), 4.0)), 1.0)
    d = np.array([[2.0, 3.0, 0.0, 0.0]])
    m = oc.mask_from_disparity(d, k=3)
    assert m[0, 0] == 0.0
    assert m[0, 3] == 1.0  # no right neighbour
    with pytest.raises(FieldError):
        oc.mask_from_disparity(d, k=0)


def test_mask_from_disparity_matches_zbuffer():
    scene = synth.generate(synth.two_layer_spec(width=64, height=32))
    m = oc.mask_from_disparity(scene.gt_disparity, k=41)
    np.testing.assert_array_equal(m < 0.5, scene.zbuffer_occluded)


def test_mask_from_volume_flags_occluded_band():
    scene = synth.generate(synth.two_layer_spec(width=64, height=32))
    ladder = geo.DisparityLadder.from_levels([14.0, 5.0])
    idx = np.where(scene.right_disparity == 14.0, 0, 1)
    right_prob = np.zeros(idx.shape + (2,))
    np.put_along_axis(right_prob, idx[..., None], 1.0, axis=-1)
    m = oc.mask_from_volume(oc.cyclic_volume(right_prob, ladder))
    band = scene.zbuffer_occluded & scene.in_frame
    assert band.any()
    assert np.all(m[band] < 0.5)


def test_combine_examples():
    assert oc.combine(np.ones((1, 1)), np.ones((1, 1)))[0, 0] == 1.0
    assert oc.combine(np.full((1, 1), 0.5), np.full((1, 1), 0.5))[0, 0] == 0.25
    np.testing.assert_array_equal(oc.combine(np.zeros((2, 2)), np.full((2, 2), 0.7)), 0.0)
    with pytest.raises(FieldError):
        oc.combine(np.ones((2, 2)), np.ones((2, 3)))
