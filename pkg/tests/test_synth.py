import numpy as np
import pytest

from dcan import synth
from dcan.morphology import dilate
from dcan.tensor import make_rng


def test_zero_glands_is_plain_stroma():
    spec = synth.GlandSceneSpec(gland_count_min=0, gland_count_max=0, noise_sigma=0.0)
    s = synth.generate_scene(spec, make_rng(0))
    assert not s.instances.any()
    assert np.ptp(s.image.reshape(3, -1), axis=1).max() == 0.0


def test_same_seed_same_scene():
    spec = synth.GlandSceneSpec()
    a, b = synth.generate_scene(spec, make_rng(3)), synth.generate_scene(spec, make_rng(3))
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.instances, b.instances)


def test_two_touching_glands_form_one_abutting_pair():
    spec = synth.GlandSceneSpec(gland_count_min=2, gland_count_max=2, touching_fraction=1.0)
    for seed in range(5):
        lab = synth.generate_scene(spec, make_rng(seed)).instances
        assert set(np.unique(lab)) == {0, 1, 2}
        assert (dilate(lab == 1, 1) & (lab == 2)).any()
        assert synth.touching_glands(lab) == {1, 2}


def test_labels_are_connected_and_disjoint():
    spec = synth.GlandSceneSpec(touching_fraction=0.8)
    for seed in range(10):
        lab = synth.generate_scene(spec, make_rng(seed)).instances
        assert synth.is_four_connected(lab)
        assert lab.min() >= 0


def test_benign_lumen_brighter_than_ring():
    spec = synth.GlandSceneSpec(noise_sigma=0.0, touching_fraction=0.0)
    s = synth.generate_scene(spec, make_rng(1))
    grey = s.image.mean(axis=0)
    for k in np.unique(s.instances[s.instances > 0]):
        vals = grey[s.instances == k]
        assert vals.max() > vals.min() + 0.3  # bright lumen inside a dark ring


def test_malignant_mode_has_no_bright_lumen():
    spec = synth.GlandSceneSpec(noise_sigma=0.0, malignant_mode=True, touching_fraction=0.0)
    s = synth.generate_scene(spec, make_rng(1))
    grey = s.image.mean(axis=0)
    assert s.instances.any()
    assert grey[s.instances > 0].max() < spec.lumen_intensity * 0.8


def test_image_is_quantised_to_8_bits():
    s = synth.generate_scene(synth.GlandSceneSpec(), make_rng(5))
    np.testing.assert_array_equal(np.round(s.image * 255) / 255, s.image)


def test_manifest_regenerates_scenes():
    spec = synth.GlandSceneSpec(height=48, width=48, radius_min=8, radius_max=10)
    samples, manifest = synth.generate_dataset(spec, 3, make_rng(7))
    assert [m[0] for m in manifest] == ["scene_0000", "scene_0001", "scene_0002"]
    for s, (_, seed) in zip(samples, manifest):
        again = synth.generate_scene(spec, make_rng(seed))
        np.testing.assert_array_equal(again.instances, s.instances)
        np.testing.assert_array_equal(again.image, s.image)
    with pytest.raises(ValueError):
        synth.generate_dataset(spec, 0, make_rng(0))


def test_touching_fraction_over_100_scenes():
    spec = synth.GlandSceneSpec(touching_fraction=0.5)
    samples, _ = synth.generate_dataset(spec, 100, make_rng(2024))
    touching = sum(len(synth.touching_glands(s.instances)) for s in samples)
    total = sum(len(np.unique(s.instances)) - 1 for s in samples)
    assert abs(touching / total - 0.5) <= 0.05


def test_spec_validation():
    with pytest.raises(ValueError):
        synth.GlandSceneSpec(touching_fraction=1.5).validate()
    with pytest.raises(ValueError):
        synth.GlandSceneSpec(gland_count_min=4, gland_count_max=2).validate()
    with pytest.raises(ValueError):
        synth.GlandSceneSpec(lumen_intensity=-0.1).validate()
