import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from dcan import morphology as M

masks = arrays(bool, st.tuples(st.integers(1, 14), st.integers(1, 14)))


def test_disk_radius_three_has_29_pixels():
    d = M.disk(3)
    assert d.shape == (7, 7) and d.sum() == 29
    assert len(M.disk_offsets(3)) == 29
    assert set(M.disk_offsets(3)) == set(oracles.disk_offsets(3))
    assert M.disk(0).sum() == 1


def test_disk_offsets_symmetric():
    offs = set(M.disk_offsets(4))
    assert (0, 0) in offs
    assert offs == {(-dy, -dx) for dy, dx in offs}


def test_single_pixel_dilates_to_disk():
    m = np.zeros((9, 9), dtype=bool)
    m[4, 4] = True
    np.testing.assert_array_equal(M.dilate(m, 3)[1:8, 1:8], M.disk(3))
    assert M.dilate(m, 3).sum() == 29


def test_dilation_clips_at_border():
    m = np.zeros((5, 5), dtype=bool)
    m[0, 0] = True
    np.testing.assert_array_equal(M.dilate(m, 2), oracles.dilate(m, 2))


@settings(max_examples=60, deadline=None)
@given(m=masks, r=st.integers(0, 3))
def test_dilate_matches_oracle(m, r):
    np.testing.assert_array_equal(M.dilate(m, r), oracles.dilate(m, r))


@settings(max_examples=40, deadline=None)
@given(a=masks, extra=st.integers(0, 2**31 - 1), r=st.integers(0, 3))
def test_dilation_extensive_and_monotone(a, extra, r):
    b = a | (np.random.default_rng(extra).random(a.shape) < 0.2)
    da, db = M.dilate(a, r), M.dilate(b, r)
    assert (da >= a).all()
    assert (db >= da).all()


def test_diagonal_pixels_are_separate_components():
    m = np.array([[1, 0], [0, 1]], dtype=bool)
    lab = M.connected_components(m)
    np.testing.assert_array_equal(lab, [[1, 0], [0, 2]])


def test_components_of_empty_mask():
    assert M.connected_components(np.zeros((4, 4), bool)).max() == 0


@settings(max_examples=60, deadline=None)
@given(m=masks)
def test_components_match_flood_fill(m):
    np.testing.assert_array_equal(M.connected_components(m), oracles.flood_components(m))


def test_components_recover_instance_partition():
    rng = np.random.default_rng(5)
    lab = oracles.random_instances(rng, 20, 20)
    # relabelling each instance separately recovers it exactly
    for k in np.unique(lab[lab > 0]):
        assert M.connected_components(lab == k).max() == 1


def test_square_perimeter_has_28_pixels():
    lab = np.zeros((12, 12), dtype=np.int64)
    lab[2:10, 2:10] = 1
    ring = M.extract_contour_labels(lab, radius=0)
    assert ring.sum() == 28
    np.testing.assert_array_equal(ring, oracles.boundary(lab))


def test_abutting_rectangles_mark_both_sides_of_shared_edge():
    lab = np.zeros((8, 12), dtype=np.int64)
    lab[2:6, 1:6] = 1
    lab[2:6, 6:11] = 2
    b = M.instance_boundary(lab)
    assert b[3:5, 5].all() and b[3:5, 6].all()
    np.testing.assert_array_equal(b, oracles.boundary(lab))


def test_empty_instances_have_no_contour():
    assert not M.extract_contour_labels(np.zeros((6, 6), dtype=int)).any()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), r=st.integers(0, 3))
def test_contour_labels_match_oracle_and_stay_near_objects(seed, r):
    lab = oracles.random_instances(np.random.default_rng(seed), 16, 16)
    got = M.extract_contour_labels(lab, r)
    np.testing.assert_array_equal(got, oracles.dilate(oracles.boundary(lab), r))
    assert (got <= M.dilate(lab > 0, r)).all()


def test_fill_ring_interior():
    m = np.zeros((7, 7), dtype=bool)
    m[1, 1:6] = m[5, 1:6] = m[1:6, 1] = m[1:6, 5] = True
    filled = M.fill_holes(m)
    assert filled[2:5, 2:5].all() and filled.sum() == 25


def test_hole_with_channel_to_border_not_filled():
    m = np.zeros((7, 7), dtype=bool)
    m[1, 1:6] = m[5, 1:6] = m[1:6, 1] = m[1:6, 5] = True
    m[3, 5] = False  # opening to the outside
    np.testing.assert_array_equal(M.fill_holes(m), m)


def test_solid_mask_unchanged_by_fill():
    m = np.ones((5, 5), dtype=bool)
    np.testing.assert_array_equal(M.fill_holes(m), m)


@settings(max_examples=60, deadline=None)
@given(m=masks)
def test_fill_holes_matches_oracle_and_is_idempotent(m):
    f = M.fill_holes(m)
    np.testing.assert_array_equal(f, oracles.fill_holes(m))
    np.testing.assert_array_equal(M.fill_holes(f), f)


def test_remove_small_keeps_large_component():
    m = np.zeros((20, 20), dtype=bool)
    m[0, 0:3] = True  # 3 pixels
    m[5:15, 5:10] = True  # 50 pixels
    out = M.remove_small(m, 10)
    assert out.sum() == 50 and not out[0].any()
    np.testing.assert_array_equal(M.remove_small(m, 0), m)
    with pytest.raises(ValueError):
        M.remove_small(m, -1)


@settings(max_examples=60, deadline=None)
@given(m=masks, min_area=st.integers(0, 12))
def test_remove_small_matches_oracle(m, min_area):
    out = M.remove_small(m, min_area)
    np.testing.assert_array_equal(out, oracles.remove_small(m, min_area))
    np.testing.assert_array_equal(M.remove_small(out, min_area), out)
    sizes = np.bincount(M.connected_components(out).ravel())[1:]
    assert (sizes >= min_area).all()


def test_smooth_removes_isolated_pixel_keeps_ones():
    m = np.zeros((9, 9), dtype=bool)
    m[4, 4] = True
    assert not M.smooth_disk(m, 3).any()
    assert M.smooth_disk(np.ones((6, 6), bool), 3).all()


def test_smooth_large_square_keeps_interior():
    m = np.zeros((30, 30), dtype=bool)
    m[5:25, 5:25] = True
    out = M.smooth_disk(m, 3)
    assert out[8:22, 8:22].all()
    np.testing.assert_array_equal(out, oracles.smooth_disk(m, 3))


@settings(max_examples=40, deadline=None)
@given(m=masks, r=st.integers(0, 3))
def test_smooth_matches_oracle(m, r):
    np.testing.assert_array_equal(M.smooth_disk(m, r), oracles.smooth_disk(m, r))


def test_relabel_sequential():
    lab = np.array([[0, 7, 7], [3, 0, 9]])
    np.testing.assert_array_equal(M.relabel_sequential(lab), [[0, 2, 2], [1, 0, 3]])
