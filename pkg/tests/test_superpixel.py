import numpy as np
import pytest
from scipy import ndimage

from ctxseg.errors import ValidationError
from ctxseg.superpixel import (
    SegmentationParams,
    component_boundary_recall,
    gaussian_smooth,
    segment,
)

EIGHT = np.ones((3, 3), dtype=bool)


def assert_valid_partition(ids, min_size):
    # contiguous ids
    present = np.unique(ids)
    assert present[0] == 0 and present[-1] == len(present) - 1
    for v in present:
        region = ids == v
        # every segment is 8-connected and large enough
        _, parts = ndimage.label(region, structure=EIGHT)
        assert parts == 1
        assert region.sum() >= min(min_size, ids.size)


def test_half_black_half_white_gives_exactly_two_segments():
    img = np.zeros((8, 8))
    img[:, 4:] = 1.0
    ids = segment(img, SegmentationParams(sigma=0.0, k=1.0, min_size=1))
    assert ids.max() == 1
    assert np.array_equal(np.unique(ids[:, :4]), [0])
    assert np.array_equal(np.unique(ids[:, 4:]), [1])


def test_random_images_partition_validity(rng):
    for _ in range(20):
        h, w = rng.integers(6, 24, size=2)
        img = rng.random((h, w))
        params = SegmentationParams(
            sigma=float(rng.choice([0.0, 0.5, 1.0])),
            k=float(rng.uniform(0.05, 50.0)),
            min_size=int(rng.integers(1, 12)),
        )
        ids = segment(img, params)
        assert ids.shape == (h, w)
        assert_valid_partition(ids, params.min_size)


def test_deterministic_reruns(rng):
    img = rng.random((16, 16))
    a = segment(img, SegmentationParams())
    b = segment(img, SegmentationParams())
    assert np.array_equal(a, b)


def test_color_images_supported(rng):
    img = rng.random((10, 10, 3))
    ids = segment(img, SegmentationParams(sigma=0.5, k=5.0, min_size=4))
    assert_valid_partition(ids, 4)


def test_ids_numbered_by_first_row_major_appearance():
    img = np.zeros((4, 8))
    img[:, 4:] = 1.0
    ids = segment(img, SegmentationParams(sigma=0.0, k=0.5, min_size=1))
    assert ids[0, 0] == 0  # top-left pixel always takes id 0


def test_single_pixel_image():
    ids = segment(np.array([[0.3]]), SegmentationParams(sigma=0.0, k=1.0, min_size=5))
    assert ids.shape == (1, 1) and ids[0, 0] == 0


def test_larger_k_merges_more(rng):
    img = rng.random((20, 20))
    fine = segment(img, SegmentationParams(sigma=0.5, k=0.01, min_size=1))
    coarse = segment(img, SegmentationParams(sigma=0.5, k=500.0, min_size=1))
    assert coarse.max() <= fine.max()


def test_param_validation():
    with pytest.raises(ValidationError):
        SegmentationParams(sigma=-1.0).validate()
    with pytest.raises(ValidationError):
        SegmentationParams(k=0.0).validate()
    with pytest.raises(ValidationError):
        SegmentationParams(min_size=0).validate()
    with pytest.raises(ValidationError):
        segment(np.array([[0.5, 1.5]]), SegmentationParams())


def test_smoothing_zero_sigma_is_identity(rng):
    img = rng.random((6, 6))
    assert np.array_equal(gaussian_smooth(img, 0.0), img)


def test_smoothing_preserves_mean_and_reduces_variance(rng):
    img = rng.random((32, 32))
    out = gaussian_smooth(img, 1.5)
    assert np.isclose(out.mean(), img.mean(), atol=5e-3)
    assert out.var() < img.var()


class TestBoundaryRecall:
    def test_identical_maps_score_one(self, rng):
        ids = (rng.random((9, 9)) > 0.5).astype(int)
        assert component_boundary_recall(ids, ids) == 1.0

    def test_single_segment_prediction_scores_zero(self):
        truth = np.zeros((6, 6), dtype=int)
        truth[:, 3:] = 1
        assert component_boundary_recall(np.zeros((6, 6), dtype=int), truth) == 0.0

    def test_one_pixel_shift_still_scores_one(self):
        truth = np.zeros((6, 6), dtype=int)
        truth[:, 3:] = 1
        pred = np.zeros((6, 6), dtype=int)
        pred[:, 4:] = 1
        assert component_boundary_recall(pred, truth) == 1.0

    def test_uniform_truth_scores_one_by_convention(self):
        pred = np.arange(16).reshape(4, 4)
        assert component_boundary_recall(pred, np.zeros((4, 4), dtype=int)) == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            component_boundary_recall(np.zeros((2, 2), int), np.zeros((3, 3), int))
