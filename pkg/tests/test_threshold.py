import numpy as np
import pytest

import cttriage as ct
from cttriage.errors import EmptyMask
from cttriage.threshold import ThresholdConfig, blur_binary, connected_components_3d, threshold_segment
from cttriage.volume import Mask, Volume

from oracles import flood_fill_components, naive_gaussian_blur, reference_threshold_segment


def random_fixture(rng, shape=(16, 16, 16)):
    """Random HU field plus an ellipsoidal lung mask."""
    hu = rng.uniform(-1100, 400, size=shape).astype(np.float32)
    zz, yy, xx = np.ogrid[: shape[0], : shape[1], : shape[2]]
    c = [s / 2 - 0.5 for s in shape]
    r = [rng.uniform(0.3, 0.45) * s for s in shape]
    lungs = (((zz - c[0]) / r[0]) ** 2 + ((yy - c[1]) / r[1]) ** 2
             + ((xx - c[2]) / r[2]) ** 2) <= 1.0
    return (Volume(data=hu, spacing=(1, 1, 1)),
            Mask(data=lungs.astype(np.uint8), spacing=(1, 1, 1)))


def test_lesion_level_included_parenchyma_excluded():
    s = ct.generate_phantom(ct.PhantomSpec(lesion_fraction=(0.3, 0.1), seed=5))
    step1 = ((s.volume.data >= -700) & (s.volume.data <= 300) & (s.lungs.data > 0))
    lesion = s.lesion.data.astype(bool)
    assert step1[lesion].all()  # -700 <= -400 <= 300 by construction
    parenchyma = (s.lungs.data > 0) & ~lesion
    assert step1[parenchyma].mean() < 0.01  # -850 is below the window


def test_isolated_voxel_removed_by_component_filter():
    hu = np.full((12, 12, 12), -900.0, dtype=np.float32)
    hu[6, 6, 6] = -400.0  # one in-window voxel
    lungs = np.ones((12, 12, 12), dtype=np.uint8)
    cfg = ThresholdConfig(sigma=1e-6)  # keep step 2 out of the way
    v_min = cfg.v_min_fraction * lungs.sum()
    assert 1 < v_min
    out = threshold_segment(Volume(data=hu, spacing=(1, 1, 1)),
                            Mask(data=lungs, spacing=(1, 1, 1)), cfg)
    assert out.count == 0


def test_matches_naive_reference():
    rng = np.random.default_rng(11)
    cfg = ThresholdConfig()
    for _ in range(5):
        v, lungs = random_fixture(rng)
        expected = reference_threshold_segment(
            v.data, lungs.data, cfg.hu_min, cfg.hu_max, cfg.sigma, cfg.v_min_fraction)
        out = threshold_segment(v, lungs, cfg)
        np.testing.assert_array_equal(out.data, expected)


def test_empty_lungs_raise():
    v = Volume(data=np.zeros((4, 4, 4), dtype=np.float32), spacing=(1, 1, 1))
    with pytest.raises(EmptyMask):
        threshold_segment(v, Mask(data=np.zeros((4, 4, 4), dtype=np.uint8),
                                  spacing=(1, 1, 1)))


def test_output_subset_of_lungs():
    rng = np.random.default_rng(12)
    for _ in range(5):
        v, lungs = random_fixture(rng)
        out = threshold_segment(v, lungs, ThresholdConfig(sigma=1.0))
        assert not np.any(out.data & ~lungs.data)


def test_raising_hu_min_never_adds_voxels():
    rng = np.random.default_rng(13)
    v, lungs = random_fixture(rng)
    previous = None
    for hu_min in (-900.0, -700.0, -500.0):
        step1 = (v.data >= hu_min) & (v.data <= 300.0) & (lungs.data > 0)
        if previous is not None:
            assert not np.any(step1 & ~previous)
        previous = step1


def test_sigma_zero_limit_is_identity():
    rng = np.random.default_rng(14)
    v, lungs = random_fixture(rng)
    cfg = ThresholdConfig(sigma=1e-6, v_min_fraction=0.0)
    step1 = (v.data >= cfg.hu_min) & (v.data <= cfg.hu_max) & (lungs.data > 0)
    out = threshold_segment(v, lungs, cfg)
    np.testing.assert_array_equal(out.data.astype(bool), step1)


def test_surviving_components_respect_v_min():
    rng = np.random.default_rng(15)
    for _ in range(5):
        v, lungs = random_fixture(rng)
        cfg = ThresholdConfig(sigma=0.8, v_min_fraction=0.01)
        out = threshold_segment(v, lungs, cfg)
        _, sizes = connected_components_3d(out)
        v_min = cfg.v_min_fraction * lungs.count
        assert all(s >= v_min for s in sizes)


def test_blur_matches_naive_convolution():
    rng = np.random.default_rng(16)
    field = (rng.random((10, 10, 10)) > 0.5).astype(np.float64)
    for sigma in (0.6, 1.5, 4.0):
        np.testing.assert_allclose(blur_binary(field, sigma),
                                   naive_gaussian_blur(field, sigma), atol=1e-12)


def test_components_two_cubes():
    m = np.zeros((8, 8, 8), dtype=np.uint8)
    m[0:2, 0:2, 0:2] = 1
    m[5:7, 5:7, 5:7] = 1
    labels, sizes = connected_components_3d(m)
    assert len(sizes) == 2
    assert sorted(sizes.tolist()) == [8, 8]


def test_components_empty():
    _, sizes = connected_components_3d(np.zeros((4, 4, 4), dtype=np.uint8))
    assert len(sizes) == 0


@pytest.mark.parametrize("connectivity", [6, 26])
def test_components_match_flood_fill(connectivity):
    rng = np.random.default_rng(17)
    for _ in range(5):
        m = (rng.random((16, 16, 16)) > 0.7).astype(np.uint8)
        labels, sizes = connected_components_3d(m, connectivity=connectivity)
        oracle = flood_fill_components(m, connectivity=connectivity)
        assert len(sizes) == len(oracle)
        assert sorted(sizes.tolist()) == sorted(len(c) for c in oracle)
        # same partition, not just same sizes: every oracle component maps
        # to exactly one label
        for comp in oracle:
            values = {labels[idx] for idx in comp}
            assert len(values) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        ThresholdConfig(hu_min=300, hu_max=-700)
    with pytest.raises(ValueError):
        ThresholdConfig(sigma=0)
    with pytest.raises(ValueError):
        ThresholdConfig(v_min_fraction=1.5)
