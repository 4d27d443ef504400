import numpy as np
import pytest

from femseg.errors import DimensionMismatch, EmptyInput, EmptyMask
from femseg.metrics import CaseMetrics, aggregate, dice_coefficient, hd95, surface_voxels
from femseg.nn.functional import soft_dice_loss
from femseg.volume import LabelMask
from oracles import dice_by_sets, hd95_bruteforce, surface_set


def single(shape, *points):
    m = np.zeros(shape, np.uint8)
    for p in points:
        m[p] = 1
    return m


def random_mask(rng, shape, density):
    m = (rng.random(shape) < density).astype(np.uint8)
    if not m.any():
        m[tuple(rng.integers(0, s) for s in shape)] = 1
    return m


def test_dice_identical_disjoint_half():
    a = single((3, 3, 3), (0, 0, 0), (1, 1, 1))
    assert dice_coefficient(a, a) == 1.0
    assert dice_coefficient(a, single((3, 3, 3), (2, 2, 2))) == 0.0
    assert dice_coefficient(a, single((3, 3, 3), (0, 0, 0), (2, 2, 2))) == 0.5


def test_dice_empty_conventions():
    z = np.zeros((2, 2, 2), np.uint8)
    assert dice_coefficient(z, z) == 1.0
    assert dice_coefficient(z, single((2, 2, 2), (0, 0, 0))) == 0.0


def test_dice_dims_mismatch():
    with pytest.raises(DimensionMismatch):
        dice_coefficient(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_dice_symmetric_and_matches_sets(seed):
    rng = np.random.default_rng(seed)
    a, b = random_mask(rng, (6, 7, 5), 0.3), random_mask(rng, (6, 7, 5), 0.5)
    assert dice_coefficient(a, b) == dice_coefficient(b, a) == dice_by_sets(a, b)


def test_surface_single_voxel():
    m = single((5, 5, 5), (2, 2, 2))
    assert surface_voxels(m).tolist() == [[2, 2, 2]]


def test_surface_solid_block():
    m = np.zeros((5, 5, 5), np.uint8)
    m[1:4, 1:4, 1:4] = 1
    s = surface_voxels(m)
    assert len(s) == 26 and [2, 2, 2] not in s.tolist()
    np.testing.assert_array_equal(s, surface_set(m))


def test_surface_touching_border_counts():
    m = np.ones((3, 3, 3), np.uint8)
    assert len(surface_voxels(m)) == 26


def test_surface_empty():
    assert surface_voxels(np.zeros((3, 3, 3))).shape == (0, 3)


def test_hd95_identical_is_zero(rng):
    m = random_mask(rng, (8, 8, 8), 0.4)
    assert hd95(m, m, (1, 1, 1)) == 0.0


def test_hd95_single_voxels_x():
    a = single((1, 1, 8), (0, 0, 1))
    b = single((1, 1, 8), (0, 0, 4))
    assert hd95(a, b, (1, 1, 1)) == pytest.approx(3.0, abs=1e-12)


def test_hd95_anisotropic_z():
    a = single((4, 1, 1), (1, 0, 0))
    b = single((4, 1, 1), (2, 0, 0))
    assert hd95(a, b, (2, 1, 1)) == pytest.approx(2.0, abs=1e-12)


def test_hd95_uses_mask_spacing():
    a = LabelMask(single((4, 1, 1), (1, 0, 0)), (3.0, 1.0, 1.0))
    b = LabelMask(single((4, 1, 1), (3, 0, 0)), (3.0, 1.0, 1.0))
    assert hd95(a, b) == pytest.approx(6.0)


def test_hd95_empty_raises():
    with pytest.raises(EmptyMask):
        hd95(np.zeros((3, 3, 3)), single((3, 3, 3), (1, 1, 1)), (1, 1, 1))


@pytest.mark.parametrize("seed", range(15))
def test_hd95_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(2, 12, size=3))
    spacing = tuple(rng.uniform(0.3, 3.0, size=3))
    a, b = random_mask(rng, shape, rng.uniform(0.05, 0.6)), random_mask(rng, shape, rng.uniform(0.05, 0.6))
    fast = hd95(a, b, spacing)
    assert abs(fast - hd95_bruteforce(a, b, spacing)) < 1e-9
    assert fast == hd95(b, a, spacing)


def test_hd95_scales_with_spacing(rng):
    a, b = random_mask(rng, (7, 7, 7), 0.2), random_mask(rng, (7, 7, 7), 0.3)
    assert hd95(a, b, (2.5, 2.5, 2.5)) == pytest.approx(2.5 * hd95(a, b, (1, 1, 1)), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_soft_dice_equals_one_minus_dsc_on_binary(seed):
    rng = np.random.default_rng(seed)
    p = random_mask(rng, (6, 6, 6), 0.4)
    g = random_mask(rng, (6, 6, 6), 0.4)
    prob = np.stack([1 - p, p])[None].astype(np.float64)
    loss = float(soft_dice_loss(prob, g[None]).data)
    assert abs(loss - (1 - dice_coefficient(p, g))) <= 1e-5


def test_aggregate_single_case():
    rep = aggregate([CaseMetrics("a", 0.9, 1.5)])
    assert rep.dsc_mean == 0.9 and rep.dsc_std == 0.0 and not rep.std_defined and rep.n == 1


def test_aggregate_two_cases():
    rep = aggregate([CaseMetrics("a", 0.9, 1.0), CaseMetrics("b", 1.0, 3.0)])
    assert rep.dsc_mean == pytest.approx(0.95)
    assert rep.dsc_std == pytest.approx(0.0707106781, abs=1e-9)
    assert rep.hd95_mean == pytest.approx(2.0)


def test_aggregate_permutation_invariant(rng):
    cases = [CaseMetrics(str(i), rng.random(), rng.random() * 3) for i in range(9)]
    a = aggregate(cases)
    b = aggregate(reversed(cases))
    assert (a.dsc_mean, a.dsc_std, a.hd95_mean, a.hd95_std) == (b.dsc_mean, b.dsc_std, b.hd95_mean, b.hd95_std)


def test_aggregate_empty():
    with pytest.raises(EmptyInput):
        aggregate([])
