import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from femseg.errors import ConfigError, GridMismatch
from femseg.patching import PatchSpec, extract, make_grid, sample_random_patch, stitch


def coverage(grid):
    cover = np.zeros(grid.padded_dims, dtype=int)
    pz, py, px = grid.spec.patch_dims
    for z, y, x in grid.offsets:
        assert z + pz <= grid.padded_dims[0] and y + py <= grid.padded_dims[1] and x + px <= grid.padded_dims[2]
        cover[z : z + pz, y : y + py, x : x + px] += 1
    return cover


def test_256_cube_grid_has_27_patches():
    grid = make_grid((256, 256, 256), PatchSpec(128, 64))
    assert len(grid) == 27
    assert sorted({o[0] for o in grid.offsets}) == [0, 64, 128]


def test_clamped_last_offset():
    grid = make_grid((140, 140, 140), PatchSpec(128, 64))
    assert sorted({o[0] for o in grid.offsets}) == [0, 12]
    assert len(grid) == 8
    assert coverage(grid).min() >= 1


def test_exact_fit_single_patch():
    grid = make_grid((128, 128, 128), PatchSpec())
    assert grid.offsets == ((0, 0, 0),)


def test_undersized_volume_padded():
    grid = make_grid((10, 40, 5), PatchSpec(16, 8))
    assert grid.padded_dims == (16, 40, 16)
    assert grid.padding == (6, 0, 11)


@settings(max_examples=60, deadline=None)
@given(
    st.tuples(*[st.integers(1, 300)] * 3),
    st.integers(1, 64),
    st.floats(0, 0.95),
)
def test_coverage_property(dims, patch, frac):
    spec = PatchSpec(patch, min(int(patch * frac), patch - 1))
    grid = make_grid(dims, spec)
    for axis in range(3):
        offs = sorted({o[axis] for o in grid.offsets})
        covered = np.zeros(grid.padded_dims[axis], bool)
        for o in offs:
            covered[o : o + patch] = True
        assert covered.all()


def test_invalid_spec():
    with pytest.raises(ConfigError):
        PatchSpec(16, 16)
    with pytest.raises(ConfigError):
        PatchSpec(16, -1)


def test_random_patch_fits_and_is_seeded():
    spec = PatchSpec(8, 4)
    a = [sample_random_patch((20, 9, 8), spec, np.random.default_rng(5)) for _ in range(3)]
    assert a[0] == a[1] == a[2]
    rng = np.random.default_rng(0)
    for _ in range(200):
        z, y, x = sample_random_patch((20, 9, 8), spec, rng)
        assert 0 <= z <= 12 and 0 <= y <= 1 and x == 0


def test_random_patch_exact_fit():
    rng = np.random.default_rng(1)
    assert {sample_random_patch((8, 8, 8), PatchSpec(8, 4), rng) for _ in range(20)} == {(0, 0, 0)}


def test_random_patch_uniform_over_octants():
    rng = np.random.default_rng(7)
    spec = PatchSpec(8, 4)
    counts = np.zeros(8)
    for _ in range(10_000):
        z, y, x = sample_random_patch((40, 40, 40), spec, rng)  # offsets 0..32
        counts[(z > 16) * 4 + (y > 16) * 2 + (x > 16)] += 1
    # 0..16 holds 17 of 33 values per axis
    p = np.array([17 if b == 0 else 16 for b in (0, 1)])
    probs = np.array([p[i >> 2 & 1] * p[i >> 1 & 1] * p[i & 1] for i in range(8)], dtype=float) / 33**3
    assert stats.chisquare(counts, probs * counts.sum()).pvalue > 0.01


def test_stitch_constant():
    grid = make_grid((30, 20, 25), PatchSpec(16, 8))
    out = stitch([np.full((16, 16, 16), 0.3)] * len(grid), grid)
    assert out.shape == (30, 20, 25)
    np.testing.assert_allclose(out, 0.3, rtol=1e-12)


def test_extract_stitch_identity(rng):
    field = (rng.random((37, 21, 50)) > 0.5).astype(float)
    grid = make_grid(field.shape, PatchSpec(16, 6))
    np.testing.assert_array_equal(stitch(extract(field, grid), grid), field)


def test_stitch_overlap_mean():
    grid = make_grid((1, 1, 6), PatchSpec((1, 1, 4), (0, 0, 2)))
    assert grid.offsets == ((0, 0, 0), (0, 0, 2))
    out = stitch([np.full((1, 1, 4), 0.2), np.full((1, 1, 4), 0.8)], grid)
    np.testing.assert_allclose(out.ravel(), [0.2, 0.2, 0.5, 0.5, 0.8, 0.8])


def test_stitch_wrong_count():
    grid = make_grid((20, 20, 20), PatchSpec(16, 8))
    with pytest.raises(GridMismatch):
        stitch([np.zeros((16, 16, 16))], grid)


def test_stitch_stays_in_unit_interval(rng):
    grid = make_grid((33, 17, 40), PatchSpec(16, 4))
    out = stitch([rng.random((16, 16, 16)) for _ in grid.offsets], grid)
    assert 0 <= out.min() and out.max() <= 1
