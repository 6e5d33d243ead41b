import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segmicro import augment as A
from segmicro.errors import ConfigError


def sample(rng, h=32, w=32, classes=3):
    return rng.random((h, w)).astype(np.float32), rng.integers(0, classes, (h, w)).astype(np.uint8)


class TestNormalize:
    def test_8bit(self):
        out = A.normalize(np.array([0, 51, 255], np.uint8))
        np.testing.assert_allclose(out, [0.0, 0.2, 1.0], rtol=1e-6)

    def test_16bit(self):
        assert A.normalize(np.array([65535], np.uint16))[0] == 1.0

    def test_constant_minmax(self):
        np.testing.assert_array_equal(A.normalize(np.full((3, 3), 7.0), "minmax"), 0.0)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            A.normalize(np.zeros(3), "gamma")


class TestEqualize:
    def test_uniform_histogram_is_identity(self):
        img = ((np.arange(256) + 0.5) / 256).reshape(16, 16)
        assert np.max(np.abs(A.equalize(img) - img)) <= 1 / 255 + 1e-6

    def test_constant_image(self):
        out = A.equalize(np.full((4, 4), 0.3))
        assert np.all(out == out.flat[0])

    def test_toy_table(self):
        # bins 0, 128, 255 hold 2, 1, 1 pixels -> cdf 0.5, 0.75, 1.0 -> (cdf - 0.5) / 0.5
        out = A.equalize(np.array([[0.0, 0.0], [0.5, 1.0]]))
        np.testing.assert_allclose(out, [[0.0, 0.0], [0.5, 1.0]])

    def test_multichannel(self, rng):
        img = rng.random((8, 8, 2))
        out = A.equalize(img)
        np.testing.assert_array_equal(out[..., 1], A.equalize(img[..., 1]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_bounded(self, seed):
        img = np.random.default_rng(seed).random((12, 12)) ** 3
        out = A.equalize(img)
        order = np.argsort(img, axis=None)
        assert np.all(np.diff(out.ravel()[order]) >= 0)
        assert out.min() >= 0 and out.max() <= 1


class TestFlip:
    def test_always(self, rng):
        img, msk = sample(rng, 4, 5)
        out, m = A.flip(img, msk, rng, 1.0)
        np.testing.assert_array_equal(out, img[::-1, ::-1])
        np.testing.assert_array_equal(m, msk[::-1, ::-1])

    def test_never(self, rng):
        img, msk = sample(rng, 4, 5)
        out, m = A.flip(img, msk, rng, 0.0)
        np.testing.assert_array_equal(out, img)
        np.testing.assert_array_equal(m, msk)

    def test_involution(self, rng):
        img, msk = sample(rng, 6, 6)
        once = A.flip(img, msk, np.random.default_rng(3), 0.5)
        twice = A.flip(*once, np.random.default_rng(3), 0.5)
        np.testing.assert_array_equal(twice[0], img)
        np.testing.assert_array_equal(twice[1], msk)


class TestWarp:
    @pytest.mark.parametrize("amp", [10.0, 23.0, 49.5])
    def test_offset_spot_values(self, amp):
        offs = A.warp_offsets(181, amp, 1.0)
        assert offs[90] == int(amp)
        assert offs[0] == int(amp / 2)

    @pytest.mark.parametrize("f", [0.5, 1.3, 2.0])
    def test_offset_at_zero_any_frequency(self, f):
        assert A.warp_offsets(5, 31.0, f)[0] == 15

    def test_rows_shift_right_with_fill(self):
        img = np.arange(1, 13, dtype=np.float32).reshape(3, 4)
        msk = np.full((3, 4), 2, np.uint8)
        out, m = A.warp_pass(img, msk, amplitude=4.0, frequency=1.0, vertical=False)
        # offsets for rows 0, 1, 2 at A=4, f=1 are all 2
        np.testing.assert_array_equal(out, [[0, 0, 1, 2], [0, 0, 5, 6], [0, 0, 9, 10]])
        np.testing.assert_array_equal(m[:, :2], 0)
        np.testing.assert_array_equal(m[:, 2:], 2)

    def test_vertical_is_transposed_horizontal(self, rng):
        img, msk = sample(rng, 10, 7)
        v = A.warp_pass(img, msk, 6.0, 1.7, vertical=True)
        h = A.warp_pass(img.T, msk.T, 6.0, 1.7, vertical=False)
        np.testing.assert_array_equal(v[0], h[0].T)
        np.testing.assert_array_equal(v[1], h[1].T)

    def test_no_interpolation(self, rng):
        img, msk = sample(rng)
        out, m = A.warp(img, msk, rng, 1.0)
        assert set(np.unique(out)) <= set(np.unique(img)) | {0.0}
        assert set(np.unique(m)) <= set(np.unique(msk)) | {0}


class TestRotate:
    def test_zero_is_identity(self, rng):
        img, msk = sample(rng)
        out, m = A.rotate_by(img, msk, 0.0)
        np.testing.assert_array_equal(out, img)
        np.testing.assert_array_equal(m, msk)

    def test_cross_swaps_arms(self):
        # long horizontal arm, short vertical arm
        m = np.zeros((9, 9), np.uint8)
        m[4, 1:8] = 1
        m[3:6, 4] = 1
        img = m.astype(np.float32)
        out, mr = A.rotate_by(img, m, 90.0)
        np.testing.assert_array_equal(mr, m.T)
        np.testing.assert_allclose(out, img.T, atol=1e-5)

    def test_counter_clockwise(self):
        m = np.zeros((9, 9), np.uint8)
        m[4, 7] = 1
        _, mr = A.rotate_by(m.astype(np.float32), m, 90.0)
        assert mr[1, 4] == 1 and mr.sum() == 1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-180, 180))
    def test_label_closure(self, seed, angle):
        msk = np.random.default_rng(seed).choice(np.array([0, 2, 3], np.uint8), (16, 16))
        _, m = A.rotate_by(np.zeros((16, 16), np.float32), msk, angle)
        assert set(np.unique(m)) <= {0, 2, 3}


def bilinear_upscale2(a):
    """8x8 half-pixel-aligned upscale of a 4x4 array, by separable np.interp."""
    coords = (np.arange(8) + 0.5) / 2 - 0.5
    grid = np.arange(a.shape[0])
    rows = np.stack([np.interp(coords, grid, a[i]) for i in range(a.shape[0])])
    return np.stack([np.interp(coords, grid, rows[:, j]) for j in range(8)], axis=1)


class TestZoom:
    def test_identity(self, rng):
        img, msk = sample(rng, 8, 8)
        out, m = A.zoom_by(img, msk, 1.0)
        np.testing.assert_array_equal(out, img)

    def test_double_is_centre_of_upscale(self, rng):
        img = rng.random((4, 4)).astype(np.float32)
        out, _ = A.zoom_by(img, np.zeros((4, 4), np.uint8), 2.0)
        np.testing.assert_allclose(out, bilinear_upscale2(img)[2:6, 2:6], atol=1e-6)

    def test_shrink_pads_with_background(self):
        img = np.ones((16, 16), np.float32)
        msk = np.ones((16, 16), np.uint8)
        out, m = A.zoom_by(img, msk, 0.5)
        assert m[0, 0] == 0 and m[8, 8] == 1 and out[0, 0] == 0

    @pytest.mark.parametrize("factor", [0.7, 1.0, 1.3])
    def test_target_shape(self, rng, factor):
        img, msk = sample(rng, 20, 24)
        out, m = A.zoom_by(img, msk, factor, (16, 16))
        assert out.shape == m.shape == (16, 16)


class TestRescale:
    def test_downscale_shape_and_labels(self, rng):
        img, msk = sample(rng, 32, 32)
        out, m = A.rescale(img, msk, (16, 8))
        assert out.shape == m.shape == (16, 8)
        assert set(np.unique(m)) <= set(np.unique(msk))

    def test_integer_upscale_of_mask_repeats(self):
        m = np.array([[0, 1], [2, 3]], np.uint8)
        _, out = A.rescale(np.zeros((2, 2), np.float32), m, (4, 4))
        np.testing.assert_array_equal(out, np.kron(m, np.ones((2, 2), np.uint8)))


class TestTransform:
    def test_neutral_policy_is_identity(self, rng):
        img, msk = sample(rng)
        out, m = A.transform(img, msk, A.AugmentPolicy.neutral(), seed=9)
        np.testing.assert_array_equal(out, img)
        np.testing.assert_array_equal(m, msk)

    def test_fixed_seed_is_byte_reproducible(self, rng):
        img, msk = sample(rng)
        p = A.AugmentPolicy.microscopy()
        a, b = A.transform(img, msk, p, 42), A.transform(img, msk, p, 42)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
        c = A.transform(img, msk, p, 43)
        assert c[0].tobytes() != a[0].tobytes()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_label_closure_and_shape(self, seed):
        r = np.random.default_rng(seed)
        img = r.random((24, 40)).astype(np.float32)
        msk = r.choice(np.array([0, 1, 3], np.uint8), (24, 40))
        out, m = A.transform(img, msk, A.AugmentPolicy.microscopy(target_size=(16, 16)), seed)
        assert out.shape == m.shape == (16, 16)
        assert out.dtype == np.float32
        assert set(np.unique(m)) <= {0, 1, 3}

    def test_multichannel(self, rng):
        img = rng.random((16, 16, 4)).astype(np.float32)
        msk = rng.integers(0, 4, (16, 16)).astype(np.uint8)
        out, m = A.transform(img, msk, A.AugmentPolicy.brats(), 5)
        assert out.shape == (16, 16, 4) and m.shape == (16, 16)


class TestPolicy:
    def test_round_trip(self):
        p = A.AugmentPolicy.microscopy(target_size=(64, 64))
        assert A.AugmentPolicy.from_dict(p.to_dict()) == p

    @pytest.mark.parametrize("bad", [{"flip_prob": 1.5}, {"zoom_range": (1.2, 0.8)},
                                     {"max_rotation_deg": -1}, {"target_size": (0, 4)}])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            A.AugmentPolicy(**bad)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            A.AugmentPolicy.from_dict({"shear": 0.1})
