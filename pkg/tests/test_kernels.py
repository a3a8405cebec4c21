"""Backend agreement: the numba kernels and their numpy fallbacks must match."""

import numpy as np
import pytest

from alda import kernels
from alda.backend import NUMBA_ENABLED, backend_name


def test_backend_name_reports_active_path():
    assert backend_name() == ("numba" if NUMBA_ENABLED else "numpy")


class TestPairwiseSqDists:
    def test_implementations_agree(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(17, 5)), rng.normal(size=(13, 5))
        a = kernels.pairwise_sq_dists_numpy(x, y)
        b = kernels.pairwise_sq_dists_loops(x, y)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_known_values(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        d = kernels.pairwise_sq_dists(x, x)
        np.testing.assert_allclose(d, [[0.0, 25.0], [25.0, 0.0]], atol=1e-12)


class TestRbfKernelSums:
    def test_implementations_agree(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=(20, 4)), rng.normal(size=(15, 4))
        a = kernels.rbf_kernel_sums_numpy(x, y, gamma=0.37)
        b = kernels.rbf_kernel_sums_loops(x, y, 0.37)
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_identical_points_saturate(self):
        x = np.zeros((4, 3))
        sxx, syy, sxy = kernels.rbf_kernel_sums(x, x, gamma=1.0)
        assert sxx == pytest.approx(4 * 3)  # 12 off-diagonal pairs at k=1
        assert sxy == pytest.approx(16.0)


class TestBilinearResize:
    def test_implementations_agree(self):
        rng = np.random.default_rng(2)
        imgs = rng.uniform(size=(3, 16, 16))
        a = kernels.bilinear_resize_numpy(imgs, 28, 28)
        b = kernels.bilinear_resize_loops(imgs, 28, 28)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)

    def test_constant_image_stays_constant(self):
        imgs = np.full((2, 16, 16), 0.7)
        out = kernels.bilinear_resize(imgs, 28, 28)
        np.testing.assert_allclose(out, 0.7, atol=1e-12)

    def test_same_size_is_identity(self):
        rng = np.random.default_rng(3)
        imgs = rng.uniform(size=(2, 9, 9))
        np.testing.assert_allclose(kernels.bilinear_resize(imgs, 9, 9), imgs, atol=1e-12)

    def test_hand_computed_upscale(self):
        # 2x2 -> 3x3 corner-aligned: center is the mean of the four corners
        img = np.array([[[0.0, 1.0], [2.0, 3.0]]])
        out = kernels.bilinear_resize(img, 3, 3)[0]
        np.testing.assert_allclose(
            out, [[0.0, 0.5, 1.0], [1.0, 1.5, 2.0], [2.0, 2.5, 3.0]], atol=1e-12
        )

    def test_corners_preserved(self):
        rng = np.random.default_rng(4)
        imgs = rng.uniform(size=(1, 16, 16))
        out = kernels.bilinear_resize(imgs, 28, 28)
        for (i, j), (oi, oj) in zip([(0, 0), (0, 15), (15, 0), (15, 15)],
                                    [(0, 0), (0, 27), (27, 0), (27, 27)]):
            assert out[0, oi, oj] == pytest.approx(imgs[0, i, j], abs=1e-12)

    def test_bad_sizes_rejected(self):
        with pytest.raises(ValueError):
            kernels.bilinear_resize(np.zeros((1, 16, 16)), 1, 28)
        with pytest.raises(ValueError):
            kernels.bilinear_resize(np.zeros((16, 16)), 28, 28)
