"""Hot numeric kernels with numba and pure-numpy implementations.

Everything else in the package is vectorized numpy (matrix products go
through BLAS and gain nothing from JIT); the kernels here are the genuinely
loop-shaped pieces: pairwise-distance accumulation for the RBF two-sample
statistic and per-pixel bilinear image resizing.  Both implementations of
each kernel are importable so the benchmark and the agreement tests can
compare them; the public name dispatches on the active backend.
"""

import numpy as np

from .backend import NUMBA_ENABLED, njit

__all__ = [
    "pairwise_sq_dists",
    "rbf_kernel_sums",
    "bilinear_resize",
]


# -- pairwise squared distances -------------------------------------------


def pairwise_sq_dists_numpy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """All-pairs squared euclidean distances, shape (len(x), len(y))."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    xx = np.einsum("ij,ij->i", x, x)
    yy = np.einsum("ij,ij->i", y, y)
    d = xx[:, None] + yy[None, :] - 2.0 * (x @ y.T)
    # cancellation can leave tiny negatives
    np.maximum(d, 0.0, out=d)
    return d


@njit(cache=True)
def pairwise_sq_dists_loops(x, y):
    m, dim = x.shape
    n = y.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(dim):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


# -- RBF kernel sums for the unbiased MMD^2 estimator ----------------------


def rbf_kernel_sums_numpy(x, y, gamma):
    """Off-diagonal within-sample and full cross-sample RBF kernel sums.

    Returns (sxx, syy, sxy) with
      sxx = sum_{i != j} exp(-gamma * |x_i - x_j|^2)   (and syy likewise),
      sxy = sum_{i, j}   exp(-gamma * |x_i - y_j|^2).
    """
    kxx = np.exp(-gamma * pairwise_sq_dists_numpy(x, x))
    kyy = np.exp(-gamma * pairwise_sq_dists_numpy(y, y))
    kxy = np.exp(-gamma * pairwise_sq_dists_numpy(x, y))
    sxx = kxx.sum() - np.trace(kxx)
    syy = kyy.sum() - np.trace(kyy)
    return sxx, syy, kxy.sum()


@njit(cache=True)
def rbf_kernel_sums_loops(x, y, gamma):
    m, dim = x.shape
    n = y.shape[0]
    sxx = 0.0
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            acc = 0.0
            for k in range(dim):
                diff = x[i, k] - x[j, k]
                acc += diff * diff
            sxx += np.exp(-gamma * acc)
    syy = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            acc = 0.0
            for k in range(dim):
                diff = y[i, k] - y[j, k]
                acc += diff * diff
            syy += np.exp(-gamma * acc)
    sxy = 0.0
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(dim):
                diff = x[i, k] - y[j, k]
                acc += diff * diff
            sxy += np.exp(-gamma * acc)
    return sxx, syy, sxy


# -- bilinear image resize --------------------------------------------------


def bilinear_resize_numpy(images, out_h, out_w):
    """Corner-aligned bilinear resize of an (n, h, w) image stack."""
    images = np.asarray(images, dtype=np.float64)
    n, h, w = images.shape
    ys = np.linspace(0.0, h - 1.0, out_h)
    xs = np.linspace(0.0, w - 1.0, out_w)
    y0 = np.minimum(ys.astype(np.int64), h - 2)
    x0 = np.minimum(xs.astype(np.int64), w - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = images[:, y0[:, None], x0[None, :]]
    tr = images[:, y0[:, None], x0[None, :] + 1]
    bl = images[:, y0[:, None] + 1, x0[None, :]]
    br = images[:, y0[:, None] + 1, x0[None, :] + 1]
    top = tl * (1.0 - fx) + tr * fx
    bot = bl * (1.0 - fx) + br * fx
    return top * (1.0 - fy) + bot * fy


@njit(cache=True)
def bilinear_resize_loops(images, out_h, out_w):
    n, h, w = images.shape
    out = np.empty((n, out_h, out_w), dtype=np.float64)
    for img in range(n):
        for i in range(out_h):
            sy = i * (h - 1.0) / (out_h - 1.0)
            y0 = min(int(sy), h - 2)
            fy = sy - y0
            for j in range(out_w):
                sx = j * (w - 1.0) / (out_w - 1.0)
                x0 = min(int(sx), w - 2)
                fx = sx - x0
                top = images[img, y0, x0] * (1.0 - fx) + images[img, y0, x0 + 1] * fx
                bot = (
                    images[img, y0 + 1, x0] * (1.0 - fx)
                    + images[img, y0 + 1, x0 + 1] * fx
                )
                out[img, i, j] = top * (1.0 - fy) + bot * fy
    return out


# -- dispatch ----------------------------------------------------------------


def pairwise_sq_dists(x, y):
    if NUMBA_ENABLED:
        return pairwise_sq_dists_loops(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
        )
    return pairwise_sq_dists_numpy(x, y)


def rbf_kernel_sums(x, y, gamma):
    if NUMBA_ENABLED:
        return rbf_kernel_sums_loops(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            float(gamma),
        )
    return rbf_kernel_sums_numpy(x, y, gamma)


def bilinear_resize(images, out_h, out_w):
    if out_h < 2 or out_w < 2:
        raise ValueError("output size must be at least 2x2")
    images = np.ascontiguousarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] < 2 or images.shape[2] < 2:
        raise ValueError("expected an (n, h, w) stack with h, w >= 2")
    if NUMBA_ENABLED:
        return bilinear_resize_loops(images, int(out_h), int(out_w))
    return bilinear_resize_numpy(images, out_h, out_w)
