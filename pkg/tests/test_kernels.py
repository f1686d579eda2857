import numpy as np
import pytest

from uncseg import kernels
from uncseg.kernels import _pykernels

def _brute_im2col(x):
    C, B, X, Y, Z = x.shape
    pad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.empty((C, 27, B, X, Y, Z), x.dtype)
    k = 0
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                out[:, k] = pad[:, :, 1 + dx:1 + dx + X, 1 + dy:1 + dy + Y, 1 + dz:1 + dz + Z]
                k += 1
    return out


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_bit_identical(dtype):
    compiled = pytest.importorskip("uncseg.kernels._ckernels", reason="compiled kernels not built")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 2, 4, 5, 6)).astype(dtype)
    cols = rng.standard_normal((3, 27, 2, 4, 5, 6)).astype(dtype)
    assert np.array_equal(_pykernels.im2col3(x), compiled.im2col3(x))
    assert np.array_equal(_pykernels.col2im3(cols), compiled.col2im3(cols))
    assert np.array_equal(_pykernels.box_sum3(x), compiled.box_sum3(x))


def test_im2col_matches_brute_force():
    x = np.random.default_rng(1).standard_normal((2, 1, 3, 4, 5))
    assert np.array_equal(_pykernels.im2col3(x), _brute_im2col(x))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2, 3, 4, 5))
    c = rng.standard_normal((2, 27, 2, 3, 4, 5))
    lhs = (kernels.im2col3(x) * c).sum()
    rhs = (x * kernels.col2im3(c)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_box_sum_interior_and_corner():
    x = np.zeros((5, 5, 5))
    x[2, 2, 2] = 1
    s = kernels.box_sum3(x)
    assert s[1:4, 1:4, 1:4].min() == 1 and s.sum() == 27
    ones = kernels.box_sum3(np.ones((4, 4, 4)))
    assert ones[0, 0, 0] == 8 and ones[1, 1, 1] == 27


def test_backend_selection_reported():
    assert kernels.BACKEND in kernels.available_backends()
