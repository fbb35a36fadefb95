import os
import subprocess
import sys

import numpy as np
import pytest

from gsv_interp import _kernels
from gsv_interp.linalg import SparseMatrix


def _random_csr(rng, rows, cols, density=0.3):
    d = rng.standard_normal((rows, cols)) * (rng.random((rows, cols)) < density)
    d[rows // 2] = 0.0  # at least one empty row
    return SparseMatrix.from_dense(d), d


@pytest.mark.parametrize("name", _kernels.available_backends())
def test_kernels_match_dense(rng, name):
    mv, rmv = _kernels.get_backend(name)
    a, d = _random_csr(rng, 13, 9)
    x, w = rng.standard_normal(9), rng.standard_normal(13)
    np.testing.assert_allclose(mv(a.indptr, a.indices, a.data, x, 13), d @ x, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(rmv(a.indptr, a.indices, a.data, w, 9), d.T @ w, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("name", _kernels.available_backends())
def test_kernels_empty_matrix(name):
    mv, rmv = _kernels.get_backend(name)
    a = SparseMatrix.zeros((3, 2))
    np.testing.assert_array_equal(mv(a.indptr, a.indices, a.data, np.ones(2), 3), np.zeros(3))
    np.testing.assert_array_equal(rmv(a.indptr, a.indices, a.data, np.ones(3), 2), np.zeros(2))


def test_backends_agree_exactly(rng):
    names = _kernels.available_backends()
    if len(names) < 2:
        pytest.skip("compiled kernels not built")
    a, _ = _random_csr(rng, 200, 150, 0.05)
    x = rng.standard_normal(150)
    outs = [f[0](a.indptr, a.indices, a.data, x, 200) for f in map(_kernels.get_backend, names)]
    # same summation order row by row
    np.testing.assert_array_equal(outs[0], outs[1])


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.get_backend("fortran")


def test_pure_env_forces_python():
    env = dict(os.environ, GSV_INTERP_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "from gsv_interp import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
