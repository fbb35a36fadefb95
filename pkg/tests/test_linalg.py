import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsv_interp.linalg import (
    BreakdownError,
    DimensionError,
    LayerSchedule,
    LinearOperator,
    SingularMatrixError,
    SparseMatrix,
    aslinearoperator,
    bicg_solve,
    cg_solve,
    lu_solve,
    matvec,
)
from gsv_interp.verify import random_problem
from gsv_interp.mapsolver import interpolation_operator


def test_matvec_identity(backend):
    np.testing.assert_array_equal(matvec(SparseMatrix.identity(3), [1.0, 2.0, 3.0]), [1, 2, 3])


def test_matvec_zero(backend):
    np.testing.assert_array_equal(matvec(SparseMatrix.zeros((2, 2)), [5.0, 7.0]), [0, 0])


def test_matvec_hand_values(backend):
    a = [[0.5, 0.5], [0.25, 0.75]]
    np.testing.assert_allclose(matvec(SparseMatrix.from_dense(a), [2.0, 4.0]), [3.0, 3.5])
    np.testing.assert_allclose(matvec(np.array(a), [2.0, 4.0]), [3.0, 3.5])


def test_matvec_dimension_mismatch():
    with pytest.raises(DimensionError):
        matvec(SparseMatrix.identity(3), np.ones(2))
    with pytest.raises(DimensionError):
        matvec(np.eye(3), np.ones(4))


def test_from_triplets_sums_duplicates():
    a = SparseMatrix.from_triplets((2, 3), [1, 0, 1, 1], [2, 0, 2, 0], [1.0, 4.0, 2.0, 5.0])
    np.testing.assert_array_equal(a.to_dense(), [[4, 0, 0], [5, 0, 3]])
    np.testing.assert_array_equal(a.indptr, [0, 1, 3])
    np.testing.assert_array_equal(a.indices, [0, 0, 2])


def test_sparse_rejects_bad_storage():
    with pytest.raises(ValueError):
        SparseMatrix((2, 2), [0, 2, 2], [1, 0], [1.0, 1.0])
    with pytest.raises(ValueError):
        SparseMatrix((1, 2), [0, 1], [2], [1.0])
    with pytest.raises(ValueError):
        SparseMatrix((1, 1), [0, 1], [0], [np.nan])


def test_sparse_is_read_only():
    a = SparseMatrix.identity(2)
    with pytest.raises(ValueError):
        a.data[0] = 3.0


def test_transpose_and_rdot(rng, backend):
    d = rng.standard_normal((7, 5)) * (rng.random((7, 5)) < 0.4)
    a = SparseMatrix.from_dense(d)
    np.testing.assert_array_equal(a.T.to_dense(), d.T)
    w = rng.standard_normal(7)
    np.testing.assert_allclose(a.rdot(w), d.T @ w, rtol=1e-13, atol=1e-14)


def test_lu_identity():
    b = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_array_equal(lu_solve(np.eye(4), b), b)


def test_lu_hand_solved():
    x = lu_solve([[4.0, -2.0], [-2.0, 4.0]], [2.0, 0.0])
    np.testing.assert_allclose(x, [2 / 3, 1 / 3], rtol=1e-15)


def test_lu_round_trip(rng):
    a = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    x = rng.standard_normal(8)
    assert np.linalg.norm(lu_solve(a, a @ x) - x) / np.linalg.norm(x) <= 1e-10


def test_lu_singular_reports_pivot():
    with pytest.raises(SingularMatrixError) as err:
        lu_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])
    assert err.value.pivot == 1


def test_lu_dimension_errors():
    with pytest.raises(DimensionError):
        lu_solve(np.ones((2, 3)), np.ones(2))
    with pytest.raises(DimensionError):
        lu_solve(np.eye(2), np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_lu_recovers_x(n, seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((n, n)) + n * np.eye(n)
    x = r.standard_normal(n)
    assert np.linalg.norm(lu_solve(a, a @ x) - x) <= 1e-9 * np.linalg.norm(x)


def test_cg_identity_one_iteration():
    res = cg_solve(np.eye(2), [3.0, -1.0])
    np.testing.assert_allclose(res.x, [3.0, -1.0])
    assert res.iters == 1


def test_cg_g_step_system():
    # (2 mu L + I / gamma) v = u / gamma with mu = 1, gamma = 0.5
    lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
    res = cg_solve(2 * lap + 2 * np.eye(2), 2 * np.array([1.0, 0.0]))
    np.testing.assert_allclose(res.x, [2 / 3, 1 / 3], rtol=1e-12)


def test_cg_spd_vs_lu(rng):
    a = rng.standard_normal((16, 16))
    a = a.T @ a + np.eye(16)
    b = rng.standard_normal(16)
    res = cg_solve(a, b, max_iters=64, tol=1e-13)
    ref = lu_solve(a, b)
    assert np.linalg.norm(res.x - ref) / np.linalg.norm(ref) <= 1e-8
    assert res.residual <= 1e-12


def test_cg_zero_rhs():
    res = cg_solve(np.eye(3), np.zeros(3))
    assert res.iters == 0 and not res.x.any()


def test_bicg_identity_one_iteration():
    res = bicg_solve(np.eye(4), [1.0, 2.0, 3.0, 4.0])
    np.testing.assert_allclose(res.x, [1, 2, 3, 4])
    assert res.iters == 1


def test_bicg_asymmetric_vs_lu(rng, backend):
    pr = random_problem(rng, 8)
    op = interpolation_operator(pr.theta, pr.p)
    rhs = pr.theta.apply(pr.y)
    res = bicg_solve(op, rhs, tol=1e-12)
    ref = lu_solve(op.to_dense(), rhs)
    assert np.linalg.norm(res.x - ref) / np.linalg.norm(ref) <= 1e-6


def test_bicg_replayed_schedule_is_bitwise(rng):
    a = rng.standard_normal((10, 10)) + 10 * np.eye(10)
    b = rng.standard_normal(10)
    free = bicg_solve(a, b, max_iters=6, tol=0.0)
    replay = bicg_solve(a, b, schedule=free.coefficients)
    assert replay.iters == free.iters == 6
    np.testing.assert_array_equal(replay.x, free.x)


def test_bicg_schedule_runs_exactly_its_length():
    sched = LayerSchedule(np.full(5, 0.1), np.zeros(5))
    res = bicg_solve(np.eye(3), np.ones(3), schedule=sched)
    assert res.iters == 5
    np.testing.assert_allclose(res.x, 1 - 0.9**5)


def test_bicg_rejects_2d_schedule():
    sched = LayerSchedule(np.ones((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        bicg_solve(np.eye(2), np.ones(2), schedule=sched)
    assert len(sched.for_layer(1)) == 3


def test_bicg_breakdown_is_typed():
    # rho = <r~, r> starts nonzero, but <p~, A p> vanishes for this rotation
    a = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(BreakdownError):
        bicg_solve(a, [1.0, 0.0])


def test_bicg_matches_cg_on_symmetric(rng):
    a = rng.standard_normal((12, 12))
    a = a @ a.T + 2 * np.eye(12)
    b = rng.standard_normal(12)
    x1 = bicg_solve(a, b, tol=1e-13).x
    x2 = cg_solve(a, b, tol=1e-13, max_iters=100).x
    assert np.linalg.norm(x1 - x2) / np.linalg.norm(x2) <= 1e-8


@pytest.mark.parametrize("n", [4, 16, 64])
def test_bicg_n_iterations_converges(rng, n):
    a = rng.standard_normal((n, n)) / np.sqrt(n) + 2 * np.eye(n)
    b = rng.standard_normal(n)
    res = bicg_solve(a, b, max_iters=n, tol=0.0)
    assert res.residual <= 1e-6


def test_linear_operator_adjoint(rng):
    d = SparseMatrix.from_dense(rng.standard_normal((9, 6)) * (rng.random((9, 6)) < 0.5))
    op = aslinearoperator(d)
    worst = 0.0
    for _ in range(100):
        x, w = rng.standard_normal(6), rng.standard_normal(9)
        lhs, rhs = op.matvec(x) @ w, x @ op.rmatvec(w)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    assert worst <= 1e-10
    np.testing.assert_allclose(op.T.to_dense(), d.to_dense().T)


def test_linear_operator_from_callables():
    op = LinearOperator((2, 2), lambda v: 2 * v, lambda v: 2 * v)
    np.testing.assert_array_equal(op @ np.ones(2), [2, 2])
    np.testing.assert_array_equal(op.to_dense(), 2 * np.eye(2))


def test_layer_schedule_validation():
    with pytest.raises(ValueError):
        LayerSchedule([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        LayerSchedule([np.inf], [0.0])
    s = LayerSchedule([1.0, 2.0], [0.5, 0.25])
    assert s == LayerSchedule(s.to_json()["alpha"], s.to_json()["beta"])
