"""Solver kernels against independent oracles and their KKT contracts."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mtsu
from mtsu import fcls, fcls_grid_oracle, grid_gap_bound, nnls
from mtsu.solver import simplex_lattice


def nnls_enumeration_oracle(A, b):
    """Optimal NNLS objective by trying every support set.

    Solves the unconstrained least squares on each subset of columns and
    keeps the best feasible (nonnegative) candidate; the NNLS optimum is
    the least squares solution on its own support, so it is among these.
    """
    m, k = A.shape
    best_obj = float(np.linalg.norm(b))  # empty support
    best_x = np.zeros(k)
    for size in range(1, k + 1):
        for support in itertools.combinations(range(k), size):
            cols = A[:, support]
            sol, *_ = np.linalg.lstsq(cols, b, rcond=None)
            if sol.min() < -1e-12:
                continue
            x = np.zeros(k)
            x[list(support)] = np.clip(sol, 0.0, None)
            obj = float(np.linalg.norm(A @ x - b))
            if obj < best_obj:
                best_obj = obj
                best_x = x
    return best_x, best_obj


def kkt_residual(A, b, x):
    grad = A.T @ (A @ x - b)
    free = x > 1e-12
    worst = 0.0
    if free.any():
        worst = float(np.abs(grad[free]).max())
    if (~free).any():
        worst = max(worst, float(max(0.0, -grad[~free].min())))
    return worst


def test_nnls_identity_passthrough():
    b = np.array([0.2, 0.7, 1.3])
    x = nnls(np.eye(3), b)
    assert np.allclose(x, b, atol=1e-12)


def test_nnls_clips_negative_targets():
    x = nnls(np.eye(2), np.array([-1.0, 2.0]))
    assert np.allclose(x, [0.0, 2.0], atol=1e-12)
    # KKT: active coordinate gradient is +1 >= 0
    assert kkt_residual(np.eye(2), np.array([-1.0, 2.0]), x) <= 1e-10


def test_nnls_matches_support_enumeration(rng):
    for _ in range(25):
        A = rng.standard_normal((10, 3))
        b = rng.standard_normal(10)
        x = nnls(A, b)
        _, best_obj = nnls_enumeration_oracle(A, b)
        assert float(np.linalg.norm(A @ x - b)) <= best_obj + 1e-10
        assert x.min() >= 0.0
        assert kkt_residual(A, b, x) <= 1e-8


def test_nnls_input_validation():
    with pytest.raises(mtsu.ValidationError):
        nnls(np.array([[np.nan, 1.0]]), np.array([1.0]))
    with pytest.raises(mtsu.ShapeError):
        nnls(np.eye(3), np.ones(2))


def test_nnls_iteration_cap_raises():
    A = np.eye(4)
    with pytest.raises(mtsu.ConvergenceError):
        nnls(A, np.ones(4), max_iter=0)


def test_fcls_pure_pixel(rng):
    from conftest import make_library

    lib = make_library(rng, bands=30, counts=(1, 1, 1))
    M = mtsu.realize_model(lib, mtsu.ModelIndex((1, 1, 1)))
    sol = fcls(M, M[:, 1])
    expected = np.zeros(3)
    expected[1] = 1.0
    assert np.allclose(sol.abundance, expected, atol=1e-8)
    assert sol.residual_norm <= 1e-8
    assert not sol.degenerate


def test_fcls_exact_convex_combination(rng):
    M = rng.uniform(0.05, 0.95, size=(40, 3))
    y = 0.5 * M[:, 0] + 0.5 * M[:, 1]
    sol = fcls(M, y)
    assert np.allclose(sol.abundance, [0.5, 0.5, 0.0], atol=1e-6)
    assert abs(sol.abundance.sum() - 1.0) <= 1e-15


def test_fcls_recovers_random_simplex_targets(rng):
    from conftest import random_simplex

    for _ in range(10):
        M = rng.uniform(size=(50, 3))
        a = random_simplex(rng, 3)
        y = M @ a
        sol = fcls(M, y)
        assert np.allclose(sol.abundance, a, atol=1e-5)
        grid = fcls_grid_oracle(M, y, 200)
        assert grid.residual_norm >= sol.residual_norm - 1e-6


def test_fcls_objective_bounded_by_grid_oracle(rng):
    for _ in range(10):
        M = rng.uniform(size=(25, 3))
        y = rng.uniform(size=25)
        sol = fcls(M, y)
        grid = fcls_grid_oracle(M, y, 150)
        gap = grid_gap_bound(M, 150)
        assert sol.residual_norm <= grid.residual_norm + 1e-12
        assert grid.residual_norm <= sol.residual_norm + gap


def test_fcls_degenerate_all_zero_falls_back_uniform():
    # a vanishing weight removes the sum-to-one pull; a target in the
    # negative cone of M then drives every NNLS coordinate to zero
    M = np.column_stack([np.ones(6), np.linspace(0.2, 1.0, 6)]) * 0.5
    y = -(M[:, 0] + M[:, 1])
    sol = fcls(M, y, weight=1e-300)
    assert sol.degenerate
    assert np.allclose(sol.abundance, [0.5, 0.5])


def test_fcls_weight_validation(rng):
    M = rng.uniform(size=(8, 2))
    with pytest.raises(mtsu.ValidationError):
        fcls(M, M[:, 0], weight=0.0)
    with pytest.raises(mtsu.ValidationError):
        fcls(M, M[:, 0], weight=-1.0)


def test_fcls_column_permutation_invariance(rng):
    M = rng.uniform(size=(30, 4))
    y = rng.uniform(size=30)
    perm = np.array([2, 0, 3, 1])
    base = fcls(M, y)
    permuted = fcls(M[:, perm], y)
    assert np.max(np.abs(permuted.abundance[np.argsort(perm)] - base.abundance)) < 1e-6
    assert abs(permuted.residual_norm - base.residual_norm) < 1e-9


def test_grid_oracle_trivial_cases(rng):
    M = rng.uniform(size=(12, 2))
    sol = fcls_grid_oracle(M, M[:, 0], 10)
    assert np.allclose(sol.abundance, [1.0, 0.0])
    # lattice member reproduced exactly
    M3 = rng.uniform(size=(12, 3))
    a = np.array([0.2, 0.5, 0.3])
    sol3 = fcls_grid_oracle(M3, M3 @ a, 10)
    assert np.allclose(sol3.abundance, a, atol=1e-12)
    assert sol3.residual_norm <= 1e-10


def test_grid_oracle_limits(rng):
    M = rng.uniform(size=(10, 5))
    with pytest.raises(mtsu.ValidationError):
        fcls_grid_oracle(M, M[:, 0], 10)
    with pytest.raises(mtsu.ValidationError):
        fcls_grid_oracle(M[:, :2], M[:, 0], 500)


def test_simplex_lattice_counts():
    assert simplex_lattice(2, 4).shape == (5, 2)
    assert simplex_lattice(3, 4).shape == (15, 3)  # C(6, 2)
    pts = simplex_lattice(3, 7)
    assert np.allclose(pts.sum(axis=1), 1.0)
    assert pts.min() >= 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_fcls_abundance_always_on_simplex(seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(size=(15, 3))
    y = rng.uniform(-0.5, 1.5, size=15)
    sol = fcls(M, y)
    assert sol.abundance.min() >= 0.0
    assert abs(sol.abundance.sum() - 1.0) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_nnls_kkt_property(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((12, 4))
    b = rng.standard_normal(12)
    x = nnls(A, b)
    assert x.min() >= 0.0
    assert kkt_residual(A, b, x) <= 1e-8
