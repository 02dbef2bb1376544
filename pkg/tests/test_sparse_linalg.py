#!/usr/bin/env python3
"""
Test Sparse Linear Algebra
Window-block assembly, conjugate gradients and the eigenvalue estimate
"""

import os
import sys

import numpy as np
import pytest
import scipy.sparse

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import AssemblyError, ParameterError, SolverError
from sparse_linalg import (DiagMatrix, SparseSymMatrix, assemble_from_window_arrays, assemble_from_window_blocks,
                           cg_solve, min_eigenvalue_estimate, write_coordinate_text)


def random_spd(n, rng, cond=100.0):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q @ np.diag(np.linspace(1.0, cond, n)) @ q.T


def test_single_block():
    A = assemble_from_window_blocks([([0, 1], np.array([[2.0, -1.0], [-1.0, 2.0]]))])
    np.testing.assert_array_equal(A.to_dense(), [[2.0, -1.0], [-1.0, 2.0]])
    assert A.nnz == 4


def test_overlapping_blocks_add_up():
    blocks = [([0, 2], np.array([[1.0, 0.0], [0.0, 0.0]])), ([0, 1], np.array([[1.0, 0.0], [0.0, 0.0]]))]
    A = assemble_from_window_blocks(blocks, n=3)
    assert A.to_dense()[0, 0] == 2.0


def test_assembly_matches_dense_accumulation():
    rng = np.random.default_rng(0)
    n, k, m = 40, 25, 4
    dense = np.zeros((n, n))
    blocks = []
    inds = np.empty((k, m), dtype=np.int64)
    vals = np.empty((k, m, m))
    for w in range(k):
        idx = rng.choice(n, size=m, replace=False)
        blk = rng.normal(size=(m, m))
        blk = blk + blk.T
        dense[np.ix_(idx, idx)] += blk
        blocks.append((idx, blk))
        inds[w], vals[w] = idx, blk

    np.testing.assert_allclose(assemble_from_window_blocks(blocks, n).to_dense(), dense, atol=1e-12)
    np.testing.assert_allclose(assemble_from_window_arrays(inds, vals, n).to_dense(), dense, atol=1e-12)


def test_assembly_errors():
    with pytest.raises(AssemblyError):
        assemble_from_window_blocks([([0, 5], np.eye(2))], n=3)
    with pytest.raises(AssemblyError):
        assemble_from_window_blocks([([0, 1], np.array([[1.0, 2.0], [0.0, 1.0]]))])
    with pytest.raises(AssemblyError):
        SparseSymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(AssemblyError):
        assemble_from_window_arrays(np.array([[0, 3]]), np.ones((1, 2, 2)), 3)


def test_diag_matrix_rejects_negative_entries():
    with pytest.raises(ParameterError):
        DiagMatrix(np.array([1.0, -0.5]))
    assert DiagMatrix.zeros(4).n == 4


def test_cg_identity_and_zero_rhs():
    A = SparseSymMatrix(scipy.sparse.identity(7))
    b = np.arange(7, dtype=np.float64)
    np.testing.assert_allclose(cg_solve(A, None, b), b)
    np.testing.assert_array_equal(cg_solve(A, None, np.zeros(7)), np.zeros(7))


def test_cg_matches_direct_solve():
    rng = np.random.default_rng(1)
    dense = random_spd(50, rng)
    shift = DiagMatrix(rng.random(50))
    b = rng.normal(size=50)
    x = cg_solve(SparseSymMatrix(dense), shift, b, tol=1e-12, max_iter=500)
    expected = np.linalg.solve(dense + np.diag(shift.entries), b)
    assert np.linalg.norm(x - expected) <= 1e-6 * np.linalg.norm(expected)


def test_cg_warm_start_gives_same_answer():
    rng = np.random.default_rng(2)
    dense = random_spd(30, rng)
    b = rng.normal(size=30)
    A = SparseSymMatrix(dense)
    cold = cg_solve(A, None, b, tol=1e-12, max_iter=500)
    warm = cg_solve(A, None, b, tol=1e-12, max_iter=500, x0=rng.normal(size=30))
    np.testing.assert_allclose(warm, cold, atol=1e-8)


def test_cg_detects_indefinite_matrix():
    A = SparseSymMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(SolverError):
        cg_solve(A, None, np.array([1.0, -1.0]))


def test_cg_reports_residual_when_out_of_iterations():
    rng = np.random.default_rng(3)
    A = SparseSymMatrix(random_spd(40, rng, cond=1e4))
    with pytest.raises(SolverError) as excinfo:
        cg_solve(A, None, rng.normal(size=40), tol=1e-14, max_iter=2)
    assert excinfo.value.residual is not None
    assert excinfo.value.iterations == 2


def test_min_eigenvalue():
    assert min_eigenvalue_estimate(SparseSymMatrix(np.eye(5))) == pytest.approx(1.0)
    assert min_eigenvalue_estimate(SparseSymMatrix(np.diag([1.0, 2.0, 3.0]))) == pytest.approx(1.0)
    big = SparseSymMatrix(scipy.sparse.diags(np.concatenate([[0.5], np.linspace(2.0, 10.0, 119)])))
    assert min_eigenvalue_estimate(big) == pytest.approx(0.5, rel=1e-6)


def test_write_coordinate_text(tmp_path):
    A = assemble_from_window_blocks([([0, 1], np.array([[2.0, -1.0], [-1.0, 2.0]]))], n=3)
    path = tmp_path / 'lap.txt'
    write_coordinate_text(A, str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == A.nnz
    row, col, value = lines[0].split()
    assert (int(row), int(col), float(value)) == (0, 0, 2.0)
