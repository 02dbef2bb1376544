"""
Sparse symmetric matrices for the matting systems
Window-block assembly, Jacobi-preconditioned conjugate gradients and a
smallest-eigenvalue estimate
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from errors import AssemblyError, ParameterError, SolverError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
DENSE_EIG_LIMIT = 64


class SparseSymMatrix:
    """Immutable symmetric matrix stored as CSR with sorted column indices"""

    def __init__(self, matrix, check: bool = True):
        csr = scipy.sparse.csr_matrix(matrix, dtype=np.float64)
        if csr.shape[0] != csr.shape[1]:
            raise AssemblyError(f"matrix must be square, got {csr.shape}")
        csr.sum_duplicates()
        csr.sort_indices()
        if check:
            asym = abs(csr - csr.T)
            scale = max(1.0, abs(csr).max()) if csr.nnz else 1.0
            if asym.nnz and asym.max() > SYMMETRY_TOL * scale:
                raise AssemblyError(f"matrix is not symmetric (max deviation {asym.max():.3g})")
        self.matrix = csr
        self.symmetric = True

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def dot(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def quadratic_form(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).ravel()
        return float(x @ (self.matrix @ x))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __repr__(self) -> str:
        return f"SparseSymMatrix(n={self.n}, nnz={self.nnz})"


@dataclass(frozen=True)
class DiagMatrix:
    """Nonnegative diagonal matrix"""
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64).ravel()
        if not np.all(np.isfinite(entries)):
            raise ParameterError("diagonal entries must be finite")
        if np.any(entries < 0):
            raise ParameterError("diagonal entries must be nonnegative")
        object.__setattr__(self, 'entries', entries)

    @classmethod
    def zeros(cls, n: int) -> 'DiagMatrix':
        return cls(np.zeros(n))

    @property
    def n(self) -> int:
        return self.entries.size

    def scaled(self, factor: float) -> 'DiagMatrix':
        return DiagMatrix(self.entries * factor)

    def as_sparse(self):
        return scipy.sparse.diags(self.entries, format='csr')


def assemble_from_window_blocks(blocks: Iterable[Tuple[Iterable[int], np.ndarray]],
                                n: Optional[int] = None) -> SparseSymMatrix:
    """
    Sum dense symmetric blocks into an n x n matrix; entry (i, j) collects the
    contribution of every block whose index set holds both i and j.
    """
    rows, cols, vals = [], [], []
    max_index = -1
    for number, (indices, block) in enumerate(blocks):
        idx = np.asarray(list(indices), dtype=np.int64)
        blk = np.asarray(block, dtype=np.float64)
        if blk.shape != (idx.size, idx.size):
            raise AssemblyError(f"block {number} has shape {blk.shape} for {idx.size} indices")
        if not np.allclose(blk, blk.T, rtol=0, atol=SYMMETRY_TOL * max(1.0, np.abs(blk).max(initial=0))):
            raise AssemblyError(f"block {number} is not symmetric")
        if idx.size and idx.min() < 0:
            raise AssemblyError(f"block {number} has negative index {idx.min()}")
        if idx.size:
            max_index = max(max_index, int(idx.max()))
        rows.append(np.repeat(idx, idx.size))
        cols.append(np.tile(idx, idx.size))
        vals.append(blk.ravel())

    if n is None:
        n = max_index + 1
    if max_index >= n:
        raise AssemblyError(f"index {max_index} out of range for dimension {n}")
    if not rows:
        return SparseSymMatrix(scipy.sparse.csr_matrix((n, n)), check=False)

    coo = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return SparseSymMatrix(coo.tocsr())


def assemble_from_window_arrays(win_inds: np.ndarray, win_vals: np.ndarray, n: int) -> SparseSymMatrix:
    """Vectorized assembly for K windows of m pixels: win_inds (K, m), win_vals (K, m, m)"""
    k, m = win_inds.shape
    if win_vals.shape != (k, m, m):
        raise AssemblyError(f"window values have shape {win_vals.shape}, expected {(k, m, m)}")
    if win_inds.size and (win_inds.min() < 0 or win_inds.max() >= n):
        raise AssemblyError(f"window index out of range for dimension {n}")

    rows = np.repeat(win_inds, m, axis=1).ravel()
    cols = np.tile(win_inds, (1, m)).ravel()
    coo = scipy.sparse.coo_matrix((win_vals.ravel(), (rows, cols)), shape=(n, n))
    return SparseSymMatrix(coo.tocsr())


def write_coordinate_text(A: SparseSymMatrix, path: str) -> None:
    """Dump stored entries as 'row col value' lines"""
    coo = A.matrix.tocoo()
    with open(path, 'w', encoding='utf-8') as f:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {v:.17g}\n")
    logger.debug(f"Wrote {coo.nnz} entries of a {A.n}x{A.n} matrix to {path}")


def cg_solve(A: SparseSymMatrix, shift: Optional[DiagMatrix], b: np.ndarray, tol: float = 1e-6,
             max_iter: int = 2000, x0: Optional[np.ndarray] = None, roundoff: int = 50) -> np.ndarray:
    """
    Solve (A + shift) x = b with conjugate gradients, Jacobi preconditioned by
    diag(A) + shift. Stops when ||(A + shift) x - b|| / ||b|| <= tol.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol}")

    b = np.asarray(b, dtype=np.float64).ravel()
    if b.size != A.n:
        raise ParameterError(f"right-hand side has length {b.size}, matrix has {A.n} rows")
    shift_entries = shift.entries if shift is not None else np.zeros(A.n)
    if shift_entries.size != A.n:
        raise ParameterError(f"shift has length {shift_entries.size}, matrix has {A.n} rows")

    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        return np.zeros(A.n)

    def fwd_op(v):
        return A.matrix @ v + shift_entries * v

    precond = A.diagonal() + shift_entries
    if np.any(precond <= 0):
        raise SolverError("non-positive diagonal, system is not positive definite")
    inv_diag = 1.0 / precond

    x = np.zeros(A.n) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    residual = b - fwd_op(x)
    res_norm = np.linalg.norm(residual)
    if res_norm <= tol * b_norm:
        return x

    searchdir = inv_diag * residual
    delta = residual @ searchdir

    for iteration in range(1, max_iter + 1):
        searchfwd = fwd_op(searchdir)
        curvature = searchdir @ searchfwd
        if curvature <= 0:
            raise SolverError(
                f"negative curvature {curvature:.3g} at iteration {iteration}, matrix is not positive definite",
                residual=res_norm / b_norm, iterations=iteration)

        step = delta / curvature
        x += step * searchdir
        if iteration % roundoff == 0:
            residual = b - fwd_op(x)
        else:
            residual -= step * searchfwd

        res_norm = np.linalg.norm(residual)
        if res_norm <= tol * b_norm:
            logger.debug(f"CG converged in {iteration} iterations (relative residual {res_norm / b_norm:.3g})")
            return x

        precond_res = inv_diag * residual
        new_delta = residual @ precond_res
        searchdir = precond_res + (new_delta / delta) * searchdir
        delta = new_delta

    final = res_norm / b_norm
    raise SolverError(f"CG did not converge in {max_iter} iterations (relative residual {final:.3g})",
                      residual=final, iterations=max_iter)


def min_eigenvalue_estimate(A: SparseSymMatrix, iters: int = 1000) -> float:
    """Smallest eigenvalue: dense for small matrices, Lanczos otherwise"""
    if A.n <= DENSE_EIG_LIMIT:
        return float(np.linalg.eigvalsh(A.to_dense())[0])
    try:
        vals = scipy.sparse.linalg.eigsh(A.matrix, k=1, which='SA', maxiter=iters,
                                         return_eigenvectors=False)
        return float(vals[0])
    except scipy.sparse.linalg.ArpackNoConvergence as e:
        if len(e.eigenvalues):
            logger.warning("Lanczos estimate stopped early; returning the partial estimate")
            return float(np.min(e.eigenvalues))
        raise SolverError(f"Lanczos estimate did not converge in {iters} iterations") from e
