"""
Agent 1: dual-layer closed-form matting
Builds the modified matting Laplacian jointly over frame and plate, the
sigmoid confidence diagonal, and solves the regularized quadratic for alpha.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from consensus import AgentOp
from errors import ImageError, ParameterError
from sparse_linalg import DiagMatrix, SparseSymMatrix, assemble_from_window_arrays, cg_solve

logger = logging.getLogger(__name__)


def rolling_block(A: np.ndarray, block: Tuple[int, int] = (3, 3)) -> np.ndarray:
    """Read-only view of every block-sized patch of a 2-D array"""
    shape = (A.shape[0] - block[0] + 1, A.shape[1] - block[1] + 1) + block
    strides = (A.strides[0], A.strides[1]) + A.strides
    return as_strided(A, shape=shape, strides=strides, writeable=False)


def window_indices(height: int, width: int, radius: int = 1) -> np.ndarray:
    """Flat pixel indices of every fully interior window, shape (K, (2r+1)^2)"""
    diam = 2 * radius + 1
    inds = np.arange(height * width).reshape(height, width)
    return rolling_block(inds, (diam, diam)).reshape(-1, diam * diam)


@dataclass
class DualLayerLaplacian:
    """Modified matting Laplacian plus the per-window statistics it was built from"""
    matrix: SparseSymMatrix
    shape: Tuple[int, int]
    eta: float
    eps: float
    window_mu: np.ndarray
    window_sigma: np.ndarray
    window_t: np.ndarray
    window_radius: int = 1

    @property
    def n(self) -> int:
        return self.matrix.n


@dataclass(frozen=True)
class ConfidenceDiag:
    """Sigmoid confidence d_i = 1 / (1 + exp(-kappa (z_i - theta)))"""
    diag: DiagMatrix
    kappa: float
    theta: float


def _check_pair(image: np.ndarray, plate: np.ndarray, radius: int) -> None:
    if image.shape != plate.shape:
        raise ImageError(f"image {image.shape} and plate {plate.shape} differ in size")
    if image.ndim != 3:
        raise ImageError(f"expected H x W x C rasters, got {image.shape}")
    diam = 2 * radius + 1
    if image.shape[0] < diam or image.shape[1] < diam:
        raise ImageError(f"image {image.shape[:2]} is smaller than a {diam}x{diam} window")
    if not (np.all(np.isfinite(image)) and np.all(np.isfinite(plate))):
        raise ImageError("image or plate holds non-finite pixels")


def build_dual_laplacian(image: np.ndarray, plate: np.ndarray, eta: float = 0.1,
                         eps: float = 1e-7, radius: int = 1) -> DualLayerLaplacian:
    """
    For each interior window w_k eliminate (a_k, b_k) from
        ||H_k a + b - alpha_k||^2 + eta ||G_k a + b||^2 + eps ||a||^2
    with H_k, G_k the frame and plate colors of the window. The block
    inverse gives entries delta_ij - (1/c + (I_i - mu_hat)^T T^-1 (I_j - mu_hat))
    with c = |w|(1 + eta), T = Sigma - mu mu^T / c and mu_hat = mu / c.
    """
    if not eta > 0:
        raise ParameterError(f"eta must be positive, got {eta}")
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    image = np.asarray(image, dtype=np.float64)
    plate = np.asarray(plate, dtype=np.float64)
    _check_pair(image, plate, radius)

    h, w, d = image.shape
    win_inds = window_indices(h, w, radius)
    win_size = win_inds.shape[1]
    c = win_size * (1.0 + eta)

    win_i = image.reshape(h * w, d)[win_inds]
    win_p = plate.reshape(h * w, d)[win_inds]

    sigma = (np.einsum('kji,kjl->kil', win_i, win_i)
             + eta * np.einsum('kji,kjl->kil', win_p, win_p)
             + eps * np.eye(d))
    mu = win_i.sum(axis=1) + eta * win_p.sum(axis=1)
    t_mat = sigma - np.einsum('ki,kl->kil', mu, mu) / c
    mu_hat = mu / c

    centered = win_i - mu_hat[:, None, :]
    x = np.einsum('kji,kil->kjl', centered, np.linalg.inv(t_mat))
    vals = np.eye(win_size) - (1.0 / c + np.einsum('kjl,kml->kjm', x, centered))
    vals = 0.5 * (vals + vals.transpose(0, 2, 1))

    matrix = assemble_from_window_arrays(win_inds, vals, h * w)
    logger.debug(f"Built dual-layer Laplacian for {h}x{w} from {len(win_inds)} windows, nnz={matrix.nnz}")
    return DualLayerLaplacian(
        matrix=matrix, shape=(h, w), eta=eta, eps=eps,
        window_mu=mu, window_sigma=sigma, window_t=t_mat, window_radius=radius,
    )


def confidence_from_input(z: np.ndarray, kappa: float = 30.0, theta: float = 0.8) -> ConfidenceDiag:
    if not kappa > 0:
        raise ParameterError(f"kappa must be positive, got {kappa}")
    if not 0 < theta < 1:
        raise ParameterError(f"theta must lie in (0, 1), got {theta}")
    entries = expit(kappa * (np.asarray(z, dtype=np.float64).ravel() - theta))
    return ConfidenceDiag(DiagMatrix(entries), kappa, theta)


def matting_agent_eval(z: np.ndarray, lap: DualLayerLaplacian, lambda1: float = 0.01,
                       kappa: float = 30.0, theta: float = 0.8, cg_tol: float = 1e-6,
                       cg_max_iter: int = 2000,
                       confidence: Optional[ConfidenceDiag] = None) -> np.ndarray:
    """
    argmin_alpha alpha^T L alpha + lambda1 (alpha - z)^T D (alpha - z), solved as
    (L + lambda1 D) alpha = lambda1 D z. D comes from z unless a fixed one is given.
    """
    if not lambda1 > 0:
        raise ParameterError(f"lambda1 must be positive, got {lambda1}")
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size != lap.n:
        raise ParameterError(f"input has {z.size} entries, Laplacian has {lap.n}")
    if not np.all(np.isfinite(z)):
        raise ParameterError("agent input holds non-finite values")

    if confidence is None:
        confidence = confidence_from_input(z, kappa, theta)
    shift = confidence.diag.scaled(lambda1)
    rhs = shift.entries * z
    return cg_solve(lap.matrix, shift, rhs, tol=cg_tol, max_iter=cg_max_iter, x0=z)


class MattingAgent:
    """Agent 1 bound to one frame/plate pair"""

    def __init__(self, lap: DualLayerLaplacian, lambda1: float, kappa: float, theta: float,
                 cg_tol: float = 1e-6, cg_max_iter: int = 2000):
        """Initialize the matting agent"""
        self.lap = lap
        self.lambda1 = lambda1
        self.kappa = kappa
        self.theta = theta
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter
        self.frozen: Optional[ConfidenceDiag] = None

    @classmethod
    def from_config(cls, image: np.ndarray, plate: np.ndarray, cfg) -> 'MattingAgent':
        lap = build_dual_laplacian(image, plate, cfg.eta, cfg.eps)
        return cls(lap, cfg.lambda1, cfg.kappa, cfg.theta, cfg.cg_tol, cfg.cg_max_iter)

    def freeze_confidence(self, z: np.ndarray) -> None:
        """Pin D to the value computed from z; later calls no longer recompute it"""
        self.frozen = confidence_from_input(z, self.kappa, self.theta)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return matting_agent_eval(z, self.lap, self.lambda1, self.kappa, self.theta,
                                  self.cg_tol, self.cg_max_iter, confidence=self.frozen)

    def as_agent(self, name: str = 'matting') -> AgentOp:
        return AgentOp(name, self)
