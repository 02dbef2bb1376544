"""
Agent 3: total-variation denoiser
Proximal map of the weighted space-time TV seminorm,
    argmin_alpha ||alpha||_TV + lambda3 ||alpha - z||^2,
solved with an accelerated first-order primal-dual iteration.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from consensus import AgentOp
from errors import ParameterError, SolverError

logger = logging.getLogger(__name__)

SPATIAL = (1.0, 1.0, 0.0)
SPATIO_TEMPORAL = (1.0, 1.0, 0.25)
GAP_CHECK_EVERY = 5


def as_volume(v: np.ndarray) -> np.ndarray:
    """Promote a single H x W matte to a 1 x H x W volume"""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2:
        return v[None, :, :]
    if v.ndim != 3:
        raise ParameterError(f"expected H x W or T x H x W, got shape {v.shape}")
    return v


def _check_beta(beta: Sequence[float]) -> Tuple[float, float, float]:
    if len(beta) != 3 or any(b < 0 for b in beta):
        raise ParameterError(f"beta needs three nonnegative weights, got {tuple(beta)}")
    return tuple(float(b) for b in beta)


def gradient(v: np.ndarray, beta: Sequence[float]) -> np.ndarray:
    """Weighted forward differences (x, y, t), zero across the last slice; shape (3, T, H, W)"""
    bx, by, bt = beta
    g = np.zeros((3,) + v.shape)
    g[0, :, :, :-1] = np.sqrt(bx) * (v[:, :, 1:] - v[:, :, :-1])
    g[1, :, :-1, :] = np.sqrt(by) * (v[:, 1:, :] - v[:, :-1, :])
    g[2, :-1, :, :] = np.sqrt(bt) * (v[1:, :, :] - v[:-1, :, :])
    return g


def gradient_adjoint(p: np.ndarray, beta: Sequence[float]) -> np.ndarray:
    """Adjoint of gradient (a negative divergence)"""
    bx, by, bt = beta
    out = np.zeros(p.shape[1:])

    px = np.sqrt(bx) * p[0, :, :, :-1]
    out[:, :, :-1] -= px
    out[:, :, 1:] += px

    py = np.sqrt(by) * p[1, :, :-1, :]
    out[:, :-1, :] -= py
    out[:, 1:, :] += py

    pt = np.sqrt(bt) * p[2, :-1, :, :]
    out[:-1] -= pt
    out[1:] += pt
    return out


def tv_seminorm(v: np.ndarray, beta: Sequence[float] = SPATIAL) -> float:
    """sum over sites of sqrt(bx dx^2 + by dy^2 + bt dt^2)"""
    beta = _check_beta(beta)
    g = gradient(as_volume(v), beta)
    return float(np.sqrt((g ** 2).sum(axis=0)).sum())


def tv_objective(x: np.ndarray, z: np.ndarray, lambda3: float, beta: Sequence[float] = SPATIAL) -> float:
    x = as_volume(x)
    z = as_volume(z)
    return tv_seminorm(x, beta) + lambda3 * float(((x - z) ** 2).sum())


def _duality_gap(x: np.ndarray, p: np.ndarray, z: np.ndarray, lambda3: float, beta,
                 lo: float, hi: float) -> Tuple[float, float]:
    """
    (primal, gap) for a feasible pair. The dual bound minimizes the Lagrangian
    over the box [lo, hi], which holds the minimizer and is never looser than
    the unconstrained bound.
    """
    primal = np.sqrt((gradient(x, beta) ** 2).sum(axis=0)).sum() + lambda3 * ((x - z) ** 2).sum()
    kt_p = gradient_adjoint(p, beta)
    x_p = np.clip(z - kt_p / (2.0 * lambda3), lo, hi)
    dual = (kt_p * x_p).sum() + lambda3 * ((x_p - z) ** 2).sum()
    return float(primal), float(primal - dual)


def _project_unit_ball(p: np.ndarray) -> np.ndarray:
    norm = np.sqrt((p ** 2).sum(axis=0))
    return p / np.maximum(1.0, norm)[None]


def _prox_volume(z: np.ndarray, lambda3: float, beta, inner_tol: float, inner_max: int,
                 strict: bool) -> np.ndarray:
    lip_sq = 4.0 * sum(beta)
    lo, hi = float(z.min()), float(z.max())
    if lip_sq == 0 or lo == hi:
        return z.copy()

    tau = 1.0 / np.sqrt(lip_sq)
    sigma = 1.0 / np.sqrt(lip_sq)
    gam = 2.0 * lambda3

    x = z.copy()
    xbar = x.copy()
    p = np.zeros((3,) + z.shape)
    primal, gap = np.inf, np.inf

    for iteration in range(1, inner_max + 1):
        p = _project_unit_ball(p + sigma * gradient(xbar, beta))
        x_tilde = x - tau * gradient_adjoint(p, beta)
        # iterates stay in [min z, max z], where the minimizer lies
        x_new = np.clip((x_tilde + 2.0 * lambda3 * tau * z) / (1.0 + 2.0 * lambda3 * tau), lo, hi)

        theta = 1.0 / np.sqrt(1.0 + 2.0 * gam * tau)
        tau *= theta
        sigma /= theta
        xbar = x_new + theta * (x_new - x)
        x = x_new

        if iteration % GAP_CHECK_EVERY == 0 or iteration == inner_max:
            primal, gap = _duality_gap(x, p, z, lambda3, beta, lo, hi)
            if gap <= inner_tol * primal:
                logger.debug(f"TV prox converged in {iteration} iterations (relative gap {gap / primal:.3g})")
                return x

    relative = gap / primal if primal > 0 else gap
    message = f"TV prox stopped after {inner_max} iterations with relative gap {relative:.3g}"
    if strict:
        raise SolverError(message, residual=relative, iterations=inner_max)
    logger.warning(message)
    return x


def tv_prox(z: np.ndarray, lambda3: float = 4.0, beta: Sequence[float] = SPATIAL,
            inner_tol: float = 1e-3, inner_max: int = 2000, strict: bool = True) -> np.ndarray:
    """
    Proximal map of the TV seminorm for an H x W matte or T x H x W volume.
    Convergence is declared once the primal-dual gap falls below inner_tol
    times the primal objective. With beta_t = 0 every frame is solved on its own.
    """
    if not lambda3 > 0:
        raise ParameterError(f"lambda3 must be positive, got {lambda3}")
    if not inner_tol > 0:
        raise ParameterError(f"inner_tol must be positive, got {inner_tol}")
    if inner_max < 1:
        raise ParameterError(f"inner_max must be at least 1, got {inner_max}")
    beta = _check_beta(beta)
    z_arr = np.asarray(z, dtype=np.float64)
    volume = as_volume(z_arr)

    if beta[2] == 0 and volume.shape[0] > 1:
        out = np.stack([_prox_volume(frame[None], lambda3, beta, inner_tol, inner_max, strict)[0]
                        for frame in volume])
    else:
        out = _prox_volume(volume, lambda3, beta, inner_tol, inner_max, strict)
    return out.reshape(z_arr.shape)


class TVAgent:
    """Agent 3 over a fixed volume shape"""

    def __init__(self, shape: Tuple[int, ...], lambda3: float, beta: Sequence[float] = SPATIAL,
                 inner_tol: float = 1e-3, inner_max: int = 2000, strict: bool = True):
        self.shape = tuple(shape)
        self.lambda3 = lambda3
        self.beta = _check_beta(beta)
        self.inner_tol = inner_tol
        self.inner_max = inner_max
        self.strict = strict

    def __call__(self, z: np.ndarray) -> np.ndarray:
        vol = np.asarray(z, dtype=np.float64).reshape(self.shape)
        return tv_prox(vol, self.lambda3, self.beta, self.inner_tol, self.inner_max, self.strict).ravel()

    def as_agent(self, name: str = 'tv') -> AgentOp:
        return AgentOp(name, self)
