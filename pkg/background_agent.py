"""
Agent 2: background-aware estimator
Builds the rough matte r0 = r_c * r_e from frame/plate color and edge
evidence and applies the elementwise closed-form minimizer of
    (alpha - r0)^2 + lambda2 (alpha - z)^2 + gamma alpha (1 - alpha)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from consensus import AgentOp
from errors import ImageError, ParameterError
from image_io import shift_raster

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
# a registration offset must at least halve the unshifted mismatch
SHIFT_GAIN = 0.5


@dataclass
class GradientField:
    """Two-tap differences of frame and plate with their mismatch statistics"""
    grad_image: np.ndarray
    grad_plate: np.ndarray
    theta: np.ndarray
    amp: np.ndarray


@dataclass
class BackgroundPrior:
    """Rough matte r0 and everything it was derived from"""
    r0: np.ndarray
    rc: np.ndarray
    re: np.ndarray
    delta: np.ndarray
    superpixel_labels: np.ndarray
    sigma_delta: float
    hs: float
    hr: float
    tauA: float
    tauTheta: float
    window: int

    @property
    def superpixel_count(self) -> int:
        return int(self.superpixel_labels.max()) + 1 if self.superpixel_labels.size else 0


def _check_pair(image: np.ndarray, plate: np.ndarray) -> None:
    if image.shape != plate.shape:
        raise ImageError(f"image {image.shape} and plate {plate.shape} differ in size")
    if image.ndim != 3:
        raise ImageError(f"expected H x W x C rasters, got {image.shape}")


def bilateral_weights(image: np.ndarray, hs: float, hr: float, radius: int) -> Tuple[np.ndarray, list]:
    """
    Normalized bilateral weights of every pixel over its (2r+1)^2 window,
    shape (H, W, (2r+1)^2). Neighbors outside the raster get weight 0.
    """
    if not (hs > 0 and hr > 0):
        raise ParameterError(f"bandwidths must be positive, got hs={hs}, hr={hr}")
    if radius < 0:
        raise ParameterError(f"radius must be nonnegative, got {radius}")

    image = np.asarray(image, dtype=np.float64)
    h, w, _ = image.shape
    r = radius
    padded = np.pad(image, ((r, r), (r, r), (0, 0)), mode='edge')
    inside = np.pad(np.ones((h, w)), r, mode='constant')

    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    weights = np.empty((h, w, len(offsets)))
    for k, (dy, dx) in enumerate(offsets):
        neighbor = padded[r + dy:r + dy + h, r + dx:r + dx + w]
        spatial = np.exp(-(dy * dy + dx * dx) / (2.0 * hs * hs))
        colour = np.exp(-((image - neighbor) ** 2).sum(axis=-1) / (2.0 * hr * hr))
        weights[:, :, k] = spatial * colour * inside[r + dy:r + dy + h, r + dx:r + dx + w]

    weights /= weights.sum(axis=-1, keepdims=True)
    return weights, offsets


def bilateral_smooth(raster: np.ndarray, weights: np.ndarray, offsets: list) -> np.ndarray:
    """Window average of an H x W or H x W x C raster under precomputed bilateral weights"""
    raster = np.asarray(raster, dtype=np.float64)
    h, w = weights.shape[:2]
    if raster.shape[:2] != (h, w):
        raise ImageError(f"raster {raster.shape[:2]} does not match weights {(h, w)}")
    r = max(max(abs(dy), abs(dx)) for dy, dx in offsets)
    widths = ((r, r), (r, r)) + ((0, 0),) * (raster.ndim - 2)
    padded = np.pad(raster, widths, mode='edge')

    out = np.zeros_like(raster)
    for k, (dy, dx) in enumerate(offsets):
        wk = weights[:, :, k] if raster.ndim == 2 else weights[:, :, k, None]
        out += wk * padded[r + dy:r + dy + h, r + dx:r + dx + w]
    return out


def bilateral_color_distance(image: np.ndarray, plate: np.ndarray, hs: float = 5.0,
                             hr: float = 5.0, radius: int = 2,
                             weights: Optional[Tuple[np.ndarray, list]] = None) -> np.ndarray:
    """
    Delta_i = sum_j w_ij ||I_j - P_j||^2 over the window around i. Weights
    already computed from the image can be passed in to skip rebuilding them.
    """
    image = np.asarray(image, dtype=np.float64)
    plate = np.asarray(plate, dtype=np.float64)
    _check_pair(image, plate)

    dist = ((image - plate) ** 2).sum(axis=-1)
    if weights is None:
        weights = bilateral_weights(image, hs, hr, radius)
    return bilateral_smooth(dist, *weights)


def color_term(delta: np.ndarray, sigma_delta: float = 10.0) -> np.ndarray:
    """r_c = 1 - exp(-Delta^2 / (2 sigma^2))"""
    if not sigma_delta > 0:
        raise ParameterError(f"sigma_delta must be positive, got {sigma_delta}")
    delta = np.asarray(delta, dtype=np.float64)
    return -np.expm1(-(delta ** 2) / (2.0 * sigma_delta ** 2))


def flood_fill_superpixels(image: np.ndarray, color_tol: float = 0.05) -> np.ndarray:
    """
    4-connected flood fill: a region grows over neighbors whose color lies
    within color_tol of the region's seed. Seeds are taken in raster order,
    so labels are dense integers from 0.
    """
    if color_tol < 0:
        raise ParameterError(f"color_tol must be nonnegative, got {color_tol}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    h, w, _ = image.shape

    labels = np.full((h, w), -1, dtype=np.int64)
    tol_sq = color_tol * color_tol
    next_label = 0

    for flat in range(h * w):
        sy, sx = divmod(flat, w)
        if labels[sy, sx] >= 0:
            continue
        y0, x0, region = _grow_region(image, labels, sy, sx, tol_sq)
        rows, cols = region.shape
        labels[y0:y0 + rows, x0:x0 + cols][region] = next_label
        next_label += 1

    logger.debug(f"Flood fill produced {next_label} superpixels on {h}x{w}")
    return labels


def _grow_region(image: np.ndarray, labels: np.ndarray, sy: int, sx: int,
                 tol_sq: float) -> Tuple[int, int, np.ndarray]:
    """
    Connected component of unlabeled pixels within tolerance of the seed,
    found on a crop around the seed that doubles until the component no
    longer reaches a crop edge inside the image.
    """
    h, w = labels.shape
    seed = image[sy, sx]
    half = 8
    while True:
        y0, y1 = max(sy - half, 0), min(sy + half + 1, h)
        x0, x1 = max(sx - half, 0), min(sx + half + 1, w)
        diff = image[y0:y1, x0:x1] - seed
        close = (labels[y0:y1, x0:x1] < 0) & ((diff ** 2).sum(axis=-1) <= tol_sq)
        components, _ = ndimage.label(close, structure=FOUR_CONNECTED)
        region = components == components[sy - y0, sx - x0]

        clipped = ((y0 > 0 and region[0].any()) or (y1 < h and region[-1].any())
                   or (x0 > 0 and region[:, 0].any()) or (x1 < w and region[:, -1].any()))
        if not clipped:
            return y0, x0, region
        half *= 2


def forward_differences(raster: np.ndarray) -> np.ndarray:
    """Horizontal and vertical two-tap differences, replicate border; shape (H, W, 2, C)"""
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim == 2:
        raster = raster[:, :, None]
    gx = np.zeros_like(raster)
    gy = np.zeros_like(raster)
    gx[:, :-1] = raster[:, 1:] - raster[:, :-1]
    gy[:-1, :] = raster[1:, :] - raster[:-1, :]
    return np.stack([gx, gy], axis=2)


def gradient_field(image: np.ndarray, plate: np.ndarray) -> GradientField:
    grad_i = forward_differences(image)
    grad_p = forward_differences(plate)
    theta = np.sqrt(((grad_i - grad_p) ** 2).sum(axis=(2, 3)))
    amp = np.maximum(np.sqrt((grad_i ** 2).sum(axis=(2, 3))), np.sqrt((grad_p ** 2).sum(axis=(2, 3))))
    return GradientField(grad_i, grad_p, theta, amp)


def edge_term(image: np.ndarray, plate: np.ndarray, labels: np.ndarray, tauA: float = 0.01,
              tauTheta: float = 0.02) -> np.ndarray:
    """
    Per superpixel: fraction of strong-gradient pixels (A > tauA) whose
    frame and plate gradients disagree (theta > tauTheta); 0 when the
    superpixel has no strong gradient at all.
    """
    if not (tauA > 0 and tauTheta > 0):
        raise ParameterError(f"thresholds must be positive, got tauA={tauA}, tauTheta={tauTheta}")
    image = np.asarray(image, dtype=np.float64)
    plate = np.asarray(plate, dtype=np.float64)
    _check_pair(image, plate)
    labels = np.asarray(labels)
    if labels.shape != image.shape[:2]:
        raise ImageError(f"labels {labels.shape} do not match image {image.shape[:2]}")

    field = gradient_field(image, plate)
    strong = field.amp > tauA
    hits = strong & (field.theta > tauTheta)

    count = labels.max() + 1
    num = np.bincount(labels.ravel(), weights=hits.ravel().astype(np.float64), minlength=count)
    den = np.bincount(labels.ravel(), weights=strong.ravel().astype(np.float64), minlength=count)
    ratio = np.divide(num, den, out=np.zeros(count), where=den > 0)
    return ratio[labels]


def register_plate(image: np.ndarray, plate: np.ndarray,
                   max_shift: int = 1) -> Tuple[np.ndarray, Tuple[int, int]]:
    """
    Undo camera shake: try every integer offset up to max_shift per axis and
    keep the one whose plate gradients best match the frame's. The score is
    the median gradient mismatch, so brightness drift and a foreground
    covering less than half the frame do not move it.
    """
    if max_shift < 0:
        raise ParameterError(f"max_shift must be nonnegative, got {max_shift}")
    image = np.asarray(image, dtype=np.float64)
    plate = np.asarray(plate, dtype=np.float64)
    _check_pair(image, plate)
    if max_shift == 0:
        return plate, (0, 0)

    h, w = image.shape[:2]
    m = max_shift
    grad_i = forward_differences(image)

    def score(offset: Tuple[int, int]) -> float:
        grad_p = forward_differences(shift_raster(plate, offset))
        mismatch = np.sqrt(((grad_i - grad_p) ** 2).sum(axis=(2, 3)))
        core = mismatch[m:h - m - 1, m:w - m - 1]
        return float(np.median(core if core.size else mismatch))

    candidates = sorted(((dy, dx) for dy in range(-m, m + 1) for dx in range(-m, m + 1)),
                        key=lambda o: (abs(o[0]) + abs(o[1]), o))
    baseline = score((0, 0))
    best, best_score = (0, 0), baseline
    for offset in candidates[1:]:
        s = score(offset)
        if s < best_score:
            best, best_score = offset, s

    if best == (0, 0) or best_score > SHIFT_GAIN * baseline:
        return plate, (0, 0)
    logger.debug(f"Registered plate with offset {best} (mismatch {baseline:.4g} -> {best_score:.4g})")
    return shift_raster(plate, best), best


def build_background_prior(image: np.ndarray, plate: np.ndarray, sigma_delta: float = 10.0,
                           hs: float = 5.0, hr: float = 5.0, radius: int = 2,
                           tauA: float = 0.01, tauTheta: float = 0.02,
                           flood_tol: float = 0.05, intensity_scale: float = 255.0,
                           smooth_edges: bool = True) -> BackgroundPrior:
    """
    Color term on intensities scaled by intensity_scale, edge term and
    superpixels on the [0, 1] rasters, combined as r0 = r_c * r_e.
    With smooth_edges the edge term compares frame and plate after both
    are averaged under the frame's bilateral weights, which keeps plate
    noise from reading as gradient mismatch.
    """
    image = np.asarray(image, dtype=np.float64)
    plate = np.asarray(plate, dtype=np.float64)
    _check_pair(image, plate)

    weights = bilateral_weights(image * intensity_scale, hs, hr, radius)
    delta = bilateral_color_distance(image * intensity_scale, plate * intensity_scale, weights=weights)
    rc = color_term(delta, sigma_delta)
    labels = flood_fill_superpixels(image, flood_tol)
    if smooth_edges:
        re = edge_term(bilateral_smooth(image, *weights), bilateral_smooth(plate, *weights),
                       labels, tauA, tauTheta)
    else:
        re = edge_term(image, plate, labels, tauA, tauTheta)
    r0 = rc * re

    logger.debug(f"Background prior: mean r_c {rc.mean():.4f}, mean r_e {re.mean():.4f}, "
                 f"mean r0 {r0.mean():.4f}, {labels.max() + 1} superpixels")
    return BackgroundPrior(r0=r0, rc=rc, re=re, delta=delta, superpixel_labels=labels,
                           sigma_delta=sigma_delta, hs=hs, hr=hr, tauA=tauA, tauTheta=tauTheta,
                           window=radius)


def background_agent_eval(z: np.ndarray, r0: np.ndarray, lambda2: float = 2.0,
                          gamma: float = 0.05) -> np.ndarray:
    """alpha = (2 r0 + 2 lambda2 z - gamma) / (2 + 2 lambda2 - 2 gamma)"""
    if lambda2 < 0:
        raise ParameterError(f"lambda2 must be nonnegative, got {lambda2}")
    denom = 2.0 + 2.0 * lambda2 - 2.0 * gamma
    if denom <= 0:
        raise ParameterError(f"gamma={gamma} must stay below 1 + lambda2 = {1 + lambda2}")
    z = np.asarray(z, dtype=np.float64)
    r0 = np.asarray(r0, dtype=np.float64)
    if z.size != r0.size:
        raise ParameterError(f"input has {z.size} entries, prior has {r0.size}")
    return (2.0 * r0.reshape(z.shape) + 2.0 * lambda2 * z - gamma) / denom


class BackgroundAgent:
    """Agent 2 bound to one rough matte r0"""

    def __init__(self, r0: np.ndarray, lambda2: float, gamma: float):
        if gamma >= 1 + lambda2:
            raise ParameterError(f"gamma={gamma} must stay below 1 + lambda2 = {1 + lambda2}")
        if gamma > 1:
            logger.warning(f"gamma={gamma} > 1: the background map is not firmly nonexpansive")
        self.r0 = np.asarray(r0, dtype=np.float64).ravel()
        self.lambda2 = lambda2
        self.gamma = gamma

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return background_agent_eval(np.asarray(z).ravel(), self.r0, self.lambda2, self.gamma)

    def as_agent(self, name: str = 'background') -> AgentOp:
        return AgentOp(name, self)
