"""
Synthetic frame/plate/ground-truth generator
Parametric foreground shapes composited over textured plates, with the
plate imperfections seen on set: brightness drift, vibration and
foreground colors close to the background.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from errors import ParameterError
from image_io import save_image, save_matte, shift_raster

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneSpec:
    """Scene descriptor; every random choice is drawn from seed"""
    height: int = 64
    width: int = 64
    frames: int = 1
    shape: str = 'square'
    size: int = 24
    center: Optional[Tuple[float, float]] = None
    velocity: Tuple[float, float] = (0.0, 0.0)
    fg_color: Tuple[float, float, float] = (0.9, 0.15, 0.1)
    plate_color: Tuple[float, float, float] = (0.25, 0.45, 0.6)
    tile_amp: float = 0.02
    tile_size: int = 1
    smooth_amp: float = 0.0
    smooth_period: float = 48.0
    grain_amp: float = 0.0
    brightness_drift: float = 0.0
    jitter: int = 0
    noise_sigma: float = 0.0
    color_proximity: float = 0.0


@dataclass
class SyntheticScene:
    frames: List[np.ndarray]
    plate: np.ndarray
    truths: List[np.ndarray]
    background: np.ndarray
    plate_offset: Tuple[int, int] = (0, 0)
    spec: SceneSpec = field(default_factory=SceneSpec)


def textured_plate(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Base color, a two-tone checker weave of tile_size pixels (flat tiles,
    sharp steps), an optional low-frequency sinusoid per channel and optional grain.
    """
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    checker = ((yy // spec.tile_size + xx // spec.tile_size) % 2)[:, :, None]
    plate = np.empty((spec.height, spec.width, 3))
    for c in range(3):
        angle = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / spec.smooth_period + phase)
        plate[:, :, c] = spec.plate_color[c] + spec.smooth_amp * wave
    plate += spec.tile_amp * checker
    if spec.grain_amp > 0:
        plate += rng.uniform(-spec.grain_amp, spec.grain_amp, size=plate.shape)
    return np.clip(plate, 0.0, 1.0)


def shape_mask(spec: SceneSpec, center: Tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    cy, cx = center
    half = spec.size / 2.0
    if spec.shape == 'square':
        top, left = int(round(cy - half)), int(round(cx - half))
        mask = np.zeros((spec.height, spec.width))
        mask[max(top, 0):max(top + spec.size, 0), max(left, 0):max(left + spec.size, 0)] = 1.0
        return mask
    if spec.shape == 'disk':
        return (((yy - cy) ** 2 + (xx - cx) ** 2) <= half * half).astype(np.float64)
    raise ParameterError(f"unknown shape '{spec.shape}'")


def synth_generate(spec: SceneSpec, seed: int = 0) -> SyntheticScene:
    """Deterministic given (spec, seed)"""
    if spec.tile_size < 1:
        raise ParameterError(f"tile_size must be at least 1, got {spec.tile_size}")
    rng = np.random.default_rng(seed)
    background = textured_plate(spec, rng)

    fg = (1.0 - spec.color_proximity) * np.asarray(spec.fg_color) \
        + spec.color_proximity * np.asarray(spec.plate_color)
    start = spec.center or ((spec.height - 1) / 2.0 + 0.5, (spec.width - 1) / 2.0 + 0.5)

    frames, truths = [], []
    for t in range(spec.frames):
        center = (start[0] + t * spec.velocity[0], start[1] + t * spec.velocity[1])
        alpha = shape_mask(spec, center)
        frames.append(alpha[:, :, None] * fg[None, None, :] + (1.0 - alpha[:, :, None]) * background)
        truths.append(alpha)

    offset = (0, 0)
    if spec.jitter > 0:
        axis = int(rng.integers(0, 2))
        sign = 1 if rng.integers(0, 2) else -1
        offset = (sign * spec.jitter, 0) if axis == 0 else (0, sign * spec.jitter)

    plate = shift_raster(background, offset) + spec.brightness_drift
    if spec.noise_sigma > 0:
        plate = plate + rng.normal(0.0, spec.noise_sigma, size=plate.shape)
    plate = np.clip(plate, 0.0, 1.0)

    logger.debug(f"Synthesized {spec.frames} frame(s) of {spec.width}x{spec.height}, plate offset {offset}")
    return SyntheticScene(frames=frames, plate=plate, truths=truths, background=background,
                          plate_offset=offset, spec=spec)


def write_sequence(dirpath: str, scene: SyntheticScene) -> List[str]:
    """Lay a scene out as frames/, plate.png and gt/; returns the frame paths"""
    frame_dir = os.path.join(dirpath, 'frames')
    gt_dir = os.path.join(dirpath, 'gt')
    os.makedirs(frame_dir, exist_ok=True)
    os.makedirs(gt_dir, exist_ok=True)

    save_image(scene.plate, os.path.join(dirpath, 'plate.png'))
    paths = []
    for t, (frame, truth) in enumerate(zip(scene.frames, scene.truths)):
        name = f"frame_{t:04d}.png"
        save_image(frame, os.path.join(frame_dir, name))
        save_matte(truth, os.path.join(gt_dir, name))
        paths.append(os.path.join(frame_dir, name))
    logger.info(f"Wrote {len(paths)} synthetic frames to {dirpath}")
    return paths
