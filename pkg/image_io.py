"""
Raster I/O for frames, plates and mattes
8-bit and 16-bit PNG / PGM through Pillow, values normalized to [0, 1]
"""

import logging
import os
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from errors import ImageError

logger = logging.getLogger(__name__)

SUPPORTED_EXTENSIONS = ('.png', '.pgm', '.ppm', '.pnm')
SIXTEEN_BIT_MODES = ('I', 'I;16', 'I;16B', 'I;16L', 'I;16N')


def is_supported(path: str) -> bool:
    return os.path.splitext(path)[1].lower() in SUPPORTED_EXTENSIONS


def load_image(path: str, color: bool = True, downsample: int = 1) -> np.ndarray:
    """
    Read a raster as float64 in [0, 1]: H x W x 3 when color is set
    (grayscale is replicated), H x W otherwise.
    """
    if not is_supported(path):
        raise ImageError(f"unsupported format for {path}; use one of {', '.join(SUPPORTED_EXTENSIONS)}")
    try:
        with Image.open(path) as img:
            img.load()
            if downsample > 1:
                img = _reduce(img, downsample)
            arr, max_val = _to_array(img)
    except ImageError:
        raise
    except Exception as e:
        raise ImageError(f"cannot read {path}: {e}") from e

    arr = arr.astype(np.float64) / max_val
    if color and arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif not color and arr.ndim == 3:
        arr = arr.mean(axis=2)
    return arr


def _reduce(img: Image.Image, factor: int) -> Image.Image:
    width = max(1, img.width // factor)
    height = max(1, img.height // factor)
    if img.mode in SIXTEEN_BIT_MODES:
        img = img.convert('I')
    return img.resize((width, height), resample=Image.BOX)


def _to_array(img: Image.Image) -> Tuple[np.ndarray, float]:
    if img.mode in SIXTEEN_BIT_MODES:
        return np.asarray(img, dtype=np.int64).astype(np.float64), 65535.0
    if img.mode in ('L', 'RGB'):
        return np.asarray(img), 255.0
    if img.mode in ('1', 'P', 'LA', 'RGBA', 'CMYK'):
        target = 'L' if img.mode in ('1', 'LA') else 'RGB'
        return np.asarray(img.convert(target)), 255.0
    raise ImageError(f"unsupported pixel mode {img.mode}")


def load_pair(frame_path: str, plate_path: str, downsample: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Frame and plate as color rasters of identical size"""
    frame = load_image(frame_path, downsample=downsample)
    plate = load_image(plate_path, downsample=downsample)
    if frame.shape != plate.shape:
        raise ImageError(f"frame {frame_path} is {frame.shape[1]}x{frame.shape[0]} but "
                         f"plate {plate_path} is {plate.shape[1]}x{plate.shape[0]}")
    return frame, plate


def save_matte(matte: np.ndarray, path: str, bits: int = 8) -> None:
    """Clamp to [0, 1], quantize to 8 or 16 bits and write a grayscale raster"""
    if bits not in (8, 16):
        raise ImageError(f"bit depth must be 8 or 16, got {bits}")
    if not is_supported(path):
        raise ImageError(f"unsupported format for {path}; use one of {', '.join(SUPPORTED_EXTENSIONS)}")
    matte = np.asarray(matte, dtype=np.float64)
    if matte.ndim != 2:
        raise ImageError(f"matte must be H x W, got {matte.shape}")

    clipped = np.clip(np.nan_to_num(matte), 0.0, 1.0)
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)

    try:
        if bits == 8:
            img = Image.fromarray(np.round(clipped * 255.0).astype(np.uint8), mode='L')
        else:
            img = Image.fromarray(np.round(clipped * 65535.0).astype(np.int32), mode='I')
        img.save(path)
    except Exception as e:
        raise ImageError(f"cannot write {path}: {e}") from e
    logger.debug(f"Saved {matte.shape[1]}x{matte.shape[0]} matte ({bits}-bit) to {path}")


def save_image(image: np.ndarray, path: str) -> None:
    """Write an H x W x 3 [0, 1] raster as 8-bit RGB"""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageError(f"image must be H x W x 3, got {image.shape}")
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    try:
        Image.fromarray(np.round(image * 255.0).astype(np.uint8), mode='RGB').save(path)
    except Exception as e:
        raise ImageError(f"cannot write {path}: {e}") from e


def find_raster(folder: str, stem: str) -> Optional[str]:
    """First supported file in folder whose name without extension is stem"""
    for ext in SUPPORTED_EXTENSIONS:
        candidate = os.path.join(folder, stem + ext)
        if os.path.exists(candidate):
            return candidate
    return None


def shift_raster(raster: np.ndarray, offset: Tuple[int, int]) -> np.ndarray:
    """out[y, x] = raster[y - dy, x - dx] with the border replicated"""
    dy, dx = offset
    h, w = raster.shape[:2]
    pad = max(abs(dy), abs(dx))
    if pad == 0:
        return raster.copy()
    widths = ((pad, pad), (pad, pad)) + ((0, 0),) * (raster.ndim - 2)
    padded = np.pad(raster, widths, mode='edge')
    return padded[pad - dy:pad - dy + h, pad - dx:pad - dx + w].copy()
