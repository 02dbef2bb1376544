"""
Matte evaluation: soft IoU, mean absolute error and boundary F-measure
"""

import logging
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy import ndimage

from errors import ImageError

logger = logging.getLogger(__name__)

BINARIZE_AT = 0.5
METRIC_COLUMNS = ['iou', 'mae', 'contour_f']


def _check_dims(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ImageError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """sum(min) / sum(max); 1 when both mattes are all zero"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_dims(pred, gt)
    union = np.maximum(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.minimum(pred, gt).sum() / union)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_dims(pred, gt)
    return float(np.abs(pred - gt).mean())


def boundary_map(mask: np.ndarray) -> np.ndarray:
    """Pixels of mask with a 4-neighbor outside it; the raster border does not count"""
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1),
                                    border_value=1)
    return mask & ~eroded


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def contour_f(pred: np.ndarray, gt: np.ndarray, tol_px: int = 2) -> float:
    """
    Boundary F-measure of the mattes binarized at 0.5. A boundary pixel is
    matched when the other boundary lies within tol_px (disk dilation).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_dims(pred, gt)

    pred_b = boundary_map(pred > BINARIZE_AT)
    gt_b = boundary_map(gt > BINARIZE_AT)
    n_pred, n_gt = pred_b.sum(), gt_b.sum()

    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0

    structure = disk(tol_px)
    gt_zone = ndimage.binary_dilation(gt_b, structure=structure)
    pred_zone = ndimage.binary_dilation(pred_b, structure=structure)
    precision = (pred_b & gt_zone).sum() / n_pred
    recall = (gt_b & pred_zone).sum() / n_gt

    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def evaluate_pair(pred: np.ndarray, gt: np.ndarray, tol_px: int = 2) -> Dict[str, float]:
    return {
        'iou': iou(pred, gt),
        'mae': mae(pred, gt),
        'contour_f': contour_f(pred, gt, tol_px),
    }


class MetricReport:
    """Per-frame metric table with an aggregate of means"""

    def __init__(self, records: Optional[Iterable[Dict]] = None):
        self.records: List[Dict] = list(records or [])

    def add(self, frame: str, metrics: Dict[str, float], **extra) -> None:
        row = {'frame': str(frame)}
        row.update(metrics)
        row.update(extra)
        self.records.append(row)

    @property
    def frames(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def aggregate(self) -> Dict[str, float]:
        """Means over frames of every numeric column"""
        if not self.records:
            return {}
        df = self.frames
        numeric = df.select_dtypes(include=[np.number, bool])
        return {col: float(numeric[col].mean()) for col in numeric.columns}

    @property
    def iou(self) -> float:
        return self.aggregate().get('iou', float('nan'))

    @property
    def mae(self) -> float:
        return self.aggregate().get('mae', float('nan'))

    @property
    def contour_f(self) -> float:
        return self.aggregate().get('contour_f', float('nan'))

    def to_lines(self) -> List[str]:
        """One 'key=value' record per frame plus an aggregate line, 6 significant digits"""
        lines = []
        for row in self.records:
            lines.append(' '.join(f"{k}={_fmt(v)}" for k, v in row.items()))
        agg = self.aggregate()
        if agg:
            lines.append(f"aggregate frames={len(self.records)} "
                         + ' '.join(f"{k}={_fmt(v)}" for k, v in agg.items()))
        return lines

    def to_text(self) -> str:
        return '\n'.join(self.to_lines()) + '\n'

    def log_summary(self) -> None:
        agg = self.aggregate()
        if agg:
            summary = ', '.join(f"{k}={_fmt(agg[k])}" for k in METRIC_COLUMNS if k in agg)
            logger.info(f"Metrics over {len(self.records)} frames: {summary}")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'yes' if value else 'no'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)
