#!/usr/bin/env python3
"""
Test Metrics
Soft IoU, MAE, contour F and the metric report
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import ImageError
from metrics import MetricReport, boundary_map, contour_f, evaluate_pair, iou, mae


def square(size=8, top=2, left=2, side=4):
    mask = np.zeros((size, size))
    mask[top:top + side, left:left + side] = 1.0
    return mask


def test_iou_examples():
    gt = square()
    assert iou(gt, gt) == 1.0
    assert iou(1 - gt, gt) == 0.0
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    pred = np.array([[1.0, 1.0, 0.0]])
    truth = np.array([[0.0, 1.0, 1.0]])
    assert iou(pred, truth) == pytest.approx(1.0 / 3.0)


def test_mae_examples():
    rng = np.random.default_rng(0)
    gt = rng.uniform(0.0, 0.8, size=(5, 7))
    assert mae(gt, gt) == 0.0
    assert mae(gt + 0.1, gt) == pytest.approx(0.1)

    pred = rng.random((5, 7))
    total = 0.0
    for y in range(5):
        for x in range(7):
            total += abs(pred[y, x] - gt[y, x])
    assert mae(pred, gt) == pytest.approx(total / 35, abs=1e-12)


def test_metrics_are_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.random((9, 9)), rng.random((9, 9))
    assert iou(a, b) == pytest.approx(iou(b, a))
    assert mae(a, b) == pytest.approx(mae(b, a))
    assert contour_f(a, b) == pytest.approx(contour_f(b, a))


def test_boundary_map_ignores_raster_border():
    full = np.ones((4, 4))
    assert not boundary_map(full).any()
    assert boundary_map(square()).sum() == 12


def test_contour_f_examples():
    gt = square()
    assert contour_f(gt, gt) == 1.0
    assert contour_f(square(16, 1, 1, 3), square(16, 11, 11, 3)) == 0.0
    assert contour_f(square(left=3), gt, tol_px=2) == 1.0
    assert contour_f(np.zeros((8, 8)), np.zeros((8, 8))) == 1.0
    assert contour_f(np.zeros((8, 8)), gt) == 0.0


def test_dimension_mismatch():
    with pytest.raises(ImageError):
        iou(np.zeros((3, 3)), np.zeros((3, 4)))


def test_report_lines_and_aggregate():
    report = MetricReport()
    report.add('frame_0000', evaluate_pair(square(), square()), iterations=12, converged=True)
    report.add('frame_0001', {'iou': 0.5, 'mae': 0.25, 'contour_f': 0.0}, iterations=30, converged=False)

    assert len(report) == 2
    assert report.iou == pytest.approx(0.75)
    assert report.mae == pytest.approx(0.125)
    assert report.aggregate()['iterations'] == pytest.approx(21.0)

    lines = report.to_lines()
    assert lines[0] == 'frame=frame_0000 iou=1 mae=0 contour_f=1 iterations=12 converged=yes'
    assert lines[1].endswith('converged=no')
    assert lines[-1].startswith('aggregate frames=2 iou=0.75 mae=0.125 contour_f=0.5 iterations=21')
    assert report.to_text().endswith('\n')


def test_empty_report():
    report = MetricReport()
    assert report.aggregate() == {}
    assert np.isnan(report.iou)
    assert report.to_lines() == []
