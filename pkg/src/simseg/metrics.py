"""Confusion-matrix IoU evaluation."""

import numpy as np

from .labels import DONT_CARE


class ConfusionMatrix:
    """Integer counts indexed [ground truth, prediction]."""

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self.mat = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, gt, pred):
        gt = np.asarray(gt).ravel().astype(np.int64)
        pred = np.asarray(pred).ravel().astype(np.int64)
        if gt.shape != pred.shape:
            raise ValueError("prediction and ground truth differ in size")
        n = self.num_classes
        keep = (gt != DONT_CARE) & (gt < n) & (pred < n)
        self.mat += np.bincount(n * gt[keep] + pred[keep], minlength=n * n).reshape(n, n)

    def iou(self):
        """Per-class IoU; NaN for classes absent from both GT and prediction."""
        tp = np.diag(self.mat).astype(np.float64)
        denom = self.mat.sum(axis=0) + self.mat.sum(axis=1) - np.diag(self.mat)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)

    def miou(self):
        iou = self.iou()
        if np.all(np.isnan(iou)):
            raise ValueError("no classes present to evaluate")
        return float(np.nanmean(iou))


def score(predictions, labels, num_classes):
    cm = ConfusionMatrix(num_classes)
    for pred, gt in zip(predictions, labels):
        cm.update(gt, pred)
    return cm
