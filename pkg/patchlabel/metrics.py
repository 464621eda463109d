"""
Evaluation metrics
------------------

Patch-level classification metrics over flat label sequences:

* plain accuracy, matches / total
* one-vs-rest accuracy, sum_c (TP_c + TN_c) / sum_c (TP_c + TN_c + FP_c + FN_c)
* weighted F1, per-class F1 weighted by true support
* Jaccard index, framewise IoU per class present in either sequence,
  averaged over those classes
* forecast MSE

Zero denominators give 0 for precision/recall/F1.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import f1_score, jaccard_score, precision_recall_fscore_support

from patchlabel.errors import DataError, DimensionError

_logger = logging.getLogger('patchlabel.metrics')


def _check_pair(preds, truths) -> Tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if preds.shape != truths.shape:
        raise DimensionError('predictions and truths differ in length', [preds.shape, truths.shape], where='metrics')
    if preds.size == 0:
        raise DataError('no patches to evaluate')
    if min(preds.min(), truths.min()) < 0:
        raise DataError('negative class id in metrics input')
    return preds, truths


def _n_classes(preds: np.ndarray, truths: np.ndarray, n_classes: Optional[int]) -> int:
    needed = int(max(preds.max(), truths.max())) + 1
    if n_classes is None:
        return needed
    if needed > n_classes:
        raise DataError(f'class id {needed - 1} outside a vocabulary of {n_classes}')
    return n_classes


def confusion_matrix(preds, truths, n_classes: Optional[int] = None) -> np.ndarray:
    """C x C counts, rows = true class, columns = predicted class"""
    preds, truths = _check_pair(preds, truths)
    size = _n_classes(preds, truths, n_classes)
    return sk_confusion_matrix(truths, preds, labels=np.arange(size)).astype(np.int64)


def accuracy(preds, truths, n_classes: Optional[int] = None) -> Tuple[float, float]:
    """
    :returns (plain accuracy, one-vs-rest accuracy over `n_classes` classes)
    """
    cm = confusion_matrix(preds, truths, n_classes)
    total = cm.sum()
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    tn = total - tp - fp - fn
    plain = tp.sum() / total
    one_vs_rest = (tp + tn).sum() / (tp + tn + fp + fn).sum()
    return float(plain), float(one_vs_rest)


def weighted_f1(preds, truths, n_classes: Optional[int] = None) -> float:
    """Per-class F1 weighted by each class's share of the true labels"""
    preds, truths = _check_pair(preds, truths)
    labels = np.arange(_n_classes(preds, truths, n_classes))
    return float(f1_score(truths, preds, labels=labels, average='weighted', zero_division=0))


def jaccard(pred_labels, true_labels) -> float:
    """Mean framewise IoU over the classes present in either sequence"""
    preds, truths = _check_pair(pred_labels, true_labels)
    present = np.union1d(preds, truths)
    return float(jaccard_score(truths, preds, labels=present, average='macro', zero_division=0))


def forecast_mse(pred_signal, true_signal) -> float:
    """Mean over all elements of the squared difference"""
    pred = np.asarray(pred_signal, dtype=np.float64)
    true = np.asarray(true_signal, dtype=np.float64)
    if pred.shape != true.shape:
        raise DimensionError('forecast and truth differ in shape', [pred.shape, true.shape], where='forecast_mse')
    if pred.size == 0:
        raise DataError('empty forecast')
    return float(np.mean((true - pred) ** 2))


@dataclass
class MetricsReport:
    """
    Classification metrics of one label sequence against its truth.
    """
    accuracy_plain: float
    accuracy_one_vs_rest: float
    weighted_f1: float
    jaccard: float
    n_patches: int
    per_class: Dict[str, Dict[str, float]] = field(default_factory=dict)
    confusion: Optional[np.ndarray] = None
    mse: Optional[float] = None

    @classmethod
    def compute(cls, preds, truths, class_names: Sequence[str], mse: Optional[float] = None) -> 'MetricsReport':
        """Every metric over one pair of sequences"""
        preds, truths = _check_pair(preds, truths)
        n_classes = len(class_names)
        labels = np.arange(_n_classes(preds, truths, n_classes))
        plain, one_vs_rest = accuracy(preds, truths, n_classes)
        precision, recall, f1, support = precision_recall_fscore_support(
            truths, preds, labels=labels, zero_division=0)

        per_class = {
            name: {
                'precision': float(precision[c]),
                'recall': float(recall[c]),
                'f1': float(f1[c]),
                'support': int(support[c]),
            }
            for c, name in enumerate(class_names)
        }
        return cls(
            accuracy_plain=plain,
            accuracy_one_vs_rest=one_vs_rest,
            weighted_f1=weighted_f1(preds, truths, n_classes),
            jaccard=jaccard(preds, truths),
            n_patches=int(preds.size),
            per_class=per_class,
            confusion=confusion_matrix(preds, truths, n_classes),
            mse=mse,
        )

    def to_dict(self) -> dict:
        """JSON-ready form (the confusion matrix is written separately)"""
        data = {
            'accuracy_plain': self.accuracy_plain,
            'accuracy_one_vs_rest': self.accuracy_one_vs_rest,
            'weighted_f1': self.weighted_f1,
            'jaccard': self.jaccard,
            'n_patches': self.n_patches,
            'per_class': self.per_class,
        }
        if self.mse is not None:
            data['mse'] = self.mse
        return data


def write_json(data: dict, path: Union[str, Path], logger: Optional[logging.Logger] = None):
    """Deterministic JSON output (sorted keys)"""
    try:
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as ex:
        raise DataError(f'cannot write {Path(path).name}: {ex}', path=path) from ex
    (logger or _logger).info('%s written', path)


def write_confusion_csv(matrix: np.ndarray, class_names: Sequence[str], path: Union[str, Path]):
    """Confusion matrix with class names as header row and first column"""
    frame = pd.DataFrame(matrix, index=list(class_names), columns=list(class_names))
    frame.index.name = 'true\\predicted'
    try:
        frame.to_csv(path, lineterminator='\n')
    except OSError as ex:
        raise DataError(f'cannot write confusion matrix: {ex}', path=path) from ex
