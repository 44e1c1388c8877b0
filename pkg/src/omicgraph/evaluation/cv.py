"""Stratified k-fold splits with a stratified validation carve-out."""
from __future__ import annotations

import numpy as np
from sklearn.model_selection import StratifiedKFold, train_test_split

from ..errors import DataError


def stratified_kfold(labels, k: int = 10, seed: int = 0, val_fraction: float = 0.1
                     ) -> list:
    """``k`` stratified folds; each fold's training part loses ``val_fraction`` to validation.

    Every sample is tested exactly once and per-fold class counts are within one
    of proportional. The validation split is stratified too; it is left empty
    when the training part is too small to hold both classes in it.
    """
    from ..train import SplitMask  # train imports metrics from this package

    labels = np.asarray(labels).reshape(-1)
    if k < 2:
        raise DataError("k must be at least 2")
    if not 0 <= val_fraction < 1:
        raise DataError("val_fraction must lie in [0, 1)")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size != 2:
        raise DataError("stratified folds need exactly two classes")
    if counts.min() < k:
        raise DataError(f"smallest class has {counts.min()} members, fewer than k={k}")
    skf = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = []
    for f, (train, test) in enumerate(skf.split(np.zeros(labels.size), labels)):
        val = np.zeros(0, dtype=np.int64)
        n_val = int(round(val_fraction * train.size))
        train_counts = np.bincount(labels[train].astype(np.int64), minlength=2)
        if n_val >= 2 and train_counts.min() >= 2 and train.size - n_val >= 2:
            train, val = train_test_split(train, test_size=n_val, stratify=labels[train],
                                          random_state=seed * 1009 + f)
        folds.append(SplitMask(np.sort(train), np.sort(val), np.sort(test)))
    return folds
