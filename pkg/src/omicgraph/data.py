"""Feature matrices of omics profiles and their on-disk formats.

CSV layout: header ``sample_id,label,<feature_id>...``; one row per sample.
Alias sidecar TSV: ``feature_id<TAB>namespace<TAB>identifier`` per line.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class FeatureMatrix:
    """Samples x features matrix with identifiers and binary labels (1 = case)."""

    values: np.ndarray
    sample_ids: list[str]
    feature_ids: list[str]
    labels: np.ndarray
    id_aliases: dict[str, dict[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.sample_ids = [str(s) for s in self.sample_ids]
        self.feature_ids = [str(f) for f in self.feature_ids]
        if self.values.ndim != 2:
            raise DataError("feature values must be a 2-D matrix")
        n, p = self.values.shape
        if len(self.sample_ids) != n or self.labels.shape != (n,):
            raise DataError("sample_ids and labels must have one entry per row")
        if len(self.feature_ids) != p:
            raise DataError("feature_ids must have one entry per column")
        if len(set(self.feature_ids)) != p:
            raise DataError("feature ids must be unique")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 (control) or 1 (case)")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def rows(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(
            self.values[idx], [self.sample_ids[i] for i in idx], list(self.feature_ids),
            self.labels[idx], self.id_aliases,
        )

    def columns(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        kept = [self.feature_ids[j] for j in idx]
        aliases = {f: self.id_aliases[f] for f in kept if f in self.id_aliases}
        return FeatureMatrix(self.values[:, idx], list(self.sample_ids), kept, self.labels.copy(), aliases)

    def with_values(self, values) -> "FeatureMatrix":
        return FeatureMatrix(values, list(self.sample_ids), list(self.feature_ids),
                             self.labels.copy(), self.id_aliases)

    def feature_index(self, feature_id: str) -> int:
        try:
            return self.feature_ids.index(feature_id)
        except ValueError:
            raise DataError(f"unknown feature id {feature_id!r}") from None


def read_csv(path, alias_path=None) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "sample_id" or header[1] != "label":
            raise DataError(f"{path}: header must start with sample_id,label")
        feature_ids = header[2:]
        sample_ids, labels, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            sample_ids.append(row[0])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_ids))
    if not np.isfinite(values).all():
        raise DataError(f"{path}: non-finite feature values")
    aliases = read_aliases(alias_path) if alias_path else {}
    return FeatureMatrix(values, sample_ids, feature_ids, np.array(labels, dtype=np.int64), aliases)


def write_csv(m: FeatureMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", *m.feature_ids])
        for sid, lab, row in zip(m.sample_ids, m.labels, m.values):
            w.writerow([sid, int(lab), *(repr(float(v)) for v in row)])


def read_aliases(path) -> dict[str, dict[str, str]]:
    """Parse ``feature_id, namespace, identifier`` TSV into nested dicts."""
    out: dict[str, dict[str, str]] = {}
    path = Path(path)
    if not path.exists():
        raise DataError(f"alias file not found: {path}")
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            fid, ns, ident = (p.strip() for p in parts)
            out.setdefault(fid, {})[ns] = ident
    return out


def write_aliases(aliases: dict[str, dict[str, str]], path) -> None:
    with Path(path).open("w") as fh:
        for fid in aliases:
            for ns, ident in aliases[fid].items():
                fh.write(f"{fid}\t{ns}\t{ident}\n")
