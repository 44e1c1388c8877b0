"""Per-cell cross-validation reports and their csv/json/markdown renderings."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError

SYNTHETIC_NOTE = ("Values come from synthetic data generated by this package; "
                  "they are not measurements on any real cohort.")
STD_NOTE = "Cells show mean ± population standard deviation over folds."


@dataclass
class RunReport:
    """Fold-wise AUC/F1 of one (model, pipeline, ablation) cell."""

    cell_id: str
    model: str
    pipeline: str
    flags: dict = field(default_factory=dict)
    fold_auc: list[float] = field(default_factory=list)
    fold_f1: list[float] = field(default_factory=list)
    fold_info: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.fold_auc) != len(self.fold_f1):
            raise DataError("fold_auc and fold_f1 must have the same length")

    @property
    def k(self) -> int:
        return len(self.fold_auc)

    @property
    def auc_mean(self) -> float:
        return float(np.mean(self.fold_auc))

    @property
    def auc_std(self) -> float:
        return float(np.std(self.fold_auc))

    @property
    def f1_mean(self) -> float:
        return float(np.mean(self.fold_f1))

    @property
    def f1_std(self) -> float:
        return float(np.std(self.fold_f1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(auc_mean=self.auc_mean, auc_std=self.auc_std,
                 f1_mean=self.f1_mean, f1_std=self.f1_std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        keys = ("cell_id", "model", "pipeline", "flags", "fold_auc", "fold_f1", "fold_info")
        return cls(**{k: d[k] for k in keys if k in d})


def format_cell(mean: float, std: float) -> str:
    """Two-decimal "mean ± std"."""
    return f"{mean:.2f} ± {std:.2f}"


def to_markdown(reports: list[RunReport], title: str | None = None, synthetic: bool = True) -> str:
    lines = []
    if title:
        lines += [f"# {title}", ""]
    if synthetic:
        lines += [f"> {SYNTHETIC_NOTE}", ""]
    lines += [f"{STD_NOTE} k = {reports[0].k}.", ""]
    lines += ["| Model | Pipeline | AUC | F1 |", "|---|---|---|---|"]
    for r in reports:
        lines.append(f"| {r.cell_id} | {r.pipeline} | {format_cell(r.auc_mean, r.auc_std)} "
                     f"| {format_cell(r.f1_mean, r.f1_std)} |")
    return "\n".join(lines) + "\n"


def to_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell_id", "model", "pipeline", "flags", "metric", "mean", "std", "folds"])
    for r in reports:
        flags = json.dumps(r.flags, sort_keys=True)
        for metric, vals in (("auc", r.fold_auc), ("f1", r.fold_f1)):
            w.writerow([r.cell_id, r.model, r.pipeline, flags, metric,
                        repr(float(np.mean(vals))), repr(float(np.std(vals))),
                        ";".join(repr(float(v)) for v in vals)])
    return buf.getvalue()


def to_json(reports: list[RunReport], synthetic: bool = True) -> str:
    doc = {"synthetic": synthetic, "std": "population",
           "reports": [r.to_dict() for r in reports]}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_reports(path) -> list[RunReport]:
    doc = json.loads(Path(path).read_text())
    return [RunReport.from_dict(d) for d in doc["reports"]]


def write_report(reports: list[RunReport], path, fmt: str | None = None, title: str | None = None,
                 synthetic: bool = True) -> Path:
    """Write ``reports`` as csv, json or markdown (inferred from the suffix if ``fmt`` is None)."""
    if not reports:
        raise DataError("no reports to write")
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt in ("md", "markdown"):
        text = to_markdown(reports, title, synthetic)
    elif fmt == "csv":
        text = to_csv(reports)
    elif fmt == "json":
        text = to_json(reports, synthetic)
    else:
        raise DataError(f"unknown report format {fmt!r}")
    path.write_text(text, encoding="utf-8")
    return path
