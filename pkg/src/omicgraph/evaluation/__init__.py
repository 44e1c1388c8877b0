"""Cross-validation, metrics, the experiment matrix and report writers."""
from .metrics import auc, f1
from .cv import stratified_kfold
from .report import RunReport, format_cell, read_reports, write_report

_MATRIX = ("Cell", "ExperimentConfig", "prepare_features", "run_matrix", "table_i_cells",
           "table_ii_cells")


def __getattr__(name):
    # matrix pulls in preprocess, which itself needs metrics; load it on first use
    if name in _MATRIX:
        from . import matrix
        return getattr(matrix, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "auc", "f1", "stratified_kfold", "RunReport", "format_cell", "read_reports", "write_report",
    "Cell", "ExperimentConfig", "prepare_features", "run_matrix", "table_i_cells", "table_ii_cells",
]
