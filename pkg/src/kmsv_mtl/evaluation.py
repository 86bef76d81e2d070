"""Prediction, nMSE / weight-error metrics and CSV exports of fitted models."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, MetricError
from .spectral import SpectrumView, singular_spectrum
from .tasks import ModelParams, MultiTaskDataset

__all__ = [
    "MetricReport",
    "predict",
    "predict_dataset",
    "nmse",
    "nmse_pooled",
    "explained_weight_error",
    "evaluate",
    "export_spectrum",
    "export_convergence",
    "write_metrics_csv",
    "write_spectrum_csv",
    "write_convergence_csv",
    "fmt",
]


@dataclass
class MetricReport:
    nmse_per_task: list
    nmse_mean: float
    nmse_pooled: float
    spectrum: SpectrumView
    ew: float = None
    task_ids: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def predict(params: ModelParams, task_index, X_new) -> np.ndarray:
    """``W_t' X_new + b_t 1'`` for task ``task_index``; ``X_new`` is ``d x m``."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[:, None]
    Wt = params.task_weights(task_index)
    if X_new.shape[0] != Wt.shape[0]:
        raise InputError(
            f"X_new has {X_new.shape[0]} features, model expects {Wt.shape[0]}"
        )
    return Wt.T @ X_new + params.b[task_index][:, None]


def predict_dataset(params, dataset: MultiTaskDataset):
    return [predict(params, t, task.X) for t, task in enumerate(dataset)]


def nmse(predictions, truths):
    """Per-task MSE divided by the (population) variance of the true targets.

    Returns
    -------
    per_task : list of float
    mean : float
        Uniform average over tasks.
    """
    if len(predictions) != len(truths):
        raise InputError("predictions and truths must cover the same tasks")
    out = []
    for t, (p, y) in enumerate(zip(predictions, truths)):
        p = np.asarray(p, dtype=float)
        y = np.asarray(y, dtype=float)
        if p.shape != y.shape:
            raise InputError(f"task {t}: prediction shape {p.shape} != truth {y.shape}")
        var = float(np.mean((y - y.mean(axis=-1, keepdims=True)) ** 2))
        if var <= 0:
            raise MetricError(f"task {t}: truth has zero variance, nMSE undefined")
        out.append(float(np.mean((p - y) ** 2)) / var)
    return out, float(np.mean(out))


def nmse_pooled(predictions, truths) -> float:
    """MSE over all pooled test samples divided by the pooled target variance."""
    p = np.concatenate([np.asarray(v, dtype=float).ravel() for v in predictions])
    y = np.concatenate([np.asarray(v, dtype=float).ravel() for v in truths])
    var = float(np.var(y))
    if var <= 0:
        raise MetricError("pooled truth has zero variance, nMSE undefined")
    return float(np.mean((p - y) ** 2)) / var


def explained_weight_error(W, W_star, T=None) -> float:
    """``||W - W*||_F^2 / T`` (``T`` defaults to the number of columns)."""
    W = np.asarray(W, dtype=float)
    W_star = np.asarray(W_star, dtype=float)
    if W.shape != W_star.shape:
        raise InputError(f"W {W.shape} and W* {W_star.shape} differ in shape")
    if T is None:
        T = W.shape[1]
    return float(np.sum((W - W_star) ** 2)) / T


def evaluate(params, test: MultiTaskDataset, W_star=None, metadata=None) -> MetricReport:
    preds = predict_dataset(params, test)
    truths = [task.Y for task in test]
    per_task, mean = nmse(preds, truths)
    ew = None
    if W_star is not None:
        ew = explained_weight_error(params.W, W_star, test.T)
    return MetricReport(
        nmse_per_task=per_task,
        nmse_mean=mean,
        nmse_pooled=nmse_pooled(preds, truths),
        spectrum=singular_spectrum(params.W),
        ew=ew,
        task_ids=test.names,
        metadata=dict(metadata or {}),
    )


def export_spectrum(params) -> np.ndarray:
    """Singular values of the fitted ``W`` in descending order."""
    return singular_spectrum(params.W).descending()


def export_convergence(report) -> list:
    return list(report.objective_trace)


def fmt(x) -> str:
    """Round-trippable float formatting; ``None`` becomes an empty cell."""
    if x is None:
        return ""
    return repr(float(x))


def write_metrics_csv(path, report: MetricReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "nmse"])
        for tid, v in zip(report.task_ids, report.nmse_per_task):
            w.writerow([tid, fmt(v)])


def write_spectrum_csv(path, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "singular_value"])
        for i, v in enumerate(values, start=1):
            w.writerow([i, fmt(v)])


def write_convergence_csv(path, series):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(series, start=1):
            w.writerow([i, fmt(v)])
