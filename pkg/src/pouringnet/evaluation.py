"""Threshold-accuracy curves, per-container errors and encoder comparisons."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acoustics
from .model import ModelParams
from .training import ClipSample, predict_clips

THRESHOLDS = np.round(np.arange(0.0, 10.0 + 1e-9, 0.25), 2)


class NormalizationMismatch(ValueError):
    pass


def threshold_accuracy(errors, thresholds=THRESHOLDS) -> np.ndarray:
    """Fraction of errors strictly below each threshold."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("no errors to score")
    if np.any(e < 0):
        raise ValueError("errors must be absolute values")
    e = np.sort(e)
    return np.searchsorted(e, np.asarray(thresholds, dtype=np.float64), side="left") / e.size


def amount_error(height_error, container: acoustics.ContainerSpec):
    """Convert a height error (mm) into a liquid amount (ml) for a cylinder."""
    return np.asarray(height_error, dtype=np.float64) * container.area / 1000.0


@dataclass
class ErrorRow:
    mean_mm: float
    std_mm: float
    mean_ml: float
    std_ml: float


@dataclass
class EvalReport:
    thresholds: np.ndarray
    curves: dict = field(default_factory=dict)  # variant -> fractions over all frames
    final_curves: dict = field(default_factory=dict)  # variant -> fractions over last frames
    errors: dict = field(default_factory=dict)  # variant -> container -> ErrorRow
    final_errors: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def mean_error(self, variant: str) -> float:
        return self.errors[variant]["all"].mean_mm

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_curves(out / "curves.csv", self.thresholds, self.curves)
        _write_curves(out / "curves_final_frame.csv", self.thresholds, self.final_curves)
        _write_errors(out / "errors.csv", self.errors)
        _write_errors(out / "errors_final_frame.csv", self.final_errors)
        summary = {v: {"mean_mm": rows["all"].mean_mm,
                       "frac_below_2mm": float(threshold_accuracy_at(self, v, 2.0))}
                   for v, rows in self.errors.items()}
        meta = dict(self.metadata, summary=summary)
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def threshold_accuracy_at(report: EvalReport, variant: str, threshold: float) -> float:
    i = int(np.argmin(np.abs(report.thresholds - threshold)))
    return float(report.curves[variant][i])


def _write_curves(path, thresholds, curves):
    with open(path, "w") as f:
        f.write("variant,threshold_mm,fraction\n")
        for variant in curves:
            for tau, frac in zip(thresholds, curves[variant]):
                f.write(f"{variant},{tau:.2f},{frac:.6f}\n")


def _write_errors(path, errors):
    with open(path, "w") as f:
        f.write("variant,container,mean_mm,std_mm,mean_ml,std_ml\n")
        for variant, rows in errors.items():
            for name, r in rows.items():
                f.write(f"{variant},{name},{r.mean_mm:.6f},{r.std_mm:.6f},"
                        f"{r.mean_ml:.6f},{r.std_ml:.6f}\n")


def error_table(abs_err: np.ndarray, containers: list[str]) -> dict:
    """Mean/std of per-frame absolute errors, grouped by container plus 'all'.

    ``abs_err`` has one row per clip; ``containers`` names each row's container.
    """
    names = np.asarray(containers)
    ml = np.stack([amount_error(row, acoustics.CONTAINERS[c]) for row, c in zip(abs_err, names)])
    rows = {}
    for name in sorted(set(containers)):
        sel = names == name
        rows[name] = ErrorRow(float(abs_err[sel].mean()), float(abs_err[sel].std()),
                              float(ml[sel].mean()), float(ml[sel].std()))
    rows["all"] = ErrorRow(float(abs_err.mean()), float(abs_err.std()),
                           float(ml.mean()), float(ml.std()))
    return rows


def _check_normalization(checkpoints: dict) -> None:
    reference = None
    for name, params in checkpoints.items():
        norm = tuple(sorted(params.normalization.items()))
        if reference is None:
            reference = (name, norm)
        elif norm != reference[1]:
            raise NormalizationMismatch(
                f"checkpoint {name!r} was trained with normalization {dict(norm)}, "
                f"but {reference[0]!r} used {dict(reference[1])}")


def compare_variants(checkpoints: dict[str, ModelParams], test_set: list[ClipSample],
                     metadata: dict | None = None, thresholds=THRESHOLDS) -> EvalReport:
    """Score every checkpoint on the identical frames of ``test_set``."""
    if not test_set:
        raise ValueError("empty test set")
    _check_normalization(checkpoints)
    truth = np.stack([c.labels for c in test_set])
    containers = [c.container for c in test_set]
    report = EvalReport(np.asarray(thresholds, dtype=np.float64), metadata=dict(metadata or {}))
    for variant, params in checkpoints.items():
        abs_err = np.abs(predict_clips(params, test_set) - truth)
        report.curves[variant] = threshold_accuracy(abs_err, thresholds)
        report.final_curves[variant] = threshold_accuracy(abs_err[:, -1], thresholds)
        report.errors[variant] = error_table(abs_err, containers)
        report.final_errors[variant] = error_table(abs_err[:, -1:], containers)
    return report
