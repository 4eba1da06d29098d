"""Accuracy and uncertainty-calibration metrics.

RMSE measures map accuracy alone.  NLPD is the mean negative Gaussian
log density of the held-out truth under the predictive distribution.
Sparsification curves track the MAE of the predictions remaining after
removing the most-uncertain fraction; AUSE integrates the gap between
that curve and the oracle curve obtained by removing the largest true
errors instead.  Lower is better for all three.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

AUSE_FRACTION_COUNT = 50


@dataclass
class EvalReport:
    rmse: float
    nlpd: float
    ause: float
    n_test: int
    fractions: np.ndarray
    model_curve: np.ndarray
    oracle_curve: np.ndarray
    variance_kind: str = "predictive"  # or "latent"

    def to_text(self) -> str:
        lines = [
            f"# variance={self.variance_kind}",
            f"rmse={self.rmse:.17g}",
            f"nlpd={self.nlpd:.17g}",
            f"ause={self.ause:.17g}",
            f"n_test={self.n_test}",
        ]
        return "\n".join(lines) + "\n"

    def curves_csv(self) -> str:
        rows = ["fraction,model_mae,oracle_mae"]
        for f, m, o in zip(self.fractions, self.model_curve, self.oracle_curve):
            rows.append(f"{f:.17g},{m:.17g},{o:.17g}")
        return "\n".join(rows) + "\n"


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise InvalidInputError("prediction/truth length mismatch")
    if pred.size == 0:
        raise InvalidInputError("rmse needs at least one point")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def nlpd(pred_mean, pred_var, truth) -> float:
    pred_mean = np.asarray(pred_mean, dtype=float)
    pred_var = np.asarray(pred_var, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not (pred_mean.shape == pred_var.shape == truth.shape):
        raise InvalidInputError("prediction/variance/truth length mismatch")
    bad = np.flatnonzero(pred_var <= 0)
    if bad.size:
        raise InvalidInputError(
            f"predictive variance must be positive; var[{int(bad[0])}] = {pred_var[bad[0]]}"
        )
    logdens = -0.5 * np.log(2.0 * np.pi * pred_var) - (truth - pred_mean) ** 2 / (
        2.0 * pred_var
    )
    return float(-np.mean(logdens))


def _removal_order(score: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score; ties broken by ascending
    original index (stable sort on the negated scores)."""
    return np.argsort(-score, kind="stable")


def sparsification(abs_err, uncertainty, fractions) -> tuple[np.ndarray, np.ndarray]:
    """Model and oracle MAE curves over the removal fractions.

    For fraction a, the model curve removes the floor(a*q) points with
    the highest uncertainty; the oracle removes the highest errors.
    """
    abs_err = np.asarray(abs_err, dtype=float)
    uncertainty = np.asarray(uncertainty, dtype=float)
    if abs_err.shape != uncertainty.shape:
        raise InvalidInputError("error/uncertainty length mismatch")
    fractions = np.asarray(fractions, dtype=float)
    q = abs_err.size

    def curve(order):
        # cumulative sum over the reversed removal order gives the MAE of
        # every suffix in one pass
        errs = abs_err[order]
        suffix = np.cumsum(errs[::-1])[::-1]
        out = np.empty(fractions.size)
        for i, a in enumerate(fractions):
            k = int(np.floor(a * q))
            kept = q - k
            out[i] = suffix[k] / kept if kept > 0 else np.nan
        return out

    return curve(_removal_order(uncertainty)), curve(_removal_order(abs_err))


def ause(abs_err, uncertainty) -> float:
    """Trapezoidal area between the model and oracle sparsification
    curves over 50 evenly spaced fractions 0, 1/50, ..., 49/50."""
    abs_err = np.asarray(abs_err, dtype=float)
    if abs_err.size < 2:
        raise InvalidInputError("ause needs at least two points")
    fractions = ause_fractions()
    model, oracle = sparsification(abs_err, uncertainty, fractions)
    return float(np.trapezoid(model - oracle, fractions))


def ause_fractions() -> np.ndarray:
    return np.arange(AUSE_FRACTION_COUNT) / AUSE_FRACTION_COUNT


def evaluate(pred_mean, pred_var, truth, variance_kind="predictive",
             normalized_ause=False) -> EvalReport:
    """Full report: RMSE, NLPD, AUSE and both sparsification curves."""
    pred_mean = np.asarray(pred_mean, dtype=float)
    truth = np.asarray(truth, dtype=float)
    abs_err = np.abs(pred_mean - truth)
    fractions = ause_fractions()
    model, oracle = sparsification(abs_err, np.asarray(pred_var, dtype=float), fractions)
    if normalized_ause:
        full_mae = float(abs_err.mean())
        if full_mae > 0:
            model = model / full_mae
            oracle = oracle / full_mae
    return EvalReport(
        rmse=rmse(pred_mean, truth),
        nlpd=nlpd(pred_mean, pred_var, truth),
        ause=float(np.trapezoid(model - oracle, fractions)),
        n_test=int(truth.size),
        fractions=fractions,
        model_curve=model,
        oracle_curve=oracle,
        variance_kind=variance_kind,
    )
