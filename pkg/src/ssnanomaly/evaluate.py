"""Binary classification measures against ground-truth anomaly labels."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DataError, MisalignedLabels

__all__ = ["ConfusionMetrics", "confusion", "brier", "mcc"]

NONE = "none"


@dataclass(frozen=True)
class ConfusionMetrics:
    TP: int
    TN: int
    FP: int
    FN: int
    se: float
    sp: float
    acc: float
    acc_adj: float
    mcc: float
    brier: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a: float, b: float) -> float:
    return a / b if b else float("nan")


def mcc(TP: int, TN: int, FP: int, FN: int) -> float:
    """Matthews correlation coefficient; 0 when any marginal sum is zero."""
    marg = [TP + FN, TP + FP, TN + FP, TN + FN]
    if min(marg) == 0:
        return 0.0
    den = np.sqrt(float(marg[0]) * marg[1] * marg[2] * marg[3])
    return float((float(TP) * TN - float(FP) * FN) / den)


def brier(scores, truth) -> float:
    """Mean squared difference between probabilities and binary outcomes."""
    f = np.asarray(scores, dtype=float).ravel()
    o = np.asarray(truth, dtype=float).ravel()
    if f.shape != o.shape:
        raise MisalignedLabels("scores and truth differ in size")
    if f.size == 0:
        return float("nan")
    if np.any((f < 0) | (f > 1)):
        raise DataError("scores must lie in [0, 1]")
    return float(np.mean((f - o) ** 2))


def _truth_arrays(truth):
    t = np.asarray(truth)
    if t.dtype == bool or np.issubdtype(t.dtype, np.number):
        tb = t.astype(float)
        valid = ~np.isnan(tb)
        kinds = np.where(valid & (tb > 0), "anomaly", NONE)
        return kinds, valid
    t = t.astype(str)
    valid = (t != "") & (t != "nan") & (t != "missing")
    return t, valid


def confusion(pred, truth, by_type: Optional[str] = None, scores=None) -> ConfusionMetrics:
    """Confusion counts and ratio measures.

    Parameters
    ----------
    pred : AnomalyLabels or array-like of bool/int
        Predicted flags.  For :class:`AnomalyLabels`, missing cells are
        excluded and the scores feed the Brier score.
    truth : array-like
        Anomaly type names (``"none"`` for normal) or booleans.
    by_type : str, optional
        Count only this anomaly type as positive; all normal cells stay as
        negatives and cells of other types are excluded.
    scores : array-like, optional
        Probability scores for the Brier score; defaults to the 0/1 flags.
    """
    from .detectors import AnomalyLabels

    if isinstance(pred, AnomalyLabels):
        p = pred.flagged
        p_valid = pred.observed
        if scores is None:
            scores = pred.score
    else:
        pa = np.asarray(pred)
        if pa.dtype.kind == "f":
            p_valid = ~np.isnan(pa)
            p = np.where(p_valid, pa, 0) > 0
        else:
            p_valid = pa.astype(int) >= 0
            p = pa.astype(int) > 0
    kinds, t_valid = _truth_arrays(truth)
    if p.shape != kinds.shape:
        raise MisalignedLabels(f"prediction shape {p.shape} != truth shape {kinds.shape}")
    use = p_valid & t_valid
    if by_type is None:
        pos = kinds != NONE
    else:
        pos = kinds == by_type
        use &= pos | (kinds == NONE)
    p, pos = p[use], pos[use]
    TP = int(np.sum(p & pos))
    FP = int(np.sum(p & ~pos))
    FN = int(np.sum(~p & pos))
    TN = int(np.sum(~p & ~pos))
    se = _ratio(TP, TP + FN)
    sp = _ratio(TN, TN + FP)
    acc = _ratio(TP + TN, TP + TN + FP + FN)
    acc_adj = 0.5 * (se + sp)
    if scores is None:
        f = p.astype(float)
    else:
        f = np.asarray(scores, dtype=float)[use]
        f = np.where(np.isnan(f), p.astype(float), f)
    return ConfusionMetrics(TP, TN, FP, FN, se, sp, acc, acc_adj, mcc(TP, TN, FP, FN),
                            brier(f, pos.astype(float)))
