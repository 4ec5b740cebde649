"""Skew-aware evaluation: overall, per-quartile and per-bucket RMSE, MAE hit counts.

A *predictor* is anything with a ``predict(users, items)`` method (trained
models, FARP ensembles) or a plain callable with that signature.  Cells that
contain no test ratings are reported as ``None``, never as an RMSE of 0.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from tailmc.data import QUARTILE_LABELS

__all__ = [
    "EvalReport",
    "rmse",
    "quartile_report",
    "bucket_curve",
    "mae_accuracy",
    "evaluate",
    "average_reports",
    "paired_t_test",
    "spearman",
    "write_csv",
    "write_quartile_csv",
    "write_curve_csv",
    "write_mae_csv",
    "report_summary",
    "write_summary_json",
]


def _as_predictor(obj):
    return obj.predict if hasattr(obj, "predict") else obj


def rmse(predicted, actual=None):
    """Root mean squared error.

    Either two equal-length sequences or a single sequence of
    ``(predicted, actual)`` pairs.
    """
    if actual is None:
        pairs = np.asarray(list(predicted), dtype=np.float64).reshape(-1, 2)
        predicted, actual = pairs[:, 0], pairs[:, 1]
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.size == 0:
        raise ValueError("rmse of an empty list")
    if predicted.shape != actual.shape:
        raise ValueError("predicted and actual differ in length")
    return float(np.sqrt(np.mean((predicted - actual) ** 2)))


def _cell(err):
    return (int(err.size), float(np.sqrt(np.mean(err * err))) if err.size else None)


@dataclass
class EvalReport:
    overall_rmse: float
    n_test: int
    user_quartiles: list  # 4 x (count, rmse or None)
    item_quartiles: list
    bucket_curve: list = field(default_factory=list)  # (mean_freq, rmse or None)
    mae_accurate_count: int = 0

    def item_rmse(self, q):
        return self.item_quartiles[q][1]

    def user_rmse(self, q):
        return self.user_quartiles[q][1]


def quartile_report(predictor, test, quartiles, freq=None, predictions=None):
    """Test RMSE grouped by the user's quartile and, separately, the item's.

    Returns ``{"user": [...], "item": [...]}`` with four ``(count, rmse)``
    cells each; ``rmse`` is ``None`` for an empty cell.
    """
    pred = _as_predictor(predictor)(test.users, test.items) if predictions is None else predictions
    err = pred - test.ratings
    uq = quartiles.user_quartile[test.users]
    iq = quartiles.item_quartile[test.items]
    return {
        "user": [_cell(err[uq == q]) for q in range(4)],
        "item": [_cell(err[iq == q]) for q in range(4)],
    }


def _item_buckets(freq, buckets):
    counts = np.asarray(freq.item_freq)
    ids = freq.item_ids
    try:
        order = sorted(range(counts.size), key=lambda k: (-counts[k], ids[k]) if ids else (-counts[k], k))
    except TypeError:
        order = sorted(range(counts.size), key=lambda k: (-counts[k], str(ids[k])))
    return np.array_split(np.array(order, dtype=np.int64), buckets)


def bucket_curve(predictor, test, freq, buckets=10, predictions=None):
    """RMSE against item-frequency bucket, most frequent bucket first.

    Items are ordered by decreasing training frequency (ties by identifier)
    and cut into ``buckets`` near-equal groups.  Within a bucket each user's
    RMSE over their test items in that bucket is computed, then averaged over
    the users who have any; users without ratings in a bucket are skipped.
    Returns ``(mean item frequency, rmse or None)`` per bucket.
    """
    pred = _as_predictor(predictor)(test.users, test.items) if predictions is None else predictions
    sq = (pred - test.ratings) ** 2
    bucket_of = np.empty(freq.item_freq.shape[0], dtype=np.int64)
    groups = _item_buckets(freq, buckets)
    for b, g in enumerate(groups):
        bucket_of[g] = b
    tb = bucket_of[test.items]
    n_users = int(max(test.users.max(initial=-1) + 1, 0))
    curve = []
    for b, g in enumerate(groups):
        mean_freq = float(np.mean(freq.item_freq[g])) if g.size else math.nan
        sel = tb == b
        if not sel.any():
            curve.append((mean_freq, None))
            continue
        users = test.users[sel]
        cnt = np.bincount(users, minlength=n_users)
        tot = np.bincount(users, weights=sq[sel], minlength=n_users)
        has = cnt > 0
        per_user = np.sqrt(tot[has] / cnt[has])
        curve.append((mean_freq, float(per_user.mean())))
    return curve


def mae_accuracy(predictor, test, freq=None, threshold=0.5, predictions=None):
    """Per test item: ``(item index, training frequency, #|pred - actual| <= threshold)``."""
    pred = _as_predictor(predictor)(test.users, test.items) if predictions is None else predictions
    hit = np.abs(pred - test.ratings) <= threshold
    items = np.unique(test.items)
    hits = np.bincount(test.items, weights=hit.astype(np.float64), minlength=test.n_items)
    out = []
    for i in items:
        f = int(freq.item_freq[i]) if freq is not None else None
        out.append((int(i), f, int(hits[i])))
    return out


def evaluate(predictor, test, quartiles, freq, buckets=10, threshold=0.5):
    """Full :class:`EvalReport` of one predictor on one test split."""
    pred = _as_predictor(predictor)(test.users, test.items)
    q = quartile_report(None, test, quartiles, freq, predictions=pred)
    return EvalReport(
        overall_rmse=rmse(pred, test.ratings),
        n_test=len(test),
        user_quartiles=q["user"],
        item_quartiles=q["item"],
        bucket_curve=bucket_curve(None, test, freq, buckets, predictions=pred),
        mae_accurate_count=int(np.sum(np.abs(pred - test.ratings) <= threshold)),
    )


def _mean_present(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def average_reports(reports):
    """Arithmetic mean over repeats; a cell's mean skips repeats where it was empty."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")

    def cells(getter):
        per = [getter(r) for r in reports]
        return [(float(np.mean([p[k][0] for p in per])), _mean_present([p[k][1] for p in per]))
                for k in range(len(per[0]))]

    return EvalReport(
        overall_rmse=float(np.mean([r.overall_rmse for r in reports])),
        n_test=float(np.mean([r.n_test for r in reports])),
        user_quartiles=cells(lambda r: r.user_quartiles),
        item_quartiles=cells(lambda r: r.item_quartiles),
        bucket_curve=cells(lambda r: r.bucket_curve),
        mae_accurate_count=float(np.mean([r.mae_accurate_count for r in reports])),
    )


def paired_t_test(sq_err_a, sq_err_b):
    """Paired t-test over per-rating squared errors of two methods on the same test set.

    Returns ``(t statistic, two-sided p-value)``.
    """
    res = stats.ttest_rel(np.asarray(sq_err_a), np.asarray(sq_err_b))
    return float(res.statistic), float(res.pvalue)


def spearman(x, y):
    """Spearman rank correlation, ignoring pairs where either value is missing."""
    pairs = [(a, b) for a, b in zip(x, y) if a is not None and b is not None]
    if len(pairs) < 2:
        return math.nan
    a, b = zip(*pairs)
    return float(stats.spearmanr(a, b).statistic)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return Path(path)


def write_quartile_csv(report, path):
    rows = [("overall", report.n_test, report.overall_rmse)]
    for side, cells in (("user", report.user_quartiles), ("item", report.item_quartiles)):
        for label, (count, value) in zip(QUARTILE_LABELS, cells):
            rows.append((f"{side}_{label}", count, value))
    return write_csv(path, ("cell", "count", "rmse"), rows)


def write_curve_csv(report, path):
    rows = [(b + 1, mf, r) for b, (mf, r) in enumerate(report.bucket_curve)]
    return write_csv(path, ("bucket", "mean_freq", "rmse"), rows)


def write_mae_csv(rows, path, item_ids=None):
    out = [((item_ids[i] if item_ids else i), f, c) for i, f, c in rows]
    return write_csv(path, ("item", "freq", "accurate_count"), out)


def report_summary(report, method):
    """Table-2-style row: overall RMSE plus user and item quartile RMSEs."""
    return {
        "method": method,
        "overall": report.overall_rmse,
        "n_test": report.n_test,
        "user": {lab: cell[1] for lab, cell in zip(QUARTILE_LABELS, report.user_quartiles)},
        "item": {lab: cell[1] for lab, cell in zip(QUARTILE_LABELS, report.item_quartiles)},
        "user_counts": {lab: cell[0] for lab, cell in zip(QUARTILE_LABELS, report.user_quartiles)},
        "item_counts": {lab: cell[0] for lab, cell in zip(QUARTILE_LABELS, report.item_quartiles)},
    }


def write_summary_json(summaries, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)
