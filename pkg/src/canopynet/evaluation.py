"""Error metrics, calibration curves, recall-error sweeps and cross-validation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble, EnsemblePrediction, predict_batch
from .errors import EmptyInput, NoBins, UnknownKey
from .train import SplitPlan, TrainConfig, prepare, train_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalPair:
    id: int
    y_true_m: float
    prediction: EnsemblePrediction
    metadata: dict = field(default_factory=dict)

    @property
    def residual_m(self):
        return self.prediction.mean_m - self.y_true_m


@dataclass(frozen=True)
class MetricsReport:
    rmse_m: float
    me_m: float
    mae_m: float
    mape_pct: float
    n: int
    n_mape_skipped: int = 0


def _arrays(pairs):
    if len(pairs) == 0:
        raise EmptyInput("no evaluation pairs")
    y = np.array([p.y_true_m for p in pairs], dtype=np.float64)
    mean = np.array([p.prediction.mean_m for p in pairs], dtype=np.float64)
    std = np.array([p.prediction.std_total_m for p in pairs], dtype=np.float64)
    return y, mean, std


def metrics_arrays(pred, true) -> MetricsReport:
    """RMSE, ME (positive = overestimate), MAE and MAPE in percent.

    MAPE skips zero references and reports how many it skipped.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.size == 0:
        raise EmptyInput("no evaluation pairs")
    r = pred - true
    nz = true != 0
    mape = float(np.mean(np.abs(r[nz] / true[nz])) * 100.0) if nz.any() else math.nan
    return MetricsReport(float(np.sqrt(np.mean(r * r))), float(np.mean(r)), float(np.mean(np.abs(r))),
                         mape, int(r.size), int((~nz).sum()))


def metrics(pairs) -> MetricsReport:
    y, mean, _ = _arrays(pairs)
    return metrics_arrays(mean, y)


@dataclass(frozen=True)
class CalibrationBin:
    bin_center_std_m: float
    mean_pred_std_m: float
    empirical_rmse_m: float
    count: int


def calibration_arrays(pred, true, std, bin_width_m=1.0, min_count=200) -> list:
    pred, true, std = (np.asarray(a, dtype=np.float64) for a in (pred, true, std))
    idx = np.floor(std / bin_width_m).astype(np.int64)
    out = []
    for b in np.unique(idx):
        sel = idx == b
        n = int(sel.sum())
        if n <= min_count:
            continue
        r = pred[sel] - true[sel]
        out.append(CalibrationBin((b + 0.5) * bin_width_m, float(std[sel].mean()),
                                  float(np.sqrt(np.mean(r * r))), n))
    if not out:
        raise NoBins(f"no predictive-std bin holds more than {min_count} samples")
    return out


def calibration_curve(pairs, bin_width_m=1.0, min_count=200) -> list:
    """Bin by predicted total std; keep bins with more than ``min_count`` pairs."""
    y, mean, std = _arrays(pairs)
    return calibration_arrays(mean, y, std, bin_width_m, min_count)


def calibration_slope(bins) -> float:
    """Count-weighted least-squares slope of RMSE on mean std, through the origin."""
    w = np.array([b.count for b in bins], dtype=np.float64)
    x = np.array([b.mean_pred_std_m for b in bins])
    y = np.array([b.empirical_rmse_m for b in bins])
    return float(np.sum(w * x * y) / np.sum(w * x * x))


def recall_error_arrays(pred, true, score, recalls):
    """Metrics of the ``ceil(r*n)`` lowest-score pairs for each recall ``r``."""
    pred, true, score = (np.asarray(a, dtype=np.float64) for a in (pred, true, score))
    n = pred.size
    if n == 0:
        raise EmptyInput("no evaluation pairs")
    order = np.argsort(score, kind="stable")
    out = []
    for r in recalls:
        k = int(math.ceil(r * n - 1e-9))
        if k < 1:
            continue
        sel = order[:k]
        m = metrics_arrays(pred[sel], true[sel])
        out.append((k / n, m.rmse_m, m.me_m))
    return out


def recall_error_curve(pairs, policy, recalls=None):
    """RMSE and ME of the retained subset as the policy threshold tightens."""
    from .filtergrid import ranking_score
    y, mean, std = _arrays(pairs)
    score = ranking_score(mean, std, policy, [p.metadata for p in pairs])
    if recalls is None:
        recalls = np.linspace(1.0, 0.05, 20)
    return recall_error_arrays(mean, y, score, recalls)


def _quantiles(x):
    p10, q1, med, q3, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    return {"p10": float(p10), "q1": float(q1), "median": float(med), "q3": float(q3),
            "p90": float(p90), "n": int(x.size)}


def stratified_residuals(pairs, key, bins=None) -> dict:
    """Box-plot statistics of residuals (and relative residuals) per stratum.

    ``key`` is a metadata field or ``"y_true"``; numeric keys are binned by
    the edges in ``bins`` (left-closed) and labelled ``"[lo,hi)"``.
    """
    if not pairs:
        raise EmptyInput("no evaluation pairs")
    if key == "y_true":
        values = [p.y_true_m for p in pairs]
    else:
        if any(key not in p.metadata for p in pairs):
            raise UnknownKey(f"metadata key {key!r} missing")
        values = [p.metadata[key] for p in pairs]
    if bins is not None:
        edges = np.asarray(bins, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        b = np.searchsorted(edges, v, side="right") - 1
        labels = [f"[{edges[i]:g},{edges[i + 1]:g})" if 0 <= i < len(edges) - 1 else "out"
                  for i in b]
    else:
        labels = [str(v) for v in values]
    res = np.array([p.residual_m for p in pairs])
    rel = np.array([p.residual_m / p.y_true_m if p.y_true_m != 0 else np.nan for p in pairs])
    out = {}
    for lab in sorted(set(labels)):
        sel = np.array([l == lab for l in labels])
        r = rel[sel]
        r = r[np.isfinite(r)]
        out[lab] = {"residual": _quantiles(res[sel]),
                    "relative": _quantiles(r) if r.size else None}
    return out


# --------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    pairs: list
    fold_metrics: dict
    train_ids: dict
    test_ids: dict
    overall: MetricsReport = None

    def fold_std(self):
        """Standard deviation of each metric across folds."""
        ms = list(self.fold_metrics.values())
        return {k: float(np.std([getattr(m, k) for m in ms]))
                for k in ("rmse_m", "me_m", "mae_m", "mape_pct")}

    def leaked_ids(self):
        return {f: set(self.train_ids[f]) & set(self.test_ids[f]) for f in self.train_ids}


def train_ensemble(dataset, train_ids, net_config, train_config: TrainConfig, members=10,
                   base_seed=0, log_dir=None):
    data = prepare(dataset, train_ids, net_config.n_bins)
    cks = []
    for m in range(members):
        log_path = None if log_dir is None else f"{log_dir}/member{m}.csv"
        cks.append(train_model(dataset, train_ids, net_config, train_config,
                               seed=base_seed + m, log_path=log_path, data=data))
    return Ensemble(tuple(cks)), data.ids


def pairs_for(dataset, ids, ens: Ensemble, workers=1) -> list:
    idx = dataset.index()
    recs = [dataset.records[idx[int(i)]] for i in ids]
    preds, errors = predict_batch(ens, [w for w, _ in recs], workers=workers)
    for _, rid, msg in errors:
        log.warning("skipping %d: %s", rid, msg)
    return [EvalPair(w.id, t.value_m, p, dict(w.metadata))
            for (w, t), p in zip(recs, preds) if p is not None]


def run_cv(dataset, plan: SplitPlan, net_config, train_config: TrainConfig, members=10,
           base_seed=0) -> CVResult:
    """Fresh ensemble per fold; pooled pairs in fold order.

    ``train_ids`` records exactly the ids that reached training (after
    dropping unusable waveforms), so the audit covers what the optimiser saw.
    """
    pairs, fold_metrics, train_seen, test_ids = [], {}, {}, {}
    for fold in plan.folds:
        tr, te = plan.train_ids(fold), plan.test_ids(fold)
        ens, seen = train_ensemble(dataset, tr, net_config, train_config, members, base_seed)
        fold_pairs = pairs_for(dataset, te, ens)
        train_seen[fold] = [int(i) for i in seen]
        test_ids[fold] = [int(i) for i in te]
        fold_metrics[fold] = metrics(fold_pairs)
        pairs.extend(fold_pairs)
        log.info("fold %s: rmse %.3f", fold, fold_metrics[fold].rmse_m)
    return CVResult(pairs, fold_metrics, train_seen, test_ids, metrics(pairs))
