"""Gaussian-NLL training: loss, ADAM, shift augmentation, splits, the epoch loop."""
from __future__ import annotations

import csv
import enum
import logging
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .errors import DegenerateVariance, EmptyRegion, NonFinite
from .net import (Checkpoint, NetConfig, apply_running_stats, backward,
                  forward, init_parameters, is_buffer)
from .synth import parse_key_values
from .waveform import (Dataset, StandardizationStats, fit_standardization,
                       preprocess_many)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 200
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shift_fraction: float = 0.20
    val_fraction: float = 0.10
    shared_val_split: bool = True
    split_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 0.0 <= self.shift_fraction < 0.5:
            raise ValueError("shift_fraction must lie in [0, 0.5)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")

    @classmethod
    def from_text(cls, text):
        return cls(**parse_key_values(text, cls))

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


# --------------------------------------------------------------------------
# loss and optimiser


def nll_loss(mu, s, y, eps=1e-8):
    """Mean Gaussian NLL with ``var = exp(s) + eps``.

    Returns ``(loss, dloss/dmu, dloss/ds)``; the gradients already include
    the 1/N of the batch mean.
    """
    mu = np.asarray(mu, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (mu.shape == s.shape == y.shape) or mu.size < 1:
        raise ValueError("mu, s and y must share a non-empty shape")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(s)) and np.all(np.isfinite(y))):
        raise NonFinite("non-finite value entering the loss")
    es = np.exp(s)
    var = es + eps
    r = mu - y
    n = mu.size
    loss = float(np.mean(r * r / (2 * var) + 0.5 * np.log(var)))
    dmu = r / var / n
    ds = (0.5 / var - r * r / (2 * var * var)) * es / n
    return loss, dmu, ds


class Adam:
    """Bias-corrected ADAM; state is created lazily per parameter name."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in params or is_buffer(k):
                continue
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(params[k].dtype)


# --------------------------------------------------------------------------
# augmentation


def support_bounds(X):
    """First and last non-zero index of each row (-1 for all-zero rows)."""
    nz = X != 0
    any_nz = nz.any(axis=1)
    first = np.where(any_nz, nz.argmax(axis=1), -1)
    last = np.where(any_nz, X.shape[1] - 1 - nz[:, ::-1].argmax(axis=1), -1)
    return first, last


def draw_shifts(first, last, n, fraction, rng, attempts=10):
    """Shift per row, uniform on ``[-floor(f*n), floor(f*n)]``.

    A draw that would push the non-zero support out of the vector is
    redrawn; after ``attempts`` failures the row stays unshifted.
    """
    kmax = int(np.floor(fraction * n))
    B = len(first)
    if kmax == 0:
        return np.zeros(B, dtype=np.int64)
    draws = rng.integers(-kmax, kmax + 1, size=(B, attempts))
    ok = (first[:, None] + draws >= 0) & (last[:, None] + draws <= n - 1)
    pick = ok.argmax(axis=1)
    k = draws[np.arange(B), pick]
    return np.where(ok.any(axis=1), k, 0).astype(np.int64)


def augment_shift(x, fraction, rng):
    """Translate one waveform by a random whole number of bins, zero-filling."""
    x = np.asarray(x)
    first, last = support_bounds(x[None, :])
    k = draw_shifts(first, last, x.size, fraction, rng)
    return kernels.shift_rows(x[None, :], k)[0], int(k[0])


# --------------------------------------------------------------------------
# splits


class SplitKind(enum.Enum):
    RANDOM_KFOLD = "RANDOM_KFOLD"
    GEOGRAPHIC_HOLDOUT = "GEOGRAPHIC_HOLDOUT"


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Fold per id. Geographic plans use fold 1 for the held-out region, 0 otherwise."""
    kind: SplitKind
    assignments: dict
    k: int = 0
    region: str = ""
    seed: int = 0

    @property
    def folds(self):
        if self.kind is SplitKind.GEOGRAPHIC_HOLDOUT:
            return [1]
        return list(range(self.k))

    def test_ids(self, fold):
        return np.array(sorted(i for i, f in self.assignments.items() if f == fold), dtype=np.int64)

    def train_ids(self, fold):
        return np.array(sorted(i for i, f in self.assignments.items() if f != fold), dtype=np.int64)

    def __eq__(self, other):
        return (isinstance(other, SplitPlan) and self.kind == other.kind and self.k == other.k
                and self.region == other.region and self.assignments == other.assignments)

    def to_csv(self) -> str:
        head = f"# kind={self.kind.value};k={self.k};region={self.region};seed={self.seed}\n"
        return head + "id,fold\n" + "".join(f"{i},{f}\n" for i, f in sorted(self.assignments.items()))

    @classmethod
    def from_csv(cls, text: str) -> "SplitPlan":
        lines = text.splitlines()
        meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split(";"))
        rows = csv.DictReader(lines[1:])
        assignments = {int(r["id"]): int(r["fold"]) for r in rows}
        return cls(SplitKind(meta["kind"]), assignments, int(meta["k"]), meta["region"], int(meta["seed"]))


def make_splits(dataset: Dataset, kind="RANDOM_KFOLD", k: int = 10, region: str | None = None,
                seed: int = 0) -> SplitPlan:
    kind = SplitKind(kind) if not isinstance(kind, SplitKind) else kind
    ids = dataset.ids
    if kind is SplitKind.RANDOM_KFOLD:
        if not 1 < k <= len(ids):
            raise ValueError(f"k={k} invalid for {len(ids)} records")
        perm = np.random.default_rng(seed).permutation(len(ids))
        assign = {}
        for fold, chunk in enumerate(np.array_split(perm, k)):
            for i in chunk:
                assign[int(ids[i])] = fold
        return SplitPlan(kind, assign, k, "", seed)
    tags = [w.metadata.get("region") for w in dataset.waveforms]
    if region not in tags:
        raise EmptyRegion(f"no record tagged with region {region!r}")
    assign = {int(i): int(t == region) for i, t in zip(ids, tags)}
    return SplitPlan(kind, assign, 0, region, seed)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainingData:
    """Preprocessed (normalised, unstandardised) inputs with their ids."""
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    first: np.ndarray = field(init=False)
    last: np.ndarray = field(init=False)

    def __post_init__(self):
        self.first, self.last = support_bounds(self.X)


def prepare(dataset: Dataset, ids, n_bins) -> TrainingData:
    idx = dataset.index()
    recs = [dataset.records[idx[int(i)]] for i in ids]
    X, kept = preprocess_many([w for w, _ in recs], n_bins)
    y = np.array([recs[i][1].value_m for i in kept], dtype=np.float64)
    rid = np.array([recs[i][0].id for i in kept], dtype=np.int64)
    return TrainingData(X.astype(np.float32), y, rid)


def validation_split(n, val_fraction, rng):
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def eval_loss(params, config, X, y, stats, chunk=512):
    """Validation NLL in eval mode, standardized units."""
    mus, ss = [], []
    for a in range(0, len(X), chunk):
        xb = (X[a:a + chunk] - stats.input_mean) / stats.input_std
        out = forward(params, config, xb, "eval")
        mus.append(out.mu_std)
        ss.append(out.s)
    yz = (y - stats.target_mean) / stats.target_std
    return nll_loss(np.concatenate(mus), np.concatenate(ss), yz, config.variance_floor)[0]


def fit_training_stats(X, y) -> StandardizationStats:
    """Standardization for training; a constant target keeps unit scale.

    Constant inputs are still an error.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size >= 2 and y.std() == 0:
        xs = float(np.std(X))
        if not xs > 0:
            raise DegenerateVariance("inputs have zero variance")
        log.warning("constant training target %g; using unit target scale", y[0])
        return StandardizationStats(float(np.mean(X)), xs, float(y[0]), 1.0)
    return fit_standardization(X, y)


def train_model(dataset: Dataset, train_ids, net_config: NetConfig, train_config: TrainConfig,
                seed: int | None = None, log_path=None, data: TrainingData | None = None) -> Checkpoint:
    """Train one network and return its best-validation checkpoint.

    ``val_fraction`` of ``train_ids`` is held out for checkpoint selection;
    with ``shared_val_split`` the hold-out depends only on ``split_seed`` so
    every ensemble member sees the same one. Standardization statistics are
    fitted on the remaining records only. Ties in validation loss keep the
    earliest epoch.
    """
    tc = train_config
    seed = tc.seed if seed is None else seed
    if data is None:
        data = prepare(dataset, train_ids, net_config.n_bins)
    if len(data.y) < 2 * tc.batch_size:
        raise ValueError(f"{len(data.y)} usable records; need at least {2 * tc.batch_size}")
    split_rng = np.random.default_rng(tc.split_seed if tc.shared_val_split else [seed, 2])
    fit_idx, val_idx = validation_split(len(data.y), tc.val_fraction, split_rng)
    stats = fit_training_stats(data.X[fit_idx], data.y[fit_idx])
    dt = np.dtype(net_config.dtype)
    mean_x, std_x = dt.type(stats.input_mean), dt.type(stats.input_std)
    yz = ((data.y - stats.target_mean) / stats.target_std)

    params = init_parameters(net_config, seed)
    opt = Adam(tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)
    rng = np.random.default_rng([seed, 1])
    n = net_config.n_bins

    best = (np.inf, 0, None)
    history = []
    writer = None
    if log_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        new = not os.path.exists(log_path)
        fh = open(log_path, "a", newline="")
        writer = csv.writer(fh)
        if new:
            writer.writerow(["epoch", "train_nll", "val_nll", "wallclock"])
    t0 = time.time()
    try:
        for epoch in range(1, tc.epochs + 1):
            order = fit_idx[rng.permutation(len(fit_idx))]
            losses = []
            for a in range(0, len(order), tc.batch_size):
                idx = order[a:a + tc.batch_size]
                xb = data.X[idx]
                if tc.shift_fraction > 0:
                    k = draw_shifts(data.first[idx], data.last[idx], n, tc.shift_fraction, rng)
                    xb = kernels.shift_rows(xb, k)
                xb = (xb.astype(dt) - mean_x) / std_x
                drop_seed = int(rng.integers(2 ** 63))
                out, cache = forward(params, net_config, xb, "train", drop_seed, return_cache=True)
                loss, dmu, ds = nll_loss(out.mu_std, out.s, yz[idx], net_config.variance_floor)
                if not np.isfinite(loss):
                    raise NonFinite(f"loss became {loss} at epoch {epoch}")
                grads = backward(params, net_config, cache, dmu, ds)
                opt.step(params, grads)
                apply_running_stats(params, cache)
                losses.append(loss * len(idx))
            train_nll = float(np.sum(losses) / len(fit_idx))
            val_nll = eval_loss(params, net_config, data.X[val_idx], data.y[val_idx], stats)
            history.append((epoch, train_nll, val_nll))
            if writer is not None:
                writer.writerow([epoch, f"{train_nll:.6f}", f"{val_nll:.6f}", f"{time.time() - t0:.2f}"])
                fh.flush()
            log.debug("epoch %d train %.4f val %.4f", epoch, train_nll, val_nll)
            if val_nll < best[0]:
                best = (val_nll, epoch, {k: v.copy() for k, v in params.items()})
    finally:
        if writer is not None:
            fh.close()

    return Checkpoint(net_config, best[2], stats, dataset.target_kind, int(seed), tc.epochs,
                      best[1], float(best[0]), tuple(history))
