"""Deep-ensemble prediction: equal-weight Gaussian mixture over members."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .net import cast_params, forward, load_checkpoint
from .waveform import (RawWaveform, TargetKind, atomic_write_bytes,
                       preprocess)


@dataclass(frozen=True)
class EnsemblePrediction:
    mean_m: float
    var_total_m2: float
    var_aleatoric_m2: float
    var_epistemic_m2: float

    @property
    def std_total_m(self):
        return float(np.sqrt(self.var_total_m2))

    @property
    def std_aleatoric_m(self):
        return float(np.sqrt(self.var_aleatoric_m2))

    @property
    def std_epistemic_m(self):
        return float(np.sqrt(self.var_epistemic_m2))


def mixture_moments(mu, var):
    """Mean and variance split of an equal-weight Gaussian mixture.

    ``mu`` and ``var`` have the member axis first. The variance of the
    member means is computed about the mixture mean, which equals
    ``mean(mu**2) - mean(mu)**2`` but cannot go negative.
    Returns ``(mean, epistemic, aleatoric, total)``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    mean = mu.mean(axis=0)
    epistemic = ((mu - mean) ** 2).mean(axis=0)
    aleatoric = var.mean(axis=0)
    return mean, epistemic, aleatoric, epistemic + aleatoric


@dataclass(frozen=True, eq=False)
class Ensemble:
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        c0 = members[0]
        for m in members[1:]:
            if m.config.config_hash() != c0.config.config_hash():
                raise ValueError("ensemble members disagree on the network configuration")
            if m.target_kind != c0.target_kind:
                raise ValueError("ensemble members disagree on the target kind")
        object.__setattr__(self, "members", members)

    @property
    def config(self):
        return self.members[0].config

    @property
    def n_bins(self):
        return self.config.n_bins

    @property
    def target_kind(self) -> TargetKind:
        return self.members[0].target_kind

    def member_outputs(self, X):
        """Destandardized (mu, var) per member, shape (M, B), from normalised inputs."""
        mus, vars_ = [], []
        for ck in self.members:
            st = ck.stats
            dt = ck.params["stem.weight"].dtype
            xz = ((X - st.input_mean) / st.input_std).astype(dt)
            out = forward(ck.params, ck.config, xz, "eval")
            mus.append(out.mu_std.astype(np.float64) * st.target_std + st.target_mean)
            vars_.append(out.var_std.astype(np.float64) * st.target_std ** 2)
        return np.array(mus), np.array(vars_)

    def predict_arrays(self, X):
        return mixture_moments(*self.member_outputs(X))

    def as_dtype(self, dtype) -> "Ensemble":
        from dataclasses import replace
        return Ensemble(tuple(replace(m, params=cast_params(m.params, dtype)) for m in self.members))


def _chunk_predict(ens: Ensemble, waveforms):
    X = np.zeros((len(waveforms), ens.n_bins))
    ok, errors = [], []
    for i, w in enumerate(waveforms):
        try:
            X[i] = preprocess(w, ens.n_bins)
            ok.append(i)
        except DataError as exc:
            errors.append((i, w.id, f"{type(exc).__name__}: {exc}"))
    preds = [None] * len(waveforms)
    if ok:
        mean, epi, alea, tot = ens.predict_arrays(X[ok])
        for j, i in enumerate(ok):
            preds[i] = EnsemblePrediction(float(mean[j]), float(tot[j]), float(alea[j]), float(epi[j]))
    return preds, errors


def predict_batch(ens: Ensemble, waveforms, workers: int = 1, chunk_size: int = 256):
    """Predict many waveforms in fixed-size chunks.

    Returns ``(predictions, errors)``: predictions align with the input
    (``None`` where a record failed) and errors list ``(index, id,
    message)``. Chunk boundaries do not depend on ``workers``, so serial
    and parallel runs give identical numbers.
    """
    waveforms = list(waveforms)
    chunks = [waveforms[a:a + chunk_size] for a in range(0, len(waveforms), chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _chunk_predict(ens, c), chunks))
    else:
        results = [_chunk_predict(ens, c) for c in chunks]
    preds, errors = [], []
    for n, (p, e) in enumerate(results):
        base = n * chunk_size
        preds.extend(p)
        errors.extend((base + i, rid, msg) for i, rid, msg in e)
    return preds, errors


def predict(ens: Ensemble, w: RawWaveform) -> EnsemblePrediction:
    preds, errors = predict_batch(ens, [w])
    if errors:
        preprocess(w, ens.n_bins)  # re-raise the original error
    return preds[0]


# --------------------------------------------------------------------------
# manifest: "config_hash=<hex>" then one "member=<path>" line per checkpoint;
# relative paths are resolved against the manifest's directory


def write_manifest(path, member_paths, config_hash):
    base = os.path.dirname(os.path.abspath(path))
    lines = [f"config_hash={config_hash}"]
    for p in member_paths:
        lines.append(f"member={os.path.relpath(os.path.abspath(p), base)}")
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_ensemble(path) -> Ensemble:
    base = os.path.dirname(os.path.abspath(path))
    expected, members = None, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "config_hash":
                expected = value
            elif key == "member":
                members.append(load_checkpoint(os.path.join(base, value)))
            else:
                raise FormatError(f"{path}:{lineno}: unknown manifest entry {key!r}")
    ens = Ensemble(tuple(members))
    if expected is not None and ens.config.config_hash() != expected:
        raise FormatError(f"{path}: member configuration hash {ens.config.config_hash()} != {expected}")
    return ens


PREDICTION_COLUMNS = ("id", "lat", "lon", "mean_m", "std_total_m", "std_aleatoric_m", "std_epistemic_m")


def predictions_to_csv(waveforms, preds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_COLUMNS)
    for wf, p in zip(waveforms, preds):
        if p is None:
            continue
        w.writerow([wf.id, repr(wf.lat), repr(wf.lon), repr(p.mean_m), repr(p.std_total_m),
                    repr(p.std_aleatoric_m), repr(p.std_epistemic_m)])
    return buf.getvalue()


@dataclass(frozen=True, eq=False)
class PredictionTable:
    """Column view of a predictions CSV."""
    id: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    mean_m: np.ndarray
    std_total_m: np.ndarray
    std_aleatoric_m: np.ndarray
    std_epistemic_m: np.ndarray

    def predictions(self):
        return [EnsemblePrediction(float(m), float(t) ** 2, float(a) ** 2, float(e) ** 2)
                for m, t, a, e in zip(self.mean_m, self.std_total_m, self.std_aleatoric_m,
                                      self.std_epistemic_m)]

    def __len__(self):
        return len(self.id)


def read_predictions(path) -> PredictionTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = set(PREDICTION_COLUMNS) - set(rows[0] if rows else PREDICTION_COLUMNS)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    cols = {c: np.array([float(r[c]) for r in rows]) for c in PREDICTION_COLUMNS}
    cols["id"] = cols["id"].astype(np.int64)
    return PredictionTable(**cols)
