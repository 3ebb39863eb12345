"""Waveform types, preprocessing and the WFDS dataset container."""
from __future__ import annotations

import csv
import enum
import io
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (DegenerateVariance, FormatError, LengthExceeded,
                     VersionError, ZeroEnergy)

log = logging.getLogger(__name__)

BIN_SPACING_M = 0.15
DEFAULT_N_BINS = 1420
FORMAT_VERSION = 1
MAGIC = b"WFDS"


def f32(x) -> float:
    """Round to the nearest float32, the precision the container stores."""
    return float(np.float32(x))


class TargetKind(enum.IntEnum):
    RH98 = 0
    RH70 = 1
    GROUND_OFFSET = 2

    @classmethod
    def parse(cls, value) -> "TargetKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(int(value))


@dataclass(frozen=True, eq=False)
class RawWaveform:
    id: int
    amplitudes: np.ndarray
    noise_mean: float = 0.0
    lat: float = 0.0
    lon: float = 0.0
    elevation_first_return_m: float = 0.0
    metadata: Mapping[str, str] = field(default_factory=dict)
    bin_spacing_m: float = BIN_SPACING_M

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=np.float32)
        if amp.ndim != 1 or amp.size == 0:
            raise ValueError(f"waveform {self.id}: amplitudes must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(amp)):
            raise ValueError(f"waveform {self.id}: non-finite amplitude")
        if self.bin_spacing_m != BIN_SPACING_M:
            raise ValueError(f"bin spacing is fixed at {BIN_SPACING_M} m")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "noise_mean", f32(self.noise_mean))
        object.__setattr__(self, "elevation_first_return_m", f32(self.elevation_first_return_m))
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        meta = {str(k): str(v) for k, v in dict(self.metadata).items()}
        for k, v in meta.items():
            if not k or any(ch in k for ch in ";=") or ";" in v:
                raise ValueError(f"metadata entry {k!r}={v!r} may not contain ';' or '='")
        if "pearson_quality" in meta:
            q = float(meta["pearson_quality"])
            if not 0.0 <= q <= 1.0:
                raise ValueError("pearson_quality must lie in [0, 1]")
        object.__setattr__(self, "metadata", meta)

    def __eq__(self, other):
        if not isinstance(other, RawWaveform):
            return NotImplemented
        return (self.id == other.id
                and np.array_equal(self.amplitudes, other.amplitudes)
                and self.noise_mean == other.noise_mean
                and self.lat == other.lat and self.lon == other.lon
                and self.elevation_first_return_m == other.elevation_first_return_m
                and dict(self.metadata) == dict(other.metadata))

    def meta_float(self, key, default=None):
        v = self.metadata.get(key)
        return default if v is None else float(v)

    def with_metadata(self, **extra) -> "RawWaveform":
        meta = dict(self.metadata)
        meta.update({k: str(v) for k, v in extra.items()})
        return RawWaveform(self.id, self.amplitudes, self.noise_mean, self.lat, self.lon,
                           self.elevation_first_return_m, meta)


@dataclass(frozen=True)
class TargetSpec:
    kind: TargetKind
    value_m: float

    def __post_init__(self):
        object.__setattr__(self, "kind", TargetKind.parse(self.kind))
        object.__setattr__(self, "value_m", f32(self.value_m))


@dataclass(frozen=True)
class ProcessedWaveform:
    input: np.ndarray
    target_std: float
    provenance: int


@dataclass(frozen=True)
class StandardizationStats:
    input_mean: float
    input_std: float
    target_mean: float
    target_std: float

    def __post_init__(self):
        if not (self.input_std > 0 and self.target_std > 0):
            raise DegenerateVariance("standardization std must be positive")


@dataclass(frozen=True, eq=False)
class Dataset:
    records: tuple
    n_bins: int = DEFAULT_N_BINS
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        recs = tuple((w, t) for w, t in self.records)
        object.__setattr__(self, "records", recs)
        ids = [w.id for w, _ in recs]
        if len(set(ids)) != len(ids):
            raise ValueError("dataset ids must be unique")
        kinds = {t.kind for _, t in recs}
        if len(kinds) > 1:
            raise ValueError(f"dataset mixes target kinds: {sorted(k.name for k in kinds)}")
        longest = max((w.amplitudes.size for w, _ in recs), default=0)
        if longest > self.n_bins:
            raise LengthExceeded(f"waveform of {longest} bins exceeds n_bins={self.n_bins}")

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.n_bins == other.n_bins and self.format_version == other.format_version
                and len(self) == len(other)
                and all(a == b for a, b in zip(self.records, other.records)))

    @property
    def target_kind(self) -> TargetKind:
        return self.records[0][1].kind if self.records else TargetKind.RH98

    @property
    def ids(self) -> np.ndarray:
        return np.array([w.id for w, _ in self.records], dtype=np.int64)

    @property
    def targets(self) -> np.ndarray:
        return np.array([t.value_m for _, t in self.records], dtype=np.float64)

    @property
    def waveforms(self) -> list:
        return [w for w, _ in self.records]

    def subset(self, ids) -> "Dataset":
        wanted = set(int(i) for i in ids)
        return Dataset(tuple(r for r in self.records if r[0].id in wanted), self.n_bins)

    def index(self) -> dict:
        return {w.id: i for i, (w, _) in enumerate(self.records)}


# --------------------------------------------------------------------------
# preprocessing


def preprocess(w: RawWaveform, n_bins: int = DEFAULT_N_BINS) -> np.ndarray:
    """Subtract the mean noise level, normalise total energy to one, zero-pad.

    Negative bins after noise subtraction are kept as they are.
    """
    n = w.amplitudes.size
    if n > n_bins:
        raise LengthExceeded(f"waveform {w.id} has {n} bins, n_bins={n_bins}")
    sig = w.amplitudes.astype(np.float64) - float(w.noise_mean)
    total = sig.sum()
    if not total > 0:
        raise ZeroEnergy(f"waveform {w.id}: noise-subtracted energy {total:g} <= 0")
    out = np.zeros(n_bins, dtype=np.float64)
    out[:n] = sig / total
    return out


def preprocess_many(waveforms: Sequence[RawWaveform], n_bins: int):
    """Preprocess a batch, dropping unusable waveforms.

    Returns ``(X, kept)`` where ``kept`` indexes the surviving waveforms.
    """
    X = np.zeros((len(waveforms), n_bins), dtype=np.float64)
    kept = []
    for i, w in enumerate(waveforms):
        try:
            X[len(kept)] = preprocess(w, n_bins)
        except ZeroEnergy:
            continue
        kept.append(i)
    dropped = len(waveforms) - len(kept)
    if dropped:
        log.info("dropped %d zero-energy waveforms", dropped)
    return X[:len(kept)], np.array(kept, dtype=np.int64)


def fit_standardization(inputs, targets) -> StandardizationStats:
    """Population mean/std over every training amplitude and every target."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.shape[0] < 2 or y.size < 2:
        raise ValueError("need at least two training records")
    xs, ys = float(x.std()), float(y.std())
    if not (xs > 0 and ys > 0):
        raise DegenerateVariance("inputs or targets have zero variance")
    return StandardizationStats(float(x.mean()), xs, float(y.mean()), ys)


def standardize(x, stats: StandardizationStats, which: str = "input"):
    mean, std = _moments(stats, which)
    return (np.asarray(x, dtype=np.float64) - mean) / std


def destandardize(z, stats: StandardizationStats, which: str = "input"):
    mean, std = _moments(stats, which)
    return np.asarray(z, dtype=np.float64) * std + mean


def _moments(stats, which):
    if which == "input":
        return stats.input_mean, stats.input_std
    if which == "target":
        return stats.target_mean, stats.target_std
    raise ValueError(f"which must be 'input' or 'target', not {which!r}")


# --------------------------------------------------------------------------
# container

_HEADER = struct.Struct("<4sIIIB")
_REC_HEAD = struct.Struct("<QI")
_REC_TAIL = struct.Struct("<fddff")
_META_LEN = struct.Struct("<H")


def encode_metadata(meta: Mapping[str, str]) -> bytes:
    return ";".join(f"{k}={v}" for k, v in meta.items()).encode("utf-8")


def decode_metadata(blob: bytes) -> dict:
    text = blob.decode("utf-8")
    out = {}
    if not text:
        return out
    for item in text.split(";"):
        k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"malformed metadata item {item!r}")
        out[k] = v
    return out


def dataset_to_bytes(d: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, d.format_version, len(d), d.n_bins, int(d.target_kind)))
    for w, t in d.records:
        buf.write(_REC_HEAD.pack(w.id, w.amplitudes.size))
        buf.write(w.amplitudes.astype("<f4").tobytes())
        buf.write(_REC_TAIL.pack(w.noise_mean, w.lat, w.lon, w.elevation_first_return_m, t.value_m))
        blob = encode_metadata(w.metadata)
        if len(blob) > 0xFFFF:
            raise ValueError(f"metadata of waveform {w.id} exceeds 65535 bytes")
        buf.write(_META_LEN.pack(len(blob)))
        buf.write(blob)
    return buf.getvalue()


def dataset_from_bytes(data: bytes) -> Dataset:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError(f"unexpected end of file: need {n} bytes", pos)
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    magic, version, n_records, n_bins, kind = _HEADER.unpack(take(_HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}", 0)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported dataset version {version}")
    try:
        kind = TargetKind(kind)
    except ValueError:
        raise FormatError(f"unknown target kind {kind}", _HEADER.size - 1) from None
    records = []
    for _ in range(n_records):
        start = pos
        rid, length = _REC_HEAD.unpack(take(_REC_HEAD.size))
        if length == 0 or length > n_bins:
            raise FormatError(f"record {rid}: invalid length {length}", start)
        amps = np.frombuffer(take(4 * length), dtype="<f4").astype(np.float32)
        noise, lat, lon, elev, target = _REC_TAIL.unpack(take(_REC_TAIL.size))
        (mlen,) = _META_LEN.unpack(take(_META_LEN.size))
        mpos = pos
        try:
            meta = decode_metadata(bytes(take(mlen)))
        except (UnicodeDecodeError, ValueError) as exc:
            raise FormatError(f"record {rid}: bad metadata ({exc})", mpos) from None
        try:
            w = RawWaveform(rid, amps, noise, lat, lon, elev, meta)
        except ValueError as exc:
            raise FormatError(f"record {rid}: {exc}", start) from None
        records.append((w, TargetSpec(kind, target)))
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes", pos)
    return Dataset(tuple(records), n_bins, version)


def atomic_write_bytes(path, data: bytes):
    """Write via a temporary sibling file then rename over the target."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(d: Dataset, path):
    atomic_write_bytes(path, dataset_to_bytes(d))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read())


def read_csv_dataset(path, target_kind="RH98", n_bins=None) -> Dataset:
    """Import a small hand-written fixture.

    Columns: id, amplitudes (``;``-joined), noise_mean, lat, lon,
    elevation_first_return_m, target, metadata (``k=v;k=v``, optional).
    """
    kind = TargetKind.parse(target_kind)
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            amps = [float(a) for a in row["amplitudes"].split(";") if a.strip()]
            w = RawWaveform(
                int(row["id"]), amps,
                float(row.get("noise_mean") or 0.0),
                float(row.get("lat") or 0.0),
                float(row.get("lon") or 0.0),
                float(row.get("elevation_first_return_m") or 0.0),
                decode_metadata((row.get("metadata") or "").encode("utf-8")),
            )
            records.append((w, TargetSpec(kind, float(row["target"]))))
    if n_bins is None:
        n_bins = max(DEFAULT_N_BINS, max((w.amplitudes.size for w, _ in records), default=0))
    return Dataset(tuple(records), n_bins)


def concat(datasets: Iterable[Dataset]) -> Dataset:
    datasets = list(datasets)
    recs = tuple(r for d in datasets for r in d.records)
    return Dataset(recs, max(d.n_bins for d in datasets))

