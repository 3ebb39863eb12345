"""Rigid-block geolocation matching against a reference waveform grid."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import DegenerateVariance, NoValidShots
from .waveform import (BIN_SPACING_M, Dataset, RawWaveform, TargetKind,
                       TargetSpec)


@dataclass(frozen=True, eq=False)
class TrackBlock:
    """Successive shots of one ground track and the reference line they sit on.

    ``reference`` holds one waveform per node at ``node_x_m`` (regular
    spacing), all on the same elevation window as the shots.
    """
    shots: tuple
    shot_x_m: np.ndarray
    node_x_m: np.ndarray
    reference: np.ndarray
    reference_targets: np.ndarray | None = None
    block: int = 0
    max_dx_m: float = 50.0
    max_dz_m: float = 1.5
    step_m: float = 5.0

    def __post_init__(self):
        if len(self.shots) < 1:
            raise ValueError("a track block needs at least one shot")
        if len(self.node_x_m) >= 2 and not np.all(np.diff(self.node_x_m) > 0):
            raise ValueError("reference nodes must be strictly increasing")
        if self.step_m <= 0:
            raise ValueError("search step must be > 0")

    @property
    def grid_step_m(self) -> float:
        return float(self.node_x_m[1] - self.node_x_m[0]) if len(self.node_x_m) > 1 else 1.0

    def with_window(self, max_dx_m=None, max_dz_m=None, step_m=None) -> "TrackBlock":
        return replace(self,
                       max_dx_m=self.max_dx_m if max_dx_m is None else max_dx_m,
                       max_dz_m=self.max_dz_m if max_dz_m is None else max_dz_m,
                       step_m=self.step_m if step_m is None else step_m)


@dataclass(frozen=True, eq=False)
class MatchResult:
    offset_dx_m: float
    offset_dz_m: float
    mean_corr: float
    n_shots_used: int
    shot_corr: np.ndarray
    node_index: np.ndarray
    kept: np.ndarray
    block: int = 0

    @property
    def offset(self):
        return (self.offset_dx_m, self.offset_dz_m)


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = float(da @ da), float(db @ db)
    if saa == 0 or sbb == 0:
        raise DegenerateVariance("constant sequence")
    r = float(da @ db) / np.sqrt(saa * sbb)
    return float(np.clip(r, -1.0, 1.0))


def search_lattice(block: TrackBlock):
    """Candidate horizontal offsets (m) and vertical bin shifts."""
    n_dx = int(np.floor(block.max_dx_m / block.step_m + 1e-9))
    dxs = np.arange(-n_dx, n_dx + 1) * block.step_m
    n_dz = int(np.floor(block.max_dz_m / BIN_SPACING_M + 1e-9))
    kz = np.arange(-n_dz, n_dz + 1, dtype=np.int64)
    return dxs, kz


def node_lookup(block: TrackBlock, dxs) -> np.ndarray:
    """Nearest reference node for each shot at each candidate offset (-1 = off grid)."""
    x0, step = float(block.node_x_m[0]), block.grid_step_m
    pos = block.shot_x_m[None, :] + np.asarray(dxs)[:, None]
    idx = np.floor((pos - x0) / step + 0.5).astype(np.int64)
    idx[(idx < 0) | (idx >= len(block.node_x_m))] = -1
    return idx


def _shot_matrix(block: TrackBlock) -> np.ndarray:
    n = block.reference.shape[1]
    S = np.empty((len(block.shots), n))
    for i, w in enumerate(block.shots):
        if w.amplitudes.size != n:
            raise ValueError(f"shot {w.id} has {w.amplitudes.size} bins, reference has {n}")
        S[i] = w.amplitudes.astype(np.float64) - w.noise_mean
    return S


def _tie_key(dx, dz):
    return (abs(dx), abs(dz), dx, dz)


def match_block(block: TrackBlock) -> MatchResult:
    """Exhaustive (dx, dz) lattice search maximising mean per-shot Pearson r.

    A candidate's score averages over the shots that land on the grid and
    have non-constant overlap; candidates with no such shot are skipped.
    Exact score ties prefer the smaller |dx|, then |dz|, then the smaller
    signed values.
    """
    dxs, kz = search_lattice(block)
    if dxs.size == 0 or kz.size == 0:
        raise ValueError("search window holds no candidate offset")
    nodes = node_lookup(block, dxs)
    corr = kernels.lattice_corr(_shot_matrix(block), block.reference, nodes, kz)
    valid = np.isfinite(corr)
    counts = valid.sum(axis=2)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, np.nansum(corr, axis=2) / np.maximum(counts, 1), -np.inf)
    if not np.any(counts > 0):
        raise NoValidShots(f"block {block.block}: no usable shot at any offset")
    best = means.max()
    cands = [(dxs[i], kz[j] * BIN_SPACING_M, i, j) for i, j in zip(*np.nonzero(means == best))]
    dx, dz, i, j = min(cands, key=lambda c: _tie_key(c[0], c[1]))
    shot_corr = corr[i, j].copy()
    return MatchResult(float(dx), float(round(dz, 6)), float(best), int(counts[i, j]),
                       shot_corr, nodes[i].copy(), np.isfinite(shot_corr), block.block)


def match_block_bruteforce(block: TrackBlock):
    """Slow reference search with plain loops and :func:`pearson`."""
    dxs, kz = search_lattice(block)
    S = _shot_matrix(block)
    n = S.shape[1]
    best = None
    for dx in dxs:
        for k in kz:
            rs = []
            for s, x in enumerate(block.shot_x_m):
                node = int(np.floor((x + dx - block.node_x_m[0]) / block.grid_step_m + 0.5))
                if not 0 <= node < len(block.node_x_m):
                    continue
                ref = block.reference[node]
                a, b = (S[s, k:], ref[:n - k]) if k >= 0 else (S[s, :n + k], ref[-k:])
                try:
                    rs.append(pearson(a, b))
                except DegenerateVariance:
                    continue
            if not rs:
                continue
            score = sum(rs) / len(rs)
            cand = (score, float(dx), float(round(k * BIN_SPACING_M, 6)))
            if best is None or score > best[0] or (
                    score == best[0] and _tie_key(cand[1], cand[2]) < _tie_key(best[1], best[2])):
                best = cand
    return best


def gate_results(results, min_shots: int = 25, min_block_corr: float = 0.9,
                 min_shot_corr: float = 0.95) -> list:
    """Two-level quality gate.

    Blocks matched with fewer than ``min_shots`` shots or a mean correlation
    not above ``min_block_corr`` are dropped entirely; in surviving blocks a
    shot stays only if its own correlation exceeds ``min_shot_corr``.
    Applying the gate twice gives the same result as applying it once.
    """
    out = []
    for r in results:
        if r.n_shots_used < min_shots or not r.mean_corr > min_block_corr:
            continue
        with np.errstate(invalid="ignore"):
            kept = r.kept & (r.shot_corr > min_shot_corr)
        out.append(replace(r, kept=kept))
    return out


def accepted_pairs(blocks, gated, target_kind=TargetKind.RH98) -> list:
    """(waveform, reference target) for every shot surviving the gate."""
    by_block = {b.block: b for b in blocks}
    pairs = []
    for r in gated:
        blk = by_block[r.block]
        for s in np.nonzero(r.kept)[0]:
            w = blk.shots[s].with_metadata(pearson_quality=f"{min(max(r.shot_corr[s], 0.0), 1.0):.6f}")
            target = np.nan if blk.reference_targets is None else blk.reference_targets[r.node_index[s]]
            pairs.append((w, TargetSpec(target_kind, float(target))))
    return pairs


# --------------------------------------------------------------------------
# file form: shots and reference nodes as two WFDS datasets, grouped by
# the ``block`` metadata key; shots carry ``track_x_m``, nodes ``node_x_m``.


def blocks_to_datasets(blocks, n_bins=None):
    shots, refs = [], []
    for b in blocks:
        for w, x in zip(b.shots, b.shot_x_m):
            shots.append((w.with_metadata(block=b.block, track_x_m=f"{x:.3f}"),
                          TargetSpec(TargetKind.RH98, 0.0)))
        for j, (x, wf) in enumerate(zip(b.node_x_m, b.reference)):
            tgt = 0.0 if b.reference_targets is None else b.reference_targets[j]
            w = RawWaveform(b.block * 100000 + j, wf.astype(np.float32), 0.0, 0.0, 0.0,
                            b.shots[0].elevation_first_return_m,
                            {"block": str(b.block), "node_x_m": f"{x:.3f}"})
            refs.append((w, TargetSpec(TargetKind.RH98, tgt)))
    n = n_bins or max(b.reference.shape[1] for b in blocks)
    return Dataset(tuple(shots), n), Dataset(tuple(refs), n)


def blocks_from_datasets(shots: Dataset, reference: Dataset, **window) -> list:
    groups = {}
    for w, _ in shots.records:
        groups.setdefault(int(w.metadata["block"]), [[], []])[0].append(w)
    for w, t in reference.records:
        groups.setdefault(int(w.metadata["block"]), [[], []])[1].append((w, t))
    blocks = []
    for bid in sorted(groups):
        sw, rw = groups[bid]
        if not sw or not rw:
            raise ValueError(f"block {bid} lacks shots or reference nodes")
        rw.sort(key=lambda p: float(p[0].metadata["node_x_m"]))
        blocks.append(TrackBlock(
            shots=tuple(sw),
            shot_x_m=np.array([float(w.metadata["track_x_m"]) for w in sw]),
            node_x_m=np.array([float(w.metadata["node_x_m"]) for w, _ in rw]),
            reference=np.stack([w.amplitudes.astype(np.float64) for w, _ in rw]),
            reference_targets=np.array([t.value_m for _, t in rw]),
            block=bid, **window))
    return blocks
