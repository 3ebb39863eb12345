"""Hot inner loops, each with a compiled and a vectorised numpy path.

Every public kernel dispatches on ``JIT_ENABLED``. The ``*_np`` and ``*_nb``
variants are importable on their own so tests and the benchmark can compare
them directly. Arrays in the network are channels-last: ``(batch, length,
channels)``.
"""
import numpy as np

from ._jit import JIT_ENABLED, njit


# --------------------------------------------------------------------------
# max-pool, kernel 2 / stride 2, first-index tie-break


def maxpool2_forward_np(x):
    B, L, C = x.shape
    h = L // 2
    even = x[:, 0:2 * h:2, :]
    odd = x[:, 1:2 * h:2, :]
    pick = odd > even
    return np.where(pick, odd, even), pick.astype(np.uint8)


@njit
def maxpool2_forward_nb(x):
    B, L, C = x.shape
    h = L // 2
    out = np.empty((B, h, C), dtype=x.dtype)
    pick = np.zeros((B, h, C), dtype=np.uint8)
    for b in range(B):
        for j in range(h):
            for c in range(C):
                a = x[b, 2 * j, c]
                o = x[b, 2 * j + 1, c]
                if o > a:
                    out[b, j, c] = o
                    pick[b, j, c] = 1
                else:
                    out[b, j, c] = a
    return out, pick


def maxpool2_backward_np(dout, pick, length):
    B, h, C = dout.shape
    dx = np.zeros((B, length, C), dtype=dout.dtype)
    p = pick.astype(bool)
    dx[:, 0:2 * h:2, :] = np.where(p, 0, dout)
    dx[:, 1:2 * h:2, :] = np.where(p, dout, 0)
    return dx


@njit
def maxpool2_backward_nb(dout, pick, length):
    B, h, C = dout.shape
    dx = np.zeros((B, length, C), dtype=dout.dtype)
    for b in range(B):
        for j in range(h):
            for c in range(C):
                dx[b, 2 * j + pick[b, j, c], c] = dout[b, j, c]
    return dx


def maxpool2_forward(x):
    if JIT_ENABLED:
        return maxpool2_forward_nb(x)
    return maxpool2_forward_np(x)


def maxpool2_backward(dout, pick, length):
    if JIT_ENABLED:
        return maxpool2_backward_nb(dout, pick, length)
    return maxpool2_backward_np(dout, pick, length)


# --------------------------------------------------------------------------
# convolution input gradient: scatter column gradients back onto the signal


def col2im_np(dcols, pad):
    """``dcols[b, l, c, t]`` is the gradient w.r.t. ``xpad[b, l + t, c]``."""
    B, L, C, k = dcols.shape
    dxp = np.zeros((B, L + k - 1, C), dtype=dcols.dtype)
    for t in range(k):
        dxp[:, t:t + L, :] += dcols[:, :, :, t]
    return dxp[:, pad:pad + L, :]


@njit
def col2im_nb(dcols, pad):
    B, L, C, k = dcols.shape
    dx = np.zeros((B, L, C), dtype=dcols.dtype)
    for b in range(B):
        for l in range(L):
            for t in range(k):
                src = l + pad - t
                if 0 <= src < L:
                    for c in range(C):
                        dx[b, l, c] += dcols[b, src, c, t]
    return dx


def col2im(dcols, pad):
    if JIT_ENABLED:
        return col2im_nb(dcols, pad)
    return col2im_np(dcols, pad)


# --------------------------------------------------------------------------
# translate-with-zero-fill of a batch of 1-D signals


def shift_rows_np(x, shifts):
    B, n = x.shape
    idx = np.arange(n)[None, :] - shifts[:, None]
    valid = (idx >= 0) & (idx < n)
    out = np.take_along_axis(x, np.clip(idx, 0, n - 1), axis=1)
    return np.where(valid, out, 0).astype(x.dtype)


@njit
def shift_rows_nb(x, shifts):
    B, n = x.shape
    out = np.zeros_like(x)
    for b in range(B):
        k = shifts[b]
        for i in range(n):
            j = i - k
            if 0 <= j < n:
                out[b, i] = x[b, j]
    return out


def shift_rows(x, shifts):
    shifts = np.asarray(shifts, dtype=np.int64)
    if JIT_ENABLED:
        return shift_rows_nb(x, shifts)
    return shift_rows_np(x, shifts)


# --------------------------------------------------------------------------
# raster accumulation; acc columns are
# count, sum_h, sum_vt, sum_va, sum_ve, sum_st, sum_sa, sum_se, max_h


N_ACC = 9


def grid_accumulate_np(acc, cell, h, vt, va, ve):
    ncell = acc.shape[0]
    acc[:, 0] += np.bincount(cell, minlength=ncell)
    for col, w in ((1, h), (2, vt), (3, va), (4, ve),
                   (5, np.sqrt(vt)), (6, np.sqrt(va)), (7, np.sqrt(ve))):
        acc[:, col] += np.bincount(cell, weights=w, minlength=ncell)
    np.maximum.at(acc[:, 8], cell, h)
    return acc


@njit
def grid_accumulate_nb(acc, cell, h, vt, va, ve):
    for i in range(cell.shape[0]):
        c = cell[i]
        acc[c, 0] += 1.0
        acc[c, 1] += h[i]
        acc[c, 2] += vt[i]
        acc[c, 3] += va[i]
        acc[c, 4] += ve[i]
        acc[c, 5] += np.sqrt(vt[i])
        acc[c, 6] += np.sqrt(va[i])
        acc[c, 7] += np.sqrt(ve[i])
        if h[i] > acc[c, 8]:
            acc[c, 8] = h[i]
    return acc


def grid_accumulate(acc, cell, h, vt, va, ve):
    if JIT_ENABLED:
        return grid_accumulate_nb(acc, cell, h, vt, va, ve)
    return grid_accumulate_np(acc, cell, h, vt, va, ve)


# --------------------------------------------------------------------------
# correlation lattice for block matching


def lattice_corr_np(shots, refs, node_idx, kz):
    """Per-shot Pearson coefficients for every (dx, dz) candidate.

    shots: (S, n) on-orbit amplitudes; refs: (N, n) reference waveforms;
    node_idx: (n_dx, S) reference node per shot and horizontal candidate,
    -1 where the displaced position leaves the grid; kz: (n_dz,) bin
    shifts. A positive shift compares ``shots[:, k:]`` with ``refs[:, :n-k]``.
    Returns (n_dx, n_dz, S) with NaN for unusable pairs.
    """
    S, n = shots.shape
    out = np.full((node_idx.shape[0], kz.shape[0], S), np.nan)
    for i in range(node_idx.shape[0]):
        ok = node_idx[i] >= 0
        r = refs[np.where(ok, node_idx[i], 0)]
        for j, k in enumerate(kz):
            if k >= 0:
                a, b = shots[:, k:], r[:, :n - k]
            else:
                a, b = shots[:, :n + k], r[:, -k:]
            a = a - a.mean(axis=1, keepdims=True)
            b = b - b.mean(axis=1, keepdims=True)
            den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
            num = (a * b).sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                c = num / den
            c[~ok | (den <= 0)] = np.nan
            out[i, j] = c
    return out


@njit
def lattice_corr_nb(shots, refs, node_idx, kz):
    S, n = shots.shape
    out = np.full((node_idx.shape[0], kz.shape[0], S), np.nan)
    for i in range(node_idx.shape[0]):
        for j in range(kz.shape[0]):
            k = kz[j]
            if k >= 0:
                a0, b0, m = k, 0, n - k
            else:
                a0, b0, m = 0, -k, n + k
            for s in range(S):
                node = node_idx[i, s]
                if node < 0 or m < 2:
                    continue
                sa = 0.0
                sb = 0.0
                for t in range(m):
                    sa += shots[s, a0 + t]
                    sb += refs[node, b0 + t]
                ma = sa / m
                mb = sb / m
                saa = 0.0
                sbb = 0.0
                sab = 0.0
                for t in range(m):
                    da = shots[s, a0 + t] - ma
                    db = refs[node, b0 + t] - mb
                    saa += da * da
                    sbb += db * db
                    sab += da * db
                den = np.sqrt(saa * sbb)
                if den > 0:
                    out[i, j, s] = sab / den
    return out


def lattice_corr(shots, refs, node_idx, kz):
    shots = np.ascontiguousarray(shots, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    node_idx = np.ascontiguousarray(node_idx, dtype=np.int64)
    kz = np.ascontiguousarray(kz, dtype=np.int64)
    if JIT_ENABLED:
        return lattice_corr_nb(shots, refs, node_idx, kz)
    return lattice_corr_np(shots, refs, node_idx, kz)
