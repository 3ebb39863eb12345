"""1-D residual CNN with a (mean, log-variance) head, written against numpy.

Layout is channels-last, ``(batch, length, channels)``. Parameters live in
a plain ``dict`` of named arrays; batch-norm running statistics sit in the
same dict but are never touched by the optimiser.

Per block::

    conv-BN-ReLU -> conv-BN -> + skip (1x1 projection if widths differ)
    -> ReLU -> max-pool(2)

followed by global average pooling, dropout (train only) and an affine map
to ``(mu, s)`` with ``var = exp(s) + eps``.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import FormatError, ShapeMismatch, VersionError
from .synth import parse_key_values
from .waveform import StandardizationStats, TargetKind, atomic_write_bytes

BUFFER_SUFFIXES = (".running_mean", ".running_var")


@dataclass(frozen=True)
class NetConfig:
    n_bins: int = 1420
    n_blocks: int = 8
    kernel_size: int = 3
    base_channels: int = 32
    channel_schedule: tuple = ()
    max_channels: int = 256
    stem_kernel: int = 3
    dropout_rate: float = 0.5
    variance_floor: float = 1e-8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(int(c) for c in self.channel_schedule))
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.kernel_size % 2 == 0 or self.stem_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.n_bins < 2 ** self.n_blocks:
            raise ValueError(f"n_bins={self.n_bins} < 2**n_blocks={2 ** self.n_blocks}")
        if self.channel_schedule and len(self.channel_schedule) != self.n_blocks:
            raise ValueError("channel_schedule needs one entry per block")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def channels(self) -> tuple:
        if self.channel_schedule:
            return self.channel_schedule
        return tuple(min(self.base_channels * 2 ** (i // 2), self.max_channels)
                     for i in range(self.n_blocks))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(c) for c in v)
            lines.append(f"{f.name}={v}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "NetConfig":
        return cls(**parse_key_values(text, cls))

    def config_hash(self) -> str:
        """Architecture fingerprint; ignores dtype so 64-bit checks share it."""
        text = "".join(line for line in self.to_text().splitlines(True)
                       if not line.startswith("dtype="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ForwardOutput:
    mu_std: np.ndarray
    s: np.ndarray
    variance_floor: float = 1e-8

    @property
    def var_std(self):
        return np.exp(self.s) + self.variance_floor


# --------------------------------------------------------------------------
# parameters


def parameter_shapes(config: NetConfig) -> dict:
    k, ks = config.kernel_size, config.stem_kernel
    chans = config.channels()
    shapes = {"stem.weight": (config.base_channels, 1, ks), "stem.bias": (config.base_channels,)}
    cin = config.base_channels
    bn = (".weight", ".bias", ".running_mean", ".running_var")
    for i, c in enumerate(chans):
        p = f"block{i}."
        shapes[p + "conv1.weight"] = (c, cin, k)
        shapes.update({p + "bn1" + s: (c,) for s in bn})
        shapes[p + "conv2.weight"] = (c, c, k)
        shapes.update({p + "bn2" + s: (c,) for s in bn})
        if cin != c:
            shapes[p + "proj.weight"] = (c, cin, 1)
        cin = c
    shapes["head.weight"] = (2, cin)
    shapes["head.bias"] = (2,)
    return shapes


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


def describe(config: NetConfig) -> dict:
    """Parameter inventory. Trainable count does not depend on ``n_bins``."""
    shapes = parameter_shapes(config)
    trainable = sum(int(np.prod(s)) for n, s in shapes.items() if not is_buffer(n))
    buffers = sum(int(np.prod(s)) for n, s in shapes.items() if is_buffer(n))
    return {"channels": config.channels(), "trainable": trainable, "buffers": buffers,
            "tensors": {n: s for n, s in shapes.items()}}


def init_parameters(config: NetConfig, seed=0) -> dict:
    """Fan-in scaled normal init.

    Gain 2 for convolutions feeding ReLUs, 1 for the stem and projections,
    0.01 for the output layer so the initial log-variance starts near zero.
    """
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("running_var") or (".bn" in name and name.endswith(".weight")):
            arr = np.ones(shape)
        elif name.endswith((".bias", "running_mean")):
            arr = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            gain = 2.0 if ".conv" in name else 0.01 if name.startswith("head") else 1.0
            arr = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
        params[name] = arr.astype(dt)
    return params


def cast_params(params: dict, dtype) -> dict:
    return {k: v.astype(dtype) for k, v in params.items()}


# --------------------------------------------------------------------------
# layers


def conv_forward(x, w, b=None):
    B, L, C = x.shape
    cout, cin, k = w.shape
    if cin != C:
        raise ShapeMismatch(f"conv expects {cin} input channels, got {C}")
    if k == 1:
        cols = x.reshape(B * L, C)
        wm = w[:, :, 0].T
    else:
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        cols = sliding_window_view(xp, k, axis=1).reshape(B * L, C * k)
        wm = w.transpose(1, 2, 0).reshape(C * k, cout)
    y = cols @ wm
    if b is not None:
        y += b
    return y.reshape(B, L, cout), (cols, wm, x.shape, k)


def conv_backward(dy, cache, with_bias=False):
    cols, wm, (B, L, C), k = cache
    cout = dy.shape[-1]
    d2 = dy.reshape(B * L, cout)
    dwm = cols.T @ d2
    if k == 1:
        dw = dwm.T[:, :, None]
        dx = (d2 @ wm.T).reshape(B, L, C)
    else:
        dw = dwm.reshape(C, k, cout).transpose(2, 0, 1)
        dx = kernels.col2im((d2 @ wm.T).reshape(B, L, C, k), k // 2)
    db = d2.sum(axis=0) if with_bias else None
    return dx, dw, db


def bn_forward(x, gamma, beta, rmean, rvar, train, momentum, eps):
    if not train:
        return (x - rmean) * (gamma / np.sqrt(rvar + eps)) + beta, None, None
    n = x.shape[0] * x.shape[1]
    mean = x.mean(axis=(0, 1))
    xc = x - mean
    var = (xc * xc).mean(axis=(0, 1))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    unbiased = var * (n / (n - 1)) if n > 1 else var
    stats = ((1 - momentum) * rmean + momentum * mean,
             (1 - momentum) * rvar + momentum * unbiased)
    return xhat * gamma + beta, (xhat, inv, gamma), stats


def bn_backward(dy, cache):
    xhat, inv, gamma = cache
    n = dy.shape[0] * dy.shape[1]
    dbeta = dy.sum(axis=(0, 1))
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dxhat = dy * gamma
    dx = (inv / n) * (n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
    return dx, dgamma, dbeta


# --------------------------------------------------------------------------
# network


def forward(params, config: NetConfig, x, mode="eval", dropout_seed=None, return_cache=False):
    """Run the network on standardized inputs of shape ``(B, n_bins)``.

    Never mutates ``params``. In train mode the cache carries the updated
    batch-norm running statistics under ``"running"``; apply them with
    :func:`apply_running_stats`.
    """
    dt = params["stem.weight"].dtype
    x = np.asarray(x, dtype=dt)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != config.n_bins:
        raise ShapeMismatch(f"expected input of length {config.n_bins}, got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    train = mode == "train"
    m, eps = config.bn_momentum, config.bn_eps
    cache = {"blocks": [], "running": {}}

    h, cache["stem"] = conv_forward(x[:, :, None], params["stem.weight"], params["stem.bias"])
    for i in range(config.n_blocks):
        p = f"block{i}."
        blk = {"in_len": h.shape[1]}
        a, blk["conv1"] = conv_forward(h, params[p + "conv1.weight"])
        a, blk["bn1"], st1 = bn_forward(a, params[p + "bn1.weight"], params[p + "bn1.bias"],
                                        params[p + "bn1.running_mean"], params[p + "bn1.running_var"],
                                        train, m, eps)
        blk["relu1"] = a > 0
        a = a * blk["relu1"]
        a, blk["conv2"] = conv_forward(a, params[p + "conv2.weight"])
        a, blk["bn2"], st2 = bn_forward(a, params[p + "bn2.weight"], params[p + "bn2.bias"],
                                        params[p + "bn2.running_mean"], params[p + "bn2.running_var"],
                                        train, m, eps)
        if p + "proj.weight" in params:
            skip, blk["proj"] = conv_forward(h, params[p + "proj.weight"])
        else:
            skip = h
        a = a + skip
        blk["relu2"] = a > 0
        a = a * blk["relu2"]
        blk["act"] = a
        h, blk["pick"] = kernels.maxpool2_forward(a)
        blk["out"] = h
        if train:
            cache["running"].update({p + "bn1.running_mean": st1[0], p + "bn1.running_var": st1[1],
                                     p + "bn2.running_mean": st2[0], p + "bn2.running_var": st2[1]})
        cache["blocks"].append(blk)

    cache["pool_len"] = h.shape[1]
    feat = h.mean(axis=1)
    if train and config.dropout_rate > 0:
        rng = np.random.default_rng(dropout_seed)
        keep = 1.0 - config.dropout_rate
        mask = ((rng.random(feat.shape) < keep) / keep).astype(dt)
        feat = feat * mask
        cache["mask"] = mask
    cache["feat"] = feat
    out = feat @ params["head.weight"].T + params["head.bias"]
    res = ForwardOutput(out[:, 0], out[:, 1], config.variance_floor)
    if return_cache:
        return res, cache
    return res


def backward(params, config: NetConfig, cache, dmu, ds):
    """Gradients of a scalar loss given dL/dmu and dL/ds per sample.

    Returns a dict keyed like the trainable parameters plus ``"input"``.
    """
    grads = {}
    dout = np.stack([np.asarray(dmu), np.asarray(ds)], axis=1).astype(cache["feat"].dtype)
    grads["head.weight"] = dout.T @ cache["feat"]
    grads["head.bias"] = dout.sum(axis=0)
    dfeat = dout @ params["head.weight"]
    if "mask" in cache:
        dfeat = dfeat * cache["mask"]
    B, C = dfeat.shape
    L = cache["pool_len"]
    dh = np.broadcast_to(dfeat[:, None, :] / L, (B, L, C))

    for i in reversed(range(config.n_blocks)):
        p = f"block{i}."
        blk = cache["blocks"][i]
        da = kernels.maxpool2_backward(np.ascontiguousarray(dh), blk["pick"], blk["act"].shape[1])
        da = da * blk["relu2"]
        if "proj" in blk:
            dskip, grads[p + "proj.weight"], _ = conv_backward(da, blk["proj"])
        else:
            dskip = da
        d, grads[p + "bn2.weight"], grads[p + "bn2.bias"] = bn_backward(da, blk["bn2"])
        d, grads[p + "conv2.weight"], _ = conv_backward(d, blk["conv2"])
        d = d * blk["relu1"]
        d, grads[p + "bn1.weight"], grads[p + "bn1.bias"] = bn_backward(d, blk["bn1"])
        d, grads[p + "conv1.weight"], _ = conv_backward(d, blk["conv1"])
        dh = d + dskip

    dx, grads["stem.weight"], grads["stem.bias"] = conv_backward(dh, cache["stem"], with_bias=True)
    grads["input"] = dx[:, :, 0]
    return grads


def apply_running_stats(params, cache):
    for name, value in cache["running"].items():
        params[name] = value.astype(params[name].dtype)


def receptive_interval(config: NetConfig, index: int, block: int):
    """Positions of block ``block``'s pooled output reachable from input bin ``index``."""
    lo = hi = index
    r_stem = config.stem_kernel // 2
    lo, hi = lo - r_stem, hi + r_stem
    n = config.n_bins
    lo, hi = max(lo, 0), min(hi, n - 1)
    r = config.kernel_size // 2
    for _ in range(block + 1):
        lo, hi = max(lo - 2 * r, 0), min(hi + 2 * r, n - 1)
        n //= 2
        lo, hi = lo // 2, min(hi // 2, n - 1)
    return lo, hi


# --------------------------------------------------------------------------
# checkpoint


CKPT_MAGIC = b"WFCK"
CKPT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Checkpoint:
    config: NetConfig
    params: dict
    stats: StandardizationStats
    target_kind: TargetKind = TargetKind.RH98
    seed: int = 0
    epochs: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("nan")
    history: tuple = field(default=(), repr=False)


def checkpoint_to_bytes(ck: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    text = ck.config.to_text().encode()
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    s = ck.stats
    buf.write(struct.pack("<dddd", s.input_mean, s.input_std, s.target_mean, s.target_std))
    names = list(parameter_shapes(ck.config))
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.asarray(ck.params[name])
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    buf.write(struct.pack("<QIIdB", ck.seed & 0xFFFFFFFFFFFFFFFF, ck.epochs, ck.best_epoch,
                          ck.best_val_loss, int(ck.target_kind)))
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError("truncated checkpoint", pos)
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    if data[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    pos = 4
    (version,) = take("<I")
    if version != CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    (n,) = take("<I")
    if pos + n > len(data):
        raise FormatError("truncated config block", pos)
    config = NetConfig.from_text(data[pos:pos + n].decode())
    pos += n
    stats = StandardizationStats(*take("<dddd"))
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (ln,) = take("<H")
        name = data[pos:pos + ln].decode()
        pos += ln
        (rank,) = take("<B")
        dims = take(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        if pos + 4 * size > len(data):
            raise FormatError(f"truncated tensor {name}", pos)
        params[name] = np.frombuffer(data, "<f4", size, pos).reshape(dims).astype(np.float32)
        pos += 4 * size
    seed, epochs, best_epoch, best_val, kind = take("<QIIdB")
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint", pos)
    expected = parameter_shapes(config)
    if set(expected) != set(params):
        raise FormatError("tensor names do not match the configuration", pos)
    return Checkpoint(config, params, stats, TargetKind(kind), seed, epochs, best_epoch, best_val)


def save_checkpoint(ck: Checkpoint, path):
    atomic_write_bytes(path, checkpoint_to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
