"""Independent reference computations shared by unit and acceptance tests."""
import warnings

import numpy as np
from scipy import integrate

from canopynet.net import NetConfig, backward, forward, init_parameters, is_buffer


def tiny_config():
    return NetConfig(n_bins=64, n_blocks=2, base_channels=4, channel_schedule=(4, 4),
                     dropout_rate=0.5, dtype="float64")


def nll_reference(mu, s, y, eps=1e-8):
    var = np.exp(s) + eps
    return float(np.mean((mu - y) ** 2 / (2 * var) + 0.5 * np.log(var)))


def gradient_check(config=None, seed=1, batch=3, h=1e-5):
    """Worst relative error of analytic vs central-difference gradients.

    The loss is the mean Gaussian NLL of a train-mode forward pass with a
    fixed dropout mask. Returns ``(worst_rel_err, n_checked)``.
    """
    from canopynet.train import nll_loss
    cfg = config or tiny_config()
    p = init_parameters(cfg, seed)
    rng = np.random.default_rng(seed)
    # perturb every trainable tensor so no gradient is structurally tiny
    for k in p:
        if not is_buffer(k):
            p[k] = p[k] + rng.normal(0, 0.1, p[k].shape)
    x = rng.normal(size=(batch, cfg.n_bins))
    y = rng.normal(size=batch)

    def loss(params, xx):
        o = forward(params, cfg, xx, "train", dropout_seed=5)
        return nll_reference(o.mu_std, o.s, y)

    o, cache = forward(p, cfg, x, "train", dropout_seed=5, return_cache=True)
    _, dmu, ds = nll_loss(o.mu_std, o.s, y)
    grads = backward(p, cfg, cache, dmu, ds)

    worst, n = 0.0, 0
    targets = [(name, p[name], grads[name]) for name in p if not is_buffer(name)]
    targets.append(("input", x, grads["input"]))
    for name, arr, g in targets:
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss(p, x)
            arr[idx] = old - h
            lm = loss(p, x)
            arr[idx] = old
            num = (lp - lm) / (2 * h)
            a = g[idx]
            scale = max(abs(a), abs(num))
            if scale > 1e-10:
                worst = max(worst, abs(a - num) / scale)
            n += 1
    return worst, n


def mixture_moments_numeric(mu, var):
    """Mean and variance of an equal-weight Gaussian mixture by quadrature.

    The mean is integrated about the average member mean to avoid
    cancellation when the mixture sits far from zero.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sd = np.sqrt(np.asarray(var, dtype=np.float64))
    lo = float(np.min(mu - 14 * sd))
    hi = float(np.max(mu + 14 * sd))
    pts = sorted(set(np.concatenate([mu, mu - sd, mu + sd]).tolist()))

    norm_const = 1.0 / (sd * np.sqrt(2 * np.pi))

    def pdf(x):
        z = (x - mu) / sd
        return float(np.mean(norm_const * np.exp(-0.5 * z * z)))

    def moment(f):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(lambda x: f(x) * pdf(x), lo, hi, points=pts, limit=1000,
                                    epsabs=0, epsrel=1e-13)
        return val

    c = float(mu.mean())
    m = c + moment(lambda x: x - c)
    v = moment(lambda x: (x - m) ** 2)
    return m, v


def naive_metrics(pred, true):
    """Plain-loop RMSE, ME, MAE, MAPE with no shared helpers."""
    n = len(pred)
    se = ae = e = 0.0
    ape = 0.0
    k = 0
    for a, b in zip(pred, true):
        a, b = float(a), float(b)
        se += (a - b) * (a - b)
        e += a - b
        ae += abs(a - b)
        if b != 0:
            ape += abs((a - b) / b)
            k += 1
    return (se / n) ** 0.5, e / n, ae / n, (100.0 * ape / k if k else float("nan"))
