"""Time each hot kernel on its numba path and its numpy path.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--e2e]

Both variants are called directly, so the ``CANOPYNET_JIT`` flag does not
matter for the kernel table. ``--e2e`` also times a few training steps in
two child processes, one per setting of the flag.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from canopynet import kernels


def best_of(fn, repeat):
    fn()  # warm-up, includes compilation for the numba path
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    x = rng.normal(size=(64, 512, 32)).astype(np.float32)
    _, pick = kernels.maxpool2_forward_np(x)
    dout = rng.normal(size=(64, 256, 32)).astype(np.float32)
    dcols = rng.normal(size=(64, 512, 32, 3)).astype(np.float32)
    wav = rng.normal(size=(256, 640))
    shifts = rng.integers(-60, 61, 256)
    n = 200_000
    cell = rng.integers(0, 259_200, n)
    h, v = rng.uniform(0, 60, n), rng.uniform(0.1, 40, (3, n))
    shots = rng.normal(size=(30, 512))
    refs = rng.normal(size=(400, 512))
    nodes = rng.integers(-1, 400, (21, 30))
    kz = np.arange(-10, 11)

    def acc():
        a = np.zeros((259_200, kernels.N_ACC))
        a[:, 8] = -np.inf
        return a

    return {
        "maxpool2_forward": lambda f: f(x),
        "maxpool2_backward": lambda f: f(dout, pick, 512),
        "col2im": lambda f: f(dcols, 1),
        "shift_rows": lambda f: f(wav, shifts),
        "grid_accumulate": lambda f: f(acc(), cell, h, *v),
        "lattice_corr": lambda f: f(shots, refs, nodes, kz),
    }


def end_to_end(flag):
    code = (
        "import time\n"
        "from canopynet.synth import SynthConfig, generate_dataset\n"
        "from canopynet.net import NetConfig\n"
        "from canopynet.train import TrainConfig, train_model\n"
        "ds = generate_dataset(256, SynthConfig(n_bins=512, height_max_m=40), seed=0)\n"
        "net = NetConfig(n_bins=512, n_blocks=5, base_channels=8)\n"
        "tc = TrainConfig(epochs=1, batch_size=64)\n"
        "train_model(ds, ds.ids, net, tc, seed=0)\n"
        "t = time.perf_counter()\n"
        "train_model(ds, ds.ids, net, TrainConfig(epochs=2, batch_size=64), seed=0)\n"
        "print(time.perf_counter() - t)\n"
    )
    env = dict(os.environ, CANOPYNET_JIT=flag)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", action="store_true", help="also time two training epochs per path")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':20s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agree")
    for name, call in cases(rng).items():
        f_nb = getattr(kernels, name + "_nb")
        f_np = getattr(kernels, name + "_np")
        a, b = call(f_nb), call(f_np)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        agree = all(np.allclose(p, q, rtol=1e-5, atol=1e-6, equal_nan=True) for p, q in zip(a, b))
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        t_np = best_of(lambda: call(f_np), args.repeat)
        print(f"{name:20s} {1e3 * t_nb:10.2f} {1e3 * t_np:10.2f} {t_np / t_nb:8.2f}  {agree}")

    if args.e2e:
        t1, t0 = end_to_end("1"), end_to_end("0")
        print(f"{'train 2 epochs':20s} {1e3 * t1:10.0f} {1e3 * t0:10.0f} {t0 / t1:8.2f}")


if __name__ == "__main__":
    main()
