"""Compiled vs numpy-fallback kernel timings.

    python benchmarks/bench_kernels.py [--repeat N] [--epochs N]

Prints the median time per call of each hot kernel under both backends, then
one training epoch of tiny_vgg on the digits data with each backend (run in a
subprocess so the backend is chosen at import, as in normal use).
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from bridgeprune import _fallback

try:
    from bridgeprune import _kernels
except ImportError:
    _kernels = None

EPOCH_SNIPPET = """
import time
from bridgeprune import data, kernels, models, train, regularize
tr, te = data.load_digits_split()
st = data.channel_stats(tr); tr = data.normalize(tr, st)
g = models.build("tiny_vgg", tr.shape, seed=0)
cfg = train.TrainConfig(epochs={epochs}, batch_size=16,
                        perturbation=regularize.PerturbationConfig("batch_bridgeout"))
t = time.perf_counter(); train.fit(g, tr, None, cfg)
print(kernels.BACKEND, (time.perf_counter() - t) / {epochs})
"""


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cases(mod):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 32, 8, 8)).astype(np.float32)
    cols = mod.im2col(x, 3, 3, 1, 1)
    pooled, arg = mod.maxpool_forward(x, 2, 2)
    return {
        "im2col 16x32x8x8 k3": lambda: mod.im2col(x, 3, 3, 1, 1),
        "col2im 16x32x8x8 k3": lambda: mod.col2im(cols, x.shape, 3, 3, 1, 1),
        "maxpool fwd 2x2": lambda: mod.maxpool_forward(x, 2, 2),
        "maxpool bwd 2x2": lambda: mod.maxpool_backward(np.ones_like(pooled), arg, x.shape),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=2, help="0 skips the training comparison")
    args = ap.parse_args()
    if _kernels is None:
        sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    fb, ck = cases(_fallback), cases(_kernels)
    print(f"{'kernel':<24}{'fallback ms':>12}{'compiled ms':>13}{'speedup':>9}")
    for name in fb:
        a, b = median_time(fb[name], args.repeat), median_time(ck[name], args.repeat)
        print(f"{name:<24}{a * 1e3:>12.3f}{b * 1e3:>13.3f}{a / b:>8.1f}x")

    if args.epochs:
        print("\ntiny_vgg batch_bridgeout epoch on digits (s/epoch):")
        for backend in ("python", "cython"):
            env = dict(os.environ, BRIDGEPRUNE_KERNELS=backend)
            out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET.format(epochs=args.epochs)],
                                 env=env, capture_output=True, text=True, check=True)
            name, sec = out.stdout.split()
            print(f"  {name:<8}{float(sec):.2f}")


if __name__ == "__main__":
    main()
