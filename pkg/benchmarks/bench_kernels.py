#!/usr/bin/env python3
"""Compare the compiled and pure-numpy convolution backends.

Times forward and backward passes on the four convolution shapes the model
actually runs during training (batch = 16 windows x 20 samples), plus a full
model forward/backward step. Run:

    python benchmarks/bench_kernels.py [--batch 320] [--repeat 0.5]
"""

import argparse
import time

import numpy as np

from followme.kernels import pyconv

try:
    from followme.kernels import _convcore
except ImportError:
    _convcore = None


def _time(fn, budget_s):
    t0 = time.perf_counter()
    n = 0
    while time.perf_counter() - t0 < budget_s:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n


def bench_convs(batch, budget):
    shapes = [
        ("per-node spatial 1", (batch, 5, 10, 8), (32, 5, 3, 1)),
        ("per-node spatial 2", (batch, 32, 10, 8), (2, 32, 3, 1)),
        ("per-node temporal", (batch, 10, 2, 8), (30, 10, 3, 1)),
        ("fusion", (batch, 40, 2, 8), (30, 40, 3, 3)),
    ]
    rng = np.random.default_rng(0)
    backends = [("numpy", pyconv)]
    if _convcore is not None:
        backends.append(("compiled", _convcore))
    print(f"{'conv':20s} {'backend':9s} {'fwd ms':>9s} {'bwd ms':>9s} {'fwd GFLOP/s':>12s}")
    for name, xs, ws in shapes:
        x = np.ascontiguousarray(rng.standard_normal(xs))
        w = np.ascontiguousarray(rng.standard_normal(ws))
        b = np.ascontiguousarray(rng.standard_normal(ws[0]))
        dy = np.ascontiguousarray(rng.standard_normal((xs[0], ws[0], xs[2], xs[3])))
        flop = 2.0 * xs[0] * ws[0] * ws[1] * ws[2] * ws[3] * xs[2] * xs[3]
        for label, mod in backends:
            fwd = _time(lambda: mod.conv2d_forward(x, w, b), budget)
            bwd = _time(lambda: mod.conv2d_backward(x, w, dy), budget)
            print(f"{name:20s} {label:9s} {fwd * 1e3:9.2f} {bwd * 1e3:9.2f} "
                  f"{flop / fwd / 1e9:12.2f}")


def bench_model_step(batch, budget):
    import os

    from followme.model import ModelConfig, StgcnnPredictor

    rng = np.random.default_rng(0)
    feats = rng.standard_normal((batch, 5, 10, 8)) * 20
    masks = np.ones((batch, 8), dtype=bool)
    noise = rng.standard_normal((batch, 2, 10))
    dpred = rng.standard_normal((batch, 2, 30))
    print(f"\nfull model, batch {batch} (backend: "
          f"{os.environ.get('FOLLOWME_KERNELS', 'auto')} -> "
          f"{__import__('followme.kernels', fromlist=['BACKEND']).BACKEND})")
    model = StgcnnPredictor(ModelConfig(), rng_seed=0)

    def fwd():
        model.forward_batch(feats, masks, noise)

    def step():
        _, _, cache = model.forward_batch(feats, masks, noise, need_cache=True)
        model.backward_batch(cache, dpred)

    print(f"  forward        : {_time(fwd, budget) * 1e3:8.2f} ms")
    print(f"  forward+backward: {_time(step, budget) * 1e3:8.2f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=320,
                    help="batch size (default: 16 windows x 20 samples)")
    ap.add_argument("--repeat", type=float, default=0.5,
                    help="time budget per measurement in seconds")
    args = ap.parse_args()
    if _convcore is None:
        print("note: compiled extension unavailable; numpy backend only\n")
    bench_convs(args.batch, args.repeat)
    bench_model_step(args.batch, args.repeat)


if __name__ == "__main__":
    main()
