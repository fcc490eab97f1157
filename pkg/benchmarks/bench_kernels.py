"""Time the compiled and numpy recurrent kernels on training-sized batches.

    python benchmarks/bench_kernels.py [--hidden 200] [--steps 50] [--batch 32] [--repeats 5]
"""

import argparse
import time

import numpy as np

from dktplus import kernels
from dktplus.data import Batch, InteractionSequence
from dktplus.model import ModelConfig, backward_batch, forward_batch, init_params


def _best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def _problem(H, T, B, M, cell, rng):
    seqs = [InteractionSequence(rng.integers(0, M, T), rng.integers(0, 2, T)) for _ in range(B)]
    batch = Batch.from_sequences(seqs)
    cfg = ModelConfig(hidden_size=H, cell_kind=cell, dropout_rate=0.0)
    params = init_params(cfg, M)
    return batch, cfg, params


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, default=200)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--skills", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"H={args.hidden} T={args.steps} B={args.batch} M={args.skills} backends={backends}")

    for cell in ("lstm", "vanilla"):
        batch, cfg, params = _problem(args.hidden, args.steps, args.batch, args.skills, cell, rng)
        dY = rng.standard_normal((batch.T, batch.B, args.skills)) * 1e-3
        timings = {}
        for name in backends:
            kernels.use_backend(name)
            fwd = _best_of(lambda: forward_batch(batch, params, cfg, "train"), args.repeats)
            trace = forward_batch(batch, params, cfg, "train")
            bwd = _best_of(lambda: backward_batch(trace, dY, params), args.repeats)
            timings[name] = (fwd, bwd)
            print(f"{cell:8s} {name:7s} forward {fwd * 1e3:8.2f} ms  backward {bwd * 1e3:8.2f} ms")
        if len(timings) == 2:
            (pf, pb), (cf, cb) = timings["python"], timings["cython"]
            print(f"{cell:8s} speedup forward x{pf / cf:.2f}  backward x{pb / cb:.2f}")
    kernels.use_backend(backends[0] if "cython" not in backends else "cython")


if __name__ == "__main__":
    main()
