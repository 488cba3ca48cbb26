"""Head-to-head timing of the numba and NumPy builds of every dispatched
kernel, at the shapes the training loop actually hits.

Run:  python benchmarks/bench_kernels.py [--repeats N]

The active build is chosen by CACTI_BACKEND (auto/numba/numpy); this script
always times both builds regardless of the dispatch choice. Expect numba to
win the loop-shaped kernels (mask selection, fused AdamW, attention core,
layer norm) and NumPy to win gelu, whose SIMD tanh beats numba's scalar
libm calls; that is why gelu dispatches to NumPy in both modes.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cacti import kernels
from cacti.backend import HAS_NUMBA
from cacti.rng import stream


def timeit(fn, *args, repeats=200):
    fn(*args)  # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats * 1e3


def bench(repeats: int):
    rng = stream(0, "bench")
    rows = []

    observed = (rng.random((2000, 16)) > 0.3).astype(np.uint8)
    observed[observed.sum(axis=1) == 0, 0] = 1
    permuted = observed[rng.permutation(2000)]
    draws = rng.random(2000)
    rows.append(("adopt_copy_rows (2000x16)",
                 (observed, permuted, draws, 0.9)))

    effective = observed & (rng.random(observed.shape) > 0.2).astype(np.uint8)
    for i in range(observed.shape[0]):
        if effective[i].sum() == 0:
            effective[i, np.argmax(observed[i])] = 1
    perms = np.stack([rng.permutation(16) for _ in range(2000)]).astype(np.int64)
    counts = effective.sum(axis=1).astype(np.int64)
    keep = np.minimum(counts, int(np.median(counts)))
    rows.append(("select_truncated (2000x16)",
                 (effective, observed, perms, keep)))

    x2 = rng.normal(size=(1024, 32)).astype(np.float32)
    gain = np.ones(32, np.float32)
    bias = np.zeros(32, np.float32)
    rows.append(("layernorm_fwd (1024x32)", (x2, gain, bias, 1e-6)))

    flat = rng.normal(size=1024 * 128).astype(np.float32)
    rows.append(("gelu_fwd (131k)", (flat, 0.7978845608028654, 0.044715)))

    q = rng.normal(size=(1024, 6, 4)).astype(np.float32)
    rows.append(("attention_core_fwd (1024x6x4)", (q, q.copy(), q.copy(), 0.5)))

    a = np.sort(rng.normal(size=5000))
    b = np.sort(rng.normal(size=3000))
    rows.append(("wasserstein_merge (5000 vs 3000)", (a, b)))

    p = rng.normal(size=100_000).astype(np.float32)
    g = rng.normal(size=100_000).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    rows.append(("adamw_update (100k params)",
                 (p, g, m, v, 1e-3, 0.9, 0.95, 1e-8, 0.05, 0.1, 0.05)))

    name_width = max(len(name) for name, _ in rows)
    print(f"{'kernel':<{name_width}}  {'numpy (ms)':>11}  {'numba (ms)':>11}  "
          f"{'speedup':>8}")
    for name, args in rows:
        impls = kernels.IMPLEMENTATIONS[name.split(" ")[0]]
        t_np = timeit(impls["numpy"], *args, repeats=repeats)
        t_nb = timeit(impls["numba"], *args, repeats=repeats)
        print(f"{name:<{name_width}}  {t_np:>11.4f}  {t_nb:>11.4f}  "
              f"{t_np / t_nb:>7.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    print(f"numba available: {HAS_NUMBA}; active backend: "
          f"{'numba' if kernels.use_numba() else 'numpy'}")
    if not HAS_NUMBA:
        print("numba missing: its rows time the plain-Python loop fallback")
    bench(args.repeats)


if __name__ == "__main__":
    main()
