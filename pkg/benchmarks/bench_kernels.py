"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one BPTT batch end to end with each backend, since that is where
the gate kernels are spent during training.
"""
import argparse
import os
import timeit

import numpy as np

from stylerec import kernels
from stylerec.dynamic_model import SequenceBatch, bptt_gradients, init_lstm, step_input
from stylerec.numerics import Rng


def _cases(rng):
    B, H = 32, 256
    z = rng.normal(size=(B, 4 * H))
    c = rng.normal(size=(B, H))
    dh, dc = rng.normal(size=(B, H)), rng.normal(size=(B, H))
    scores = np.round(rng.normal(size=20_000), 2)
    pos = rng.choice(20_000, 5, replace=False).astype(np.int64)
    ranks = rng.integers(1, 20_001, 5_000).astype(np.int64)
    return {
        "lstm_gates_forward (32x256)": lambda m: m.lstm_gates_forward(z, c),
        "lstm_gates_backward (32x256)": lambda m: m.lstm_gates_backward(
            *(lambda g: (g[0], c, g[2]))(m.lstm_gates_forward(z, c)), dh, dc),
        "ranks_from_scores (z=20000, 5 purchases)": lambda m: m.ranks_from_scores(scores, pos),
        "cumulative_counts (5000 ranks, z=20000)": lambda m: m.cumulative_counts(ranks, 20_000),
    }


def _bptt_batch(rng, B=32, T=20, D=128, H=256, n=20, A=2000):
    E = rng.normal(size=(A, D))
    X = np.zeros((T, B, 6 + D))
    for b in range(B):
        ts = np.sort(rng.integers(0, 10**6, T))
        idx = rng.integers(0, A, T)
        for i in range(T):
            X[i, b] = step_input(None if i == 0 else (E[idx[i - 1]], ts[i - 1]), ts[i], D)
    batch = SequenceBatch(X, rng.integers(0, A, (T, B)), rng.integers(0, A, (T, B, n)),
                          np.ones((T, B)), np.full(B, T), E)
    return init_lstm(D, H, Rng(0)), batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled kernels are not built; only the python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':45s}" + "".join(f"{name:>14s}" for name in impls) + "    speed-up")
    for label, fn in _cases(rng).items():
        times = {}
        for name, mod in impls.items():
            fn(mod)  # warm up
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        row = f"{label:45s}" + "".join(f"{1e6 * times[n]:12.1f}us" for n in impls)
        if len(times) == 2:
            row += f"    {times['python'] / times['cython']:6.2f}x"
        print(row)
    params, batch = _bptt_batch(rng)
    times = {}
    for name in impls:
        prev = kernels.set_backend(name)
        times[name] = min(timeit.repeat(lambda: bptt_gradients(params, batch, "rank"), number=1,
                                        repeat=max(args.repeat // 40, 3)))
        kernels.set_backend(prev)
    row = f"{'bptt_gradients (B=32, T=20, D=128, H=256)':45s}"
    row += "".join(f"{1e3 * times[n]:12.1f}ms" for n in impls)
    if len(times) == 2:
        row += f"    {times['python'] / times['cython']:6.2f}x"
    print(row)
    print(f"\nactive backend: {kernels.BACKEND} (set STYLEREC_KERNELS=python to force the fallback)")
    if os.environ.get("STYLEREC_KERNELS"):
        print(f"STYLEREC_KERNELS={os.environ['STYLEREC_KERNELS']}")


if __name__ == "__main__":
    main()
