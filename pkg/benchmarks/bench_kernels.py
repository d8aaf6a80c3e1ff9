"""Compiled vs numpy kernel timings on tracker-sized inputs.

    python benchmarks/bench_kernels.py --points 8192 --repeats 5
"""

import argparse
import statistics
import time

import numpy as np

from densetrack import kernels


def cases(rng, n):
    fmap = rng.normal(size=(96, 128, 32))
    fmap /= np.linalg.norm(fmap, axis=-1, keepdims=True)
    pos = np.column_stack([rng.uniform(0, 127, n), rng.uniform(0, 95, n)])
    cur = pos + rng.normal(0, 2, pos.shape)
    depth = rng.uniform(0.5, 5.0, (96, 128))
    m = min(n, 2048)
    corr = rng.uniform(-1, 1, (m, 49, 49))
    cells = np.stack(np.divmod(np.arange(96 * 128), 128), axis=1)
    tracked = cells[(cells[:, 0] % 4 == 2) & (cells[:, 1] % 4 == 2)]
    return {
        "bilinear_sample": (fmap, pos),
        "corr_window": (fmap, rng.normal(size=(n, 32)), cur, 3),
        "corr4d": (fmap, fmap, pos[:m], cur[:m], 7),
        "depth_window": (depth, rng.uniform(0.5, 5.0, n), cur, 3, 1e-6),
        "project_rows": (corr, rng.normal(size=(49, 32)), np.zeros(32), np.ones(32), np.zeros(32), 1e-5),
        "dual_conv": (corr[:256], rng.normal(size=(49, 49, 3, 3)) / 21, rng.normal(size=(1, 49, 3, 3)) / 21),
        "knn4": (tracked, cells[:n]),
    }


def time_ms(fn, args, repeats):
    fn(*args)
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        out.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=8192)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if "compiled" not in kernels.available_backends():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    np_mod, c_mod = kernels._module("numpy"), kernels._module("compiled")
    print(f"{'kernel':<16}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>10}{'max diff':>12}")
    for name, a in cases(np.random.default_rng(args.seed), args.points).items():
        fn_n, fn_c = getattr(np_mod, name), getattr(c_mod, name)
        diff = float(np.abs(np.asarray(fn_n(*a), dtype=np.float64) - fn_c(*a)).max())
        tn, tc = time_ms(fn_n, a, args.repeats), time_ms(fn_c, a, args.repeats)
        print(f"{name:<16}{tn:>12.2f}{tc:>14.2f}{tn / tc:>9.2f}x{diff:>12.1e}")


if __name__ == "__main__":
    main()
