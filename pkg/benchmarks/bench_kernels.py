"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 600]

Each kernel runs once untimed (numba compiles on first call), then the best
of ``--repeat`` wall-clock timings is reported together with the maximum
absolute difference between the two backends' outputs.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from magnav._kernels import numba_impl, numpy_impl


def _inputs(K, rng):
    theta = rng.uniform(-np.pi, np.pi, K)
    r = np.cumsum(rng.normal(scale=0.1, size=(K, 2)), axis=0)
    ia = np.arange(K - 2)
    B = rng.normal(scale=40.0, size=(K, 3))
    G = rng.normal(scale=20.0, size=(K, 3, 3))
    G = 0.5 * (G + np.swapaxes(G, 1, 2))
    G -= np.trace(G, axis1=1, axis2=2)[:, None, None] * np.eye(3) / 3
    pts = np.column_stack([r, np.zeros(K)])
    pos = rng.uniform(-5, 5, size=(60, 3))
    pos[:, 2] = -2.0
    mom = rng.normal(scale=1000.0, size=(60, 3))
    x = rng.normal(size=K)
    return {
        "dipole_field": (pts, pos, mom, 1e-7 * 1e6),
        "fd_blocks": (theta, r, ia, ia + 1, B[ia], B[ia + 1], G[ia + 1]),
        "cd_blocks": (theta, r, ia, ia + 1, ia + 2, B[ia], B[ia + 2], G[ia + 1]),
        "slip_blocks": (theta, r, ia, ia + 1),
        "abs_diff_matrix": (x,),
        "local_minima": (np.abs(x[:, None] - x[None, :]), 0.05, 40, 10),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(np.asarray(out, dtype=float))


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=600, help="keyframes (default 600)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    cases = _inputs(args.size, np.random.default_rng(0))
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}{'max |diff|':>12}")
    for name, kargs in cases.items():
        f_np, f_nb = getattr(numpy_impl, name), getattr(numba_impl, name)
        diff = np.max(np.abs(_flatten(f_np(*kargs)) - _flatten(f_nb(*kargs))))
        t_np = _best(f_np, kargs, args.repeat)
        t_nb = _best(f_nb, kargs, args.repeat)
        print(f"{name:<16}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
