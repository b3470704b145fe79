"""Compare the numba and numpy kernels on exact IoU and Monte-Carlo counting.

    python benchmarks/bench_kernels.py [--pairs 2000] [--points 1000000]

Inputs are prepared once through the public helpers and then fed to both
backends, so the timings cover the kernels only. Numba compile time is paid
in a warm-up call and reported separately.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from geoanchor.geometry import FACES, Box3D, _half_spaces

from geoanchor._kernels import numpy_impl

try:
    from geoanchor._kernels import numba_impl
except ImportError:  # numba not installed
    numba_impl = None


def _pairs(n: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a = Box3D(0, 0, 0, *rng.uniform(0.4, 2, 3), *rng.uniform(-np.pi, np.pi, 3))
        b = Box3D(*rng.uniform(-0.8, 0.8, 3), *rng.uniform(0.4, 2, 3), *rng.uniform(-np.pi, np.pi, 3))
        origin = np.zeros(3)
        ca, na, da = _half_spaces(a, origin)
        cb, nb, db = _half_spaces(b, origin)
        tol = 1e-12 * (1.0 + np.abs(ca).max() + np.abs(cb).max())
        out.append((ca, na, da, cb, nb, db, FACES, tol))
    return out


def _mc_args(n_points: int, seed: int):
    rng = np.random.default_rng(seed)
    a = Box3D(0, 0, 0, 1.0, 1.2, 0.8, 0.3, 0.1, -0.2)
    b = Box3D(0.3, -0.2, 0.1, 0.9, 1.1, 1.3, -0.5, 0.2, 0.4)
    pts = rng.uniform(-1.5, 1.5, (n_points, 3))
    return (pts, np.array([a.x, a.y, a.z]), a.rotation(), a.dims / 2,
            np.array([b.x, b.y, b.z]), b.rotation(), b.dims / 2)


def _time(fn, repeat: int = 3) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--points", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    pairs = _pairs(args.pairs, args.seed)
    mc = _mc_args(args.points, args.seed)
    backends = [("numpy", numpy_impl)]
    if numba_impl is not None:
        backends.append(("numba", numba_impl))
    else:
        print("numba not installed; timing the numpy backend only")

    results = {}
    for name, impl in backends:
        t0 = time.perf_counter()
        impl.intersection_volume(*pairs[0])
        impl.count_inside(mc[0][:10], *mc[1:])
        warm = time.perf_counter() - t0
        t_iou = _time(lambda: [impl.intersection_volume(*p) for p in pairs])
        t_mc = _time(lambda: impl.count_inside(*mc))
        vols = np.array([impl.intersection_volume(*p) for p in pairs])
        results[name] = (t_iou, t_mc, vols, impl.count_inside(*mc))
        print(f"{name:6s} warm-up {warm:8.3f} s | exact IoU {args.pairs} pairs {t_iou:8.4f} s "
              f"({1e6 * t_iou / args.pairs:7.1f} us/pair) | MC count {args.points} pts {t_mc:8.4f} s")

    if len(results) == 2:
        (ti0, tm0, v0, c0), (ti1, tm1, v1, c1) = results["numpy"], results["numba"]
        print(f"speed-up numba/numpy: exact IoU x{ti0 / ti1:.1f}, MC count x{tm0 / tm1:.1f}")
        print(f"max volume difference {np.abs(v0 - v1).max():.2e}, MC counts equal: {c0 == c1}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
