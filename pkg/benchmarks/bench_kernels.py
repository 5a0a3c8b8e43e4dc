"""Time the compiled kernels against the numpy fallback on Figure-1 sized inputs.

    python benchmarks/bench_kernels.py [--samples 20000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from quickdetect import detect, fredholm, kernels, rng
from quickdetect.model import figure1_spec


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(spec, samples):
    block = fredholm.kernel_block(spec, samples, seed=0)
    b = fredholm.plane_grid(spec, fredholm.default_axes(spec, fredholm.phi_star_all(spec), 21),
                            fredholm.bound_surfaces(spec), "upper")
    flat, off, ln = b.packed
    node = np.array([1.0, 1.5])
    bj = float(b(node[None, :])[0])
    Q, S, N = block.A.shape
    bufs = [np.empty((Q, S)) for _ in range(4)]
    pts = np.random.default_rng(0).uniform(0, 6, size=(200000, 2))
    members, sizes = kernels.family_members(spec.family)
    times = detect.detection_grid(10.0, spec.lam)
    P = 1000
    dX = np.ascontiguousarray(rng.normals(0, range(P), len(times) - 1, spec.n, rng.STREAM_POLICY)
                              * np.sqrt(np.diff(times))[None, :, None])
    dts = np.diff(times)
    phi0 = np.zeros(N)
    thr = np.linspace(0.5, 8.0, 30)

    def run(mod):
        return {
            "interp 2e5 pts": lambda: mod.interp_multilinear(flat, off, ln, b.values, pts),
            "node_terms": lambda: mod.node_terms(block.A, block.B, block.quad.weights, spec.p, spec.lam / spec.c,
                                                 flat, off, ln, b.values, node, bj, 1.0, *bufs),
            "piecewise_root": lambda: mod.piecewise_root(*bufs, 0.0, 6.0),
            "detect_boundary 1e3 paths": lambda: mod.detect_boundary(
                dX, dts, members, sizes, spec.mu, spec.growth, spec.lam, phi0, flat, off, ln, b.values),
            "detect_thresholds 1e3x30": lambda: mod.detect_thresholds(
                dX, dts, members, sizes, spec.mu, spec.growth, spec.lam, phi0, spec.p, thr),
        }

    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    spec = figure1_spec()
    run = cases(spec, args.samples)
    fast = run(kernels.backend("cython"))
    slow = run(kernels.backend("python"))
    print(f"{'kernel':28s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name in fast:
        tf = best_of(fast[name], args.repeat)
        ts = best_of(slow[name], args.repeat)
        print(f"{name:28s} {tf:10.4f} {ts:10.4f} {ts / tf:8.1f}")


if __name__ == "__main__":
    main()
