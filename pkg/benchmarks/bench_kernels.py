"""Time the compiled and numpy kernel backends on typical workload shapes.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from srdistill import _backend

CASES = {
    # denoiser layer: batch 8, 32x32, width 16
    "conv3x3_forward": lambda rng: ((rng.normal(size=(8, 32, 32, 16)), rng.normal(size=(144, 16)),
                                     rng.normal(size=16)), {}),
    "conv3x3_backward": lambda rng: ((rng.normal(size=(8, 32, 32, 16)), rng.normal(size=(144, 16)),
                                      rng.normal(size=(8, 32, 32, 16))), {}),
    # one resample pass: 64 rows -> 16 with 18 taps each, over 64*3 columns
    "apply_taps": lambda rng: ((rng.normal(size=(64, 192)), rng.integers(0, 64, size=(16, 18)),
                                rng.random((16, 18))), {}),
    # k-means assignment: 720 patches, 30-dim, k=7
    "nearest_centroid": lambda rng: ((rng.normal(size=(720, 30)), rng.normal(size=(7, 30))), {}),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args()
    impls = sorted(_backend.IMPLEMENTATIONS)
    if "compiled" not in impls:
        print("compiled backend not built; timing the numpy fallback only")
    print(f"{'kernel':<20}" + "".join(f"{name + ' (ms)':>16}" for name in impls) + f"{'speedup':>10}")
    rng = np.random.default_rng(0)
    for name, make in CASES.items():
        call_args, kw = make(rng)
        times = {}
        for impl in impls:
            fn = getattr(_backend.IMPLEMENTATIONS[impl], name)
            best = min(timeit.repeat(lambda: fn(*call_args, **kw), number=args.number, repeat=args.repeat))
            times[impl] = 1000 * best / args.number
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{times[i]:>16.3f}" for i in impls) + f"{speedup:>10.2f}")


if __name__ == "__main__":
    main()
