"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 2000] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from swarmest import _kernels_py
from swarmest.measurements import tangent_basis_batch

try:
    from swarmest import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    p = lambda: np.column_stack([rng.uniform(-5, 5, (n, 3)), rng.uniform(-3, 3, n)])
    meas, pa, pb = p(), p(), p()
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return {
        "pose_pair_batch": (meas, np.full((n, 4), 10.0), pa, pb),
        "distance_batch": (rng.uniform(1, 5, n), np.full(n, 6.0), pa, pb),
        "detection_batch": (dirs, rng.uniform(0.1, 1, n), np.zeros((n, 3)), tangent_basis_batch(dirs),
                            np.full(n, 50.0), np.full(n, 5.0), pa, pb),
        "propagate_batch": (meas, pa, pb),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="rows per batch")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    data = inputs(args.n)
    print(f"{'kernel':<18}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, a in data.items():
        t_py = min(timeit.repeat(lambda: getattr(_kernels_py, name)(*a), number=1, repeat=args.repeat))
        if _kernels_c is None:
            print(f"{name:<18}{t_py * 1e3:>10.3f}{'n/a':>11}{'':>9}")
            continue
        t_c = min(timeit.repeat(lambda: getattr(_kernels_c, name)(*a), number=1, repeat=args.repeat))
        print(f"{name:<18}{t_py * 1e3:>10.3f}{t_c * 1e3:>11.3f}{t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
