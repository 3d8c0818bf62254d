"""Compare the compiled scan kernel against the numpy fallback.

    python3 benchmarks/bench_backends.py --lengths 512,1024,2048 --repeat 5
"""
import argparse
import sys

import numpy as np

from biomamba import bench, kernels


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lengths", default="512,1024,2048,4096")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--d-inner", type=int, default=64)
    p.add_argument("--d-state", type=int, default=16)
    args = p.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled kernel not available; build the package with Cython installed", file=sys.stderr)
        return 1
    lengths = [int(v) for v in args.lengths.split(",")]

    # both kernels must agree before timing means anything
    inputs = bench.scan_inputs(lengths[0], args.d_inner, args.d_state)
    y_c, _ = kernels.compiled_backend.scan_forward(*inputs)
    y_py, _ = kernels.python_backend.scan_forward(*inputs)
    print(f"# max |cython - numpy| = {np.abs(np.asarray(y_c) - y_py).max():.2e}")

    print("length,cython_ms,numpy_ms,speedup")
    rows = []
    for n in lengths:
        fast = bench.time_scan(n, args.repeat, kernels.compiled_backend, args.d_inner, args.d_state)
        slow = bench.time_scan(n, args.repeat, kernels.python_backend, args.d_inner, args.d_state)
        rows.append((fast, slow))
        print(f"{n},{fast:.3f},{slow:.3f},{slow / fast:.1f}")
    for name, col in (("cython", 0), ("numpy", 1)):
        slope = bench.scaling_exponent(lengths, [r[col] for r in rows])
        print(f"# {name} scaling exponent {slope:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
