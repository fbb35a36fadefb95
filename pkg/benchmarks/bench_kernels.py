"""Compare the compiled and numpy CSR kernels on interpolation-sized matrices.

    python benchmarks/bench_kernels.py [--sizes 32 64 128 256] [--repeats 50]

Prints CSV: size, nnz, backend, matvec_us, rmatvec_us, speedup over numpy.
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from gsv_interp import _kernels
from gsv_interp.graphmodel import (
    EdgeParams,
    checkerboard_partition,
    directed_pattern,
)
from gsv_interp.linalg import SparseMatrix


def perturbation_like(size, rng):
    part = checkerboard_partition(size, size)
    rows, cols = directed_pattern(part, EdgeParams())
    p = SparseMatrix.from_triplets((part.M, part.N), rows, cols, rng.uniform(-0.9, 0.9, len(rows)))
    return p


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing numpy only", file=sys.stderr)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["size", "nnz", "backend", "matvec_us", "rmatvec_us", "speedup"])
    rng = np.random.default_rng(0)
    for size in args.sizes:
        p = perturbation_like(size, rng)
        x = rng.standard_normal(p.cols)
        w = rng.standard_normal(p.rows)
        ref = None
        for name in backends:
            mv, rmv = _kernels.get_backend(name)
            t_mv = min(timeit.repeat(lambda: mv(p.indptr, p.indices, p.data, x, p.rows),
                                     number=args.repeats, repeat=3)) / args.repeats
            t_rmv = min(timeit.repeat(lambda: rmv(p.indptr, p.indices, p.data, w, p.cols),
                                      number=args.repeats, repeat=3)) / args.repeats
            total = t_mv + t_rmv
            ref = total if name == "python" else ref
            out.writerow([size, p.nnz, name, f"{1e6 * t_mv:.2f}", f"{1e6 * t_rmv:.2f}",
                          f"{ref / total:.2f}"])


if __name__ == "__main__":
    main()
