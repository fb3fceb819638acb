"""Compare the compiled and numpy kernel backends on the same workloads.

    python bench/bench_kernels.py --dims 512x903x512 --reps 10 --json out.json
"""

import argparse
import json
import statistics
import time

import numpy as np

from bitwave import bitkernel
from bitwave.quant import quantize_matrix, quantize_with_scales, residual_scales

PAIRS = ((1, 1), (1, 2), (2, 1), (2, 2), (4, 4), (8, 8))


def median_time(fn, reps, warmup=1):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def workloads(m, n, p, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n)).astype(np.float32)
    w = rng.standard_normal((p, n)).astype(np.float32)
    w_t = np.ascontiguousarray(w.T)
    jobs = {"gemm_dense f32": lambda: bitkernel.gemm_dense(x, w_t)}
    for nb in sorted({nb for _, nb in PAIRS}):
        scales = residual_scales(x, nb)
        jobs[f"quantize_pack N{nb}"] = lambda s=scales: quantize_with_scales(x, s)
    for wb, nb in PAIRS:
        xq = quantize_with_scales(x, residual_scales(x, nb))
        wq = quantize_matrix(w, wb)
        jobs[f"gemm_quantized W{wb}/N{nb}"] = lambda a=xq, b=wq: bitkernel.gemm_quantized(a, b)
    return jobs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", default="512x903x512", help="MxNxP")
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)
    m, n, p = (int(v) for v in args.dims.split("x"))

    results = {}
    backends = bitkernel.available_backends()
    for name in backends:
        with bitkernel.use_backend(name):
            for label, fn in workloads(m, n, p, args.seed).items():
                results.setdefault(label, {})[name] = median_time(fn, args.reps)

    print(f"{m}x{n}x{p}, threads={bitkernel.default_threads()}, median of {args.reps}")
    header = f"{'kernel':28s}" + "".join(f"{b:>14s}" for b in backends)
    if len(backends) == 2:
        header += f"{'ratio':>10s}"
    print(header)
    for label, row in results.items():
        line = f"{label:28s}" + "".join(f"{row[b] * 1e3:12.3f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{row['python'] / row['compiled']:9.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"dims": [m, n, p], "reps": args.reps, "seconds": results}, fh, indent=1)


if __name__ == "__main__":
    main()
