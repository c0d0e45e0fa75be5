"""Compare the compiled kernels against the NumPy fallback.

Times each kernel on inputs shaped like the network's hot spots, checks that
both backends agree, and finishes with a full forward pass at 512x512 under
each backend. Single-threaded BLAS throughout.

    python benchmarks/bench_backends.py [--repeat 20] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from barseg import backend
from barseg.network import NetworkConfig, SegmentationNet, preprocess


def timeit(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times) * 1e3


def cases(rng):
    x = rng.standard_normal((1, 24, 128, 128)).astype(np.float32)
    w = rng.standard_normal((24, 3, 3)).astype(np.float32)
    cols_shape = (24 * 9, 128 * 128)
    cols = rng.standard_normal(cols_shape).astype(np.float32)
    binary = (rng.random((256, 256)) < 0.4).astype(np.uint8)
    return {
        "im2col 24x128x128 d=4": lambda k: k.im2col(x, 3, 3, 1, 4, 4),
        "col2im 24x128x128 d=4": lambda k: k.col2im(cols, 1, 24, 128, 128, 3, 3, 1, 4, 4),
        "depthwise fwd 24x128x128": lambda k: k.depthwise_forward(x, w, 1, 1, 1),
        "depthwise bwd 24x128x128": lambda k: k.depthwise_backward(x, w, x, 1, 1, 1),
        "label8 256x256 p=0.4": lambda k: k.label8(binary),
    }


def agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(agree(p, q) for p, q in zip(a, b))
    if isinstance(a, (int, np.integer)):
        return a == b
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    # float32 reductions differ in summation order, so compare against the array scale
    return a.shape == b.shape and np.abs(a - b).max() <= 1e-4 * max(np.abs(a).max(), 1.0)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()

    mods = backend.available()
    if "compiled" not in mods:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    rows = []
    with threadpool_limits(1):
        for label, fn in cases(rng).items():
            row = {"kernel": label}
            results = {}
            for name, mod in mods.items():
                row[name + "_ms"] = timeit(lambda: fn(mod), args.repeat)
                results[name] = fn(mod)
            if len(results) == 2:
                row["agree"] = agree(results["python"], results["compiled"])
            rows.append(row)

        model = SegmentationNet(NetworkConfig(), seed=0)
        img = preprocess(rng.integers(0, 256, (512, 512), dtype=np.uint8))
        previous = backend.name
        row = {"kernel": "network forward 512x512"}
        for name in mods:
            backend.use(name)
            row[name + "_ms"] = timeit(lambda: model.forward(img), max(5, args.repeat // 2))
        backend.use(previous)
        rows.append(row)

    names = list(mods)
    header = f"{'kernel':28s}" + "".join(f"{n + ' ms':>14s}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}{'agree':>8s}"
    print(header)
    for row in rows:
        line = f"{row['kernel']:28s}" + "".join(f"{row[n + '_ms']:14.2f}" for n in names)
        if len(names) == 2:
            line += f"{row['python_ms'] / row['compiled_ms']:10.2f}"
            line += f"{str(row.get('agree', '-')):>8s}"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
