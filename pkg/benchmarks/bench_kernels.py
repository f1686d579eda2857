"""Time the compiled and pure-numpy kernel backends on training-sized tensors.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one forward+backward pass of the default desk network under each
backend (the backend is chosen at import, so each runs in a subprocess).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from uncseg.kernels import available_backends

NET_SNIPPET = """
import time, numpy as np
from uncseg.net import NetConfig, init_params, forward, backward
from uncseg import kernels
p = init_params(NetConfig(4, 4))
x = np.random.default_rng(0).standard_normal((2, 4, 32, 32, 32)).astype(np.float32)
forward(p, x)
best = 1e9
for _ in range({repeat}):
    t = time.perf_counter()
    out = forward(p, x)
    backward(p, out, np.ones_like(out.seg_logits), np.ones_like(out.unc_prob))
    best = min(best, time.perf_counter() - t)
print(kernels.BACKEND, best)
"""


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 2, 32, 32, 32)).astype(np.float32)
    cols = rng.standard_normal((16, 27, 2, 32, 32, 32)).astype(np.float32)
    e = (rng.random((2, 32, 32, 32)) < 0.1).astype(np.float64)
    cases = {
        "im2col3 (16ch, 2x32^3)": lambda k: k.im2col3(x),
        "col2im3 (16ch, 2x32^3)": lambda k: k.col2im3(cols),
        "box_sum3 (2x32^3)": lambda k: k.box_sum3(e),
    }
    backends = available_backends()
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b in backends) + "     speedup")
    for label, fn in cases.items():
        times = {b: min(timeit.repeat(lambda: fn(k), number=1, repeat=repeat)) for b, k in backends.items()}
        row = f"{label:<26}" + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in backends)
        if "compiled" in times:
            row += f"   x{times['python'] / times['compiled']:.2f}"
        print(row)


def bench_network(repeat: int) -> None:
    print("\nforward+backward, batch 2 at 32^3, depth 3, width 8:")
    for backend in available_backends():
        env = {**os.environ, "UNCSEG_KERNELS": backend}
        res = subprocess.run(
            [sys.executable, "-c", NET_SNIPPET.format(repeat=repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        name, seconds = res.stdout.split()
        print(f"  {name:<10} {float(seconds):.3f}s")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_network(max(1, args.repeat // 2))
