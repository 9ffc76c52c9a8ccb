"""Compare the compiled and pure-numpy kernel lanes.

Runs the fused LSTM cell (forward + backward) and the Adam update at a few
widths in subprocesses, once per lane (HIERCAP_PURE=1 forces the fallback),
and prints a table of microseconds per call.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, sys, timeit
import numpy as np
from hiercap import kernels

repeats = int(sys.argv[1])
results = {"backend": kernels.BACKEND, "cases": []}
rng = np.random.default_rng(0)
for in_dim, hidden in [(16, 16), (64, 64), (256, 128), (256, 256)]:
    x = rng.standard_normal(in_dim)
    h = rng.standard_normal(hidden)
    c = rng.standard_normal(hidden)
    wx = rng.standard_normal((in_dim, 4 * hidden))
    wh = rng.standard_normal((hidden, 4 * hidden))
    b = rng.standard_normal(4 * hidden)
    dh = rng.standard_normal(hidden)
    dc = rng.standard_normal(hidden)
    _, _, cache = kernels.lstm_cell_forward(x, h, c, wx, wh, b)
    fwd = timeit.timeit(
        lambda: kernels.lstm_cell_forward(x, h, c, wx, wh, b), number=repeats
    )
    bwd = timeit.timeit(
        lambda: kernels.lstm_cell_backward(dh, dc, cache, x, h, c, wx, wh),
        number=repeats,
    )
    results["cases"].append(
        {"op": f"lstm {in_dim}x{hidden}", "fwd_us": 1e6 * fwd / repeats,
         "bwd_us": 1e6 * bwd / repeats}
    )
for size in [4096, 262144, 1048576]:
    p = rng.standard_normal(size)
    g = rng.standard_normal(size)
    m = np.zeros(size)
    v = np.zeros(size)
    t = timeit.timeit(
        lambda: kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
        number=repeats,
    )
    results["cases"].append({"op": f"adam {size}", "fwd_us": 1e6 * t / repeats})
print(json.dumps(results))
"""


def run_lane(pure: bool, repeats: int) -> dict:
    env = dict(os.environ, HIERCAP_PURE="1" if pure else "0")
    out = subprocess.run(
        [sys.executable, "-c", _WORKER, str(repeats)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout)


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    compiled = run_lane(pure=False, repeats=args.repeats)
    pure = run_lane(pure=True, repeats=args.repeats)
    if compiled["backend"] != "compiled":
        print("warning: compiled lane unavailable, comparing python vs python")

    print(f"{'case':<16} {'compiled us':>12} {'pure us':>12} {'speedup':>8}")
    for a, b in zip(compiled["cases"], pure["cases"]):
        for key, suffix in (("fwd_us", ""), ("bwd_us", " bwd")):
            if key not in a:
                continue
            ratio = b[key] / a[key]
            print(
                f"{a['op'] + suffix:<16} {a[key]:>12.2f} {b[key]:>12.2f} "
                f"{ratio:>7.2f}x"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
