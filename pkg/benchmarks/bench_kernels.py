"""Compare the compiled row kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Also times one backbone forward/backward step with each backend selected at
import (the backend is fixed per process, so that part spawns subprocesses).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from catchvqa.tensor import _kernels_py

try:
    from catchvqa.tensor import _kernels as _compiled
except ImportError:
    _compiled = None

STEP = r"""
import time
from catchvqa import synthdata as S
from catchvqa.backbone import Backbone
from catchvqa.tensor import kernels
from catchvqa.trainer import batch_loss
tr = S.gen_dataset(n_per_domain=20, seed=0)[0]
bb = Backbone(seed=0)
idx = list(range(32))
batch_loss(bb, tr, idx).backward()
t = time.perf_counter()
for _ in range({n}):
    batch_loss(bb, tr, idx).backward()
print(kernels.BACKEND, (time.perf_counter() - t) / {n})
"""


def cases(rng):
    x = rng.normal(size=(32 * 4 * 16, 16))  # attention score rows (batch*heads*queries, keys)
    h = rng.normal(size=(32 * 16, 64))  # token rows
    g = rng.normal(size=h.shape)
    gamma, beta = rng.normal(size=64), rng.normal(size=64)
    _, xhat, rstd = _kernels_py.layernorm_forward(h, gamma, beta, 1e-5)
    y = _kernels_py.softmax_forward(x)
    return {
        "gelu_forward": lambda m: m.gelu_forward(h),
        "gelu_backward": lambda m: m.gelu_backward(h, g),
        "layernorm_forward": lambda m: m.layernorm_forward(h, gamma, beta, 1e-5),
        "layernorm_backward": lambda m: m.layernorm_backward(g, xhat, rstd, gamma),
        "softmax_forward": lambda m: m.softmax_forward(x),
        "softmax_backward": lambda m: m.softmax_backward(y, x),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--steps", type=int, default=3, help="backbone steps per backend")
    args = ap.parse_args(argv)

    if _compiled is None:
        print("compiled kernels not built; install with a C compiler and Cython to compare")
    print(f"{'kernel':<20} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=args.repeat, repeat=3)) / args.repeat
        if _compiled is None:
            print(f"{name:<20} {t_py * 1e6:>10.1f} {'-':>10} {'-':>8}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_compiled), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<20} {t_py * 1e6:>10.1f} {t_c * 1e6:>10.1f} {t_py / t_c:>7.2f}x")

    print("\nbackbone train step (batch 32):")
    for pure in ("1", "0"):
        env = dict(os.environ, CATCHVQA_PURE_PYTHON=pure)
        out = subprocess.run(
            [sys.executable, "-c", STEP.format(n=args.steps)], env=env, capture_output=True, text=True, check=True
        )
        backend, secs = out.stdout.split()
        print(f"  {backend:<8} {float(secs) * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
