"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time for each backend and
the speed-up. A final pair of lines times one inverter training step at 32^3
with each backend (run in a subprocess so the backend is chosen at import).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gprinv import _pykernels

try:
    from gprinv import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    xp = rng.standard_normal((2, 8, 18, 18, 18)).astype(np.float32)
    w = rng.standard_normal((8, 8, 3, 3, 3)).astype(np.float32)
    g = rng.standard_normal((2, 8, 16, 16, 16)).astype(np.float32)
    cols = np.empty((2, 16 ** 3, 8 * 27), np.float32)
    pool_in = rng.standard_normal((2, 8, 32, 32, 32)).astype(np.float32)
    pooled, idx = _pykernels.maxpool2_forward(pool_in)
    n_tr, n_t, n_pts = 64, 256, 400
    tx = rng.uniform(-0.2, 0.2, (n_tr, 3))
    rx = tx + [0.02, 0, 0]
    pts = rng.uniform(-0.2, 0.2, (n_pts, 3))
    pts[:, 2] = rng.uniform(0.05, 0.3, n_pts)
    wts = rng.uniform(-1, 1, n_pts)
    return {
        "im2col3d": lambda k: k.im2col3d(xp, 3, 1, cols),
        "col2im3d": lambda k: k.col2im3d(cols, 3, 1, np.zeros_like(xp)),
        "conv3d_direct": lambda k: k.conv3d_direct(xp, w, np.zeros_like(g)),
        "conv3d_direct_grad_weight": lambda k: k.conv3d_direct_grad_weight(xp, g, np.zeros_like(w)),
        "maxpool2_forward": lambda k: k.maxpool2_forward(pool_in),
        "maxpool2_backward": lambda k: k.maxpool2_backward(pooled, idx),
        "born_accumulate": lambda k: k.born_accumulate(np.zeros((n_tr, n_t)), tx, rx, pts, wts,
                                                       1.5e8, 2.5e-11, 1e-9, 1.6e9, 1.5e-9),
    }


STEP = """
import time, numpy as np
from gprinv import BACKEND
from gprinv.inverter import Inverter, InverterConfig
from gprinv.trainer import TrainConfig, fit
rng = np.random.default_rng(0)
x = [rng.uniform(size=(32, 32, 32)).astype(np.float32) for _ in range(3)]
y = [4 + 4 * v for v in x]
net = Inverter(InverterConfig(3, 4, True), seed=0, dtype=np.float32)
t = time.perf_counter()
fit(net, x[:2], y[:2], x[2:], y[2:], TrainConfig(epochs=1, batch_size=2, loss="mae"))
print(BACKEND, time.perf_counter() - t)
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-step", action="store_true", help="skip the end-to-end training step")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:28s} {t_py:10.2f} {'n/a':>10s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:8.1f}x")
    if args.skip_step:
        return
    for backend in ("cython", "python"):
        env = dict(os.environ, GPRINV_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", STEP], env=env, capture_output=True, text=True, check=True)
        name, secs = out.stdout.split()
        print(f"inverter epoch (2 x 32^3), backend {name}: {float(secs):.2f} s")


if __name__ == "__main__":
    main()
