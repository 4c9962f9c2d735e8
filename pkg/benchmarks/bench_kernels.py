"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Reports the median wall time per call for each kernel on both backends, the
speedup, and the maximum absolute difference between their outputs. A last
row times one full training step under each backend (in a subprocess, since
the backend is fixed at import).
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from picot import _kernels_py as py

try:
    from picot import _kernels as cy
except ImportError:
    cy = None


def _cases(rng):
    h = rng.normal(size=(96, 64))
    d = py.pairwise_l2(h, 1e-12)
    gd = rng.normal(size=d.shape)
    x = rng.normal(size=(32 * 40, 64))
    gamma, beta = rng.normal(size=64), rng.normal(size=64)
    _, xhat, rstd = py.layer_norm_forward(x, gamma, beta, 1e-5)
    f = rng.normal(size=(32 * 40, 128))
    s = rng.normal(size=(32 * 2 * 40, 40))
    y = py.softmax_rows(s)
    ids = rng.integers(0, 500, size=32 * 40)
    return {
        "pairwise_l2": ("pairwise_l2", (h, 1e-12)),
        "pairwise_l2_backward": ("pairwise_l2_backward", (h, d, gd)),
        "layer_norm_forward": ("layer_norm_forward", (x, gamma, beta, 1e-5)),
        "layer_norm_backward": ("layer_norm_backward", (x, xhat, rstd, gamma)),
        "gelu_forward": ("gelu_forward", (f,)),
        "gelu_backward": ("gelu_backward", (f, f)),
        "softmax_rows": ("softmax_rows", (s,)),
        "softmax_rows_backward": ("softmax_rows_backward", (y, s)),
        "scatter_add_rows": ("scatter_add_rows", (ids, x, 500)),
    }


def _time(fn, args, repeat):
    fn(*args)
    samples = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t)
    return statistics.median(samples)


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


STEP_SNIPPET = """
import time
from picot.corpus import SynthSpec, generate_synthetic
from picot.trainer import TrainConfig, TrainState, new_model, train_step
import picot
c = generate_synthetic(SynthSpec(seed=0))
cfg = TrainConfig(dropout=0.0)
m = new_model(cfg, c.train, c.descriptions, c.taxonomy)
st = TrainState(cfg, c.descriptions)
train_step(c.train[:32], m, cfg, st)
ts = []
for k in range(1, {repeat} + 1):
    t = time.perf_counter()
    train_step(c.train[32 * k:32 * (k + 1)], m, cfg, st)
    ts.append(time.perf_counter() - t)
ts.sort()
print(picot.BACKEND, ts[len(ts) // 2])
"""


def _train_step(backend, repeat):
    env = dict(os.environ)
    env.pop("PICOT_PURE_PYTHON", None)
    if backend == "python":
        env["PICOT_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    name, seconds = out.stdout.split()
    return name, float(seconds)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=5, help="training steps timed per backend")
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not built; run `pip install -e .` first", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<24}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max |diff|':>12}")
    for name, (fn, fargs) in _cases(rng).items():
        t_py = _time(getattr(py, fn), fargs, args.repeat)
        t_cy = _time(getattr(cy, fn), fargs, args.repeat)
        diff = _max_diff(getattr(py, fn)(*fargs), getattr(cy, fn)(*fargs))
        rows.append({"kernel": name, "numpy_s": t_py, "cython_s": t_cy, "max_abs_diff": diff})
        print(f"{name:<24}{t_py * 1e3:>10.3f}{t_cy * 1e3:>11.3f}{t_py / t_cy:>8.2f}x{diff:>12.1e}")

    step = {}
    for backend in ("python", "cython"):
        reported, seconds = _train_step(backend, args.steps)
        assert reported == backend, (reported, backend)
        step[backend] = seconds
    print(f"{'train_step (batch 32)':<24}{step['python'] * 1e3:>10.1f}{step['cython'] * 1e3:>11.1f}"
          f"{step['python'] / step['cython']:>8.2f}x{'':>12}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"kernels": rows, "train_step": step}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
