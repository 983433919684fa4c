"""Compiled vs. numpy row kernels, alone and inside one training run.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from ptnoise.losses import LossSpec, kernel_args
from ptnoise.methods import MethodSpec, TrainConfig, build_method_state, train
from ptnoise.numeric import kernels
from ptnoise.world import WorldConfig, generate_world, inject_random_noise, sample_dataset


def kernel_cases():
    g = np.random.default_rng(0)
    for rows, cols in ((32, 10), (1, 17), (160, 16)):
        z = g.normal(size=(rows, cols))
        p = kernels.softmax_rows(z)
        y, norms = kernels.l2_normalize_rows(z, 1e-12)
        t = np.tanh(z)
        labels = g.integers(0, cols, size=rows)
        gce = kernel_args(LossSpec("GCE"))
        shape = f"{rows}x{cols}"
        yield f"softmax_rows {shape}", lambda: kernels.softmax_rows(z)
        yield f"softmax_rows_backward {shape}", lambda: kernels.softmax_rows_backward(p, z)
        yield f"l2_normalize_rows {shape}", lambda: kernels.l2_normalize_rows(z, 1e-12)
        yield f"l2_normalize_rows_backward {shape}", lambda: kernels.l2_normalize_rows_backward(y, norms, z)
        yield f"tanh_backward {shape}", lambda: kernels.tanh_backward(t, z)
        yield f"loss_rows[GCE] {shape}", lambda: kernels.loss_rows(p, labels, *gce)


def training_run():
    world = generate_world(WorldConfig(seed=0))
    data = inject_random_noise(sample_dataset(world, "train"), 0.5, 0)
    spec = MethodSpec("PromptTuning")
    cfg = TrainConfig(epochs=10)
    return lambda: train(build_method_state(spec, world, 0), spec, data, cfg)


def best_of(fn, repeat, number):
    fn()  # warm caches before timing
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is timed")
    rows = {}
    for be in backends:
        kernels.set_backend(be)
        for name, fn in kernel_cases():
            rows.setdefault(name, {})[be] = best_of(fn, args.repeat, 2000)
        rows.setdefault("train PromptTuning 10 epochs", {})[be] = best_of(training_run(), args.repeat, 1)
    print(f"{'case':40s}" + "".join(f"{b:>14s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, t in rows.items():
        line = f"{name:40s}" + "".join(f"{t[b] * 1e6:12.2f}us" for b in backends)
        if len(backends) > 1:
            line += f"   {t['python'] / t['cython']:6.2f}x"
        print(line)
    kernels.set_backend(backends[-1])


if __name__ == "__main__":
    main()
