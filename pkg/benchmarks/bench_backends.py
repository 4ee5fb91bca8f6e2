#!/usr/bin/env python3
"""Benchmark the compiled chain-dynamics kernels against the numpy reference.

Run: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from pushident.chain import ChainState, backend, sample_chain
from pushident.chain import dynamics as ref
from pushident.interaction import PushAction, UniformRandomSource, rollout_episode


def time_fn(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_settle(repeats):
    rng = np.random.default_rng(0)
    model = sample_chain(rng, 2, (0.1, 1.0))
    state = ChainState([0, 0, 0.3, 0.5], [0.4, -0.2, 1.0, -2.0])
    t_c, (out_c, steps) = time_fn(lambda: backend.settle(model, state), repeats)
    t_p, (out_p, _) = time_fn(lambda: ref.settle(model, state), repeats)
    assert np.max(np.abs(out_c.q - out_p.q)) < 1e-9
    return f"settle ({steps} steps)", t_c, t_p


def bench_push(repeats):
    rng = np.random.default_rng(1)
    model = sample_chain(rng, 2, (0.1, 1.0))
    state = ChainState([0, 0, 0.3, 0.5])
    direction = np.array([0.0, 1.0])
    args = (model, state, 1, 0.02, 1, direction, 0.6)
    t_c, out_c = time_fn(lambda: backend.push_window(*args), repeats)
    t_p, out_p = time_fn(lambda: ref.push_window(*args), repeats)
    assert np.max(np.abs(out_c.q - out_p.q)) < 1e-9
    return "push window (100 substeps)", t_c, t_p


def bench_episode(repeats):
    import os

    rng = np.random.default_rng(2)
    model = sample_chain(rng, 2, (0.1, 1.0))

    def run_episode():
        return rollout_episode(
            model, UniformRandomSource(), 5, 0.01, np.random.default_rng(7)
        )

    t_c, _ = time_fn(run_episode, repeats)
    return "episode (5 pushes, compiled only)", t_c, None


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    print(f"active backend: {backend.backend_name()}")
    if backend.backend_name() != "compiled":
        print("compiled extension missing: timings below are pure-python only")
    rows = [bench_settle(args.repeats), bench_push(args.repeats),
            bench_episode(args.repeats)]
    print(f"{'benchmark':36} {'compiled':>12} {'pure numpy':>12} {'speedup':>9}")
    for name, t_c, t_p in rows:
        if t_p is None:
            print(f"{name:36} {t_c * 1e3:10.2f}ms {'-':>12} {'-':>9}")
        else:
            print(
                f"{name:36} {t_c * 1e3:10.2f}ms {t_p * 1e3:10.2f}ms "
                f"{t_p / t_c:8.0f}x"
            )


if __name__ == "__main__":
    main()
