"""Benchmark the compiled forward-backward kernels against the pure
numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--repeats 5]

The recursion over time dominates posterior computation during training,
which is why it is the one compiled hot spot; everything around it is
already vectorized numpy.
"""

import argparse
import time

import numpy as np

from genhmm._kernels import _ref

try:
    from genhmm._kernels import _core
except ImportError:
    _core = None


def problem(rng, n_states, n_frames):
    log_start = np.ascontiguousarray(np.log(rng.dirichlet(np.ones(n_states))))
    log_trans = np.ascontiguousarray(
        np.log(rng.dirichlet(np.ones(n_states), size=n_states)))
    framelog = np.ascontiguousarray(
        rng.normal(scale=3.0, size=(n_frames, n_states)))
    return log_start, log_trans, framelog


def run_once(impl, problems):
    for log_start, log_trans, framelog in problems:
        impl.forward_log(log_start, log_trans, framelog)
        impl.backward_log(log_trans, framelog)


def best_of(impl, problems, repeats):
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        run_once(impl, problems)
        times.append(time.perf_counter() - started)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--sequences", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{args.sequences} sequences per cell, best of {args.repeats} runs\n")
    header = f"{'states':>6} {'frames':>6} {'python':>10}"
    if _core is not None:
        header += f" {'compiled':>10} {'speedup':>8}"
    print(header)
    for n_states in (3, 5, 10):
        for n_frames in (20, 100, 400):
            problems = [problem(rng, n_states, n_frames)
                        for _ in range(args.sequences)]
            t_ref = best_of(_ref, problems, args.repeats)
            line = f"{n_states:>6} {n_frames:>6} {t_ref:>9.4f}s"
            if _core is not None:
                t_core = best_of(_core, problems, args.repeats)
                line += f" {t_core:>9.4f}s {t_ref / t_core:>7.1f}x"
            print(line)
    if _core is None:
        print("\ncompiled kernels not built; run "
              "`python setup.py build_ext --inplace` first")
    else:
        # agreement spot check on the last cell
        log_start, log_trans, framelog = problems[0]
        _, ll_ref = _ref.forward_log(log_start, log_trans, framelog)
        _, ll_core = _core.forward_log(log_start, log_trans, framelog)
        print(f"\nagreement check: |loglik diff| = {abs(ll_ref - ll_core):.2e}")


if __name__ == "__main__":
    main()
