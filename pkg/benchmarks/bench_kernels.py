"""Compare the numba and numpy backends of the RK4 forward and adjoint kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dx 100] [--json out.json]

Both backends run on the same high-contrast toy problem; the script checks
that they agree and reports the best of ``--repeat`` wall times.
"""
import argparse
import json
import time

import numpy as np

from wavesvgd.config import parse_config
from wavesvgd.experiments import build_problem


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--dx", type=float, default=100.0)
    p.add_argument("--json", default=None, help="also write the results to this file")
    args = p.parse_args(argv)

    cfg = parse_config({"grid": {"dx": args.dx}})
    problem = build_problem(cfg)
    system, base = problem.system, problem.base
    theta = problem.theta_true * 1.01
    results = {"n_state": int(system.n_state), "n_steps": int(system.config.n_steps),
               "nnz": int(system.pattern.indices.size)}

    outputs = {}
    for backend in ("numba", "numpy"):
        base.backend = backend
        # warm-up triggers compilation on the numba side
        outputs[backend] = base.value_and_grad(theta)
        fwd = best_time(lambda: system.run(theta, backend=backend), args.repeat)
        vg = best_time(lambda: base.value_and_grad(theta), args.repeat)
        results[backend] = {"forward_s": fwd, "value_and_grad_s": vg}

    (v1, g1), (v2, g2) = outputs["numba"], outputs["numpy"]
    results["max_rel_grad_diff"] = float(np.max(np.abs(g1 - g2) / np.maximum(np.abs(g2), 1e-300)))
    results["value_diff"] = float(abs(v1 - v2))
    results["speedup_forward"] = results["numpy"]["forward_s"] / results["numba"]["forward_s"]
    results["speedup_value_and_grad"] = results["numpy"]["value_and_grad_s"] / results["numba"]["value_and_grad_s"]

    print(f"state size {results['n_state']}, steps {results['n_steps']}, nnz {results['nnz']}")
    print(f"{'backend':<8}{'forward [s]':>14}{'value+grad [s]':>16}")
    for b in ("numba", "numpy"):
        print(f"{b:<8}{results[b]['forward_s']:>14.4f}{results[b]['value_and_grad_s']:>16.4f}")
    print(f"speedup forward {results['speedup_forward']:.1f}x, "
          f"value+grad {results['speedup_value_and_grad']:.1f}x")
    print(f"backend agreement: |dv| = {results['value_diff']:.2e}, "
          f"max rel grad diff = {results['max_rel_grad_diff']:.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
