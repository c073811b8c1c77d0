"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from fpstab import _fallback

try:
    from fpstab import _core
except ImportError:
    _core = None


def cases(rng):
    n = 2000
    u1 = rng.random(n)
    args1 = (u1, rng.normal(size=n + 1), 0.1 * rng.random(n), 1e-5, 0.01, False)
    nx, ny = 200, 200
    args2 = (rng.random((nx, ny)), rng.normal(size=(nx + 1, ny)), rng.normal(size=(nx, ny + 1)),
             0.1 * rng.random((nx, ny)), 0.1 * rng.random((nx, ny)), 0.01 * rng.random((nx, ny)),
             1e-5, 0.05, 0.05, False)
    radii = 0.025 * 1.3 ** np.arange(12)
    args3 = (rng.random((80, 80)), 0.05, 0.05, radii)
    return {"fpe_step_1d (n=2000)": ("fpe_step_1d", args1),
            "fpe_step_2d (200x200)": ("fpe_step_2d", args2),
            "maximal_2d (80x80, 12 radii)": ("maximal_2d", args3)}


def best_time(func, args, repeat):
    number = 1
    while timeit.timeit(lambda: func(*args), number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(lambda: func(*args), number=number, repeat=repeat)) / number


SOLVE = """
import time
from fpstab.experiments.config import load_config
from fpstab.fpe import FpeProblem, solve
sc = load_config("builtin:{name}").scenario()
start = time.perf_counter()
solve(FpeProblem(sc.field1, sc.init, 1.0, sc.horizon), [0.0, sc.horizon])
print(time.perf_counter() - start)
"""


def end_to_end(name, pure):
    env = dict(os.environ, FPSTAB_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SOLVE.format(name=name)], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.split()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="write timings to this path")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    for label, (name, fargs) in cases(rng).items():
        py = best_time(getattr(_fallback, name), fargs, args.repeat)
        row = {"kernel": label, "python_s": py}
        if _core is not None:
            comp = best_time(getattr(_core, name), fargs, args.repeat)
            ref = getattr(_fallback, name)(*fargs)
            out = getattr(_core, name)(*fargs)
            ref, out = (ref[0], out[0]) if isinstance(ref, tuple) else (ref, out)
            row.update(compiled_s=comp, speedup=py / comp, max_abs_diff=float(np.max(np.abs(ref - out))))
        rows.append(row)
    for name in ("superposition-sine", "rotation-2d"):
        row = {"kernel": f"grid solve ({name})", "python_s": end_to_end(name, True)}
        if _core is not None:
            comp = end_to_end(name, False)
            row.update(compiled_s=comp, speedup=row["python_s"] / comp)
        rows.append(row)
    print(f"{'kernel':32s} {'python':>11s} {'compiled':>11s} {'speedup':>8s} {'max diff':>9s}")
    for r in rows:
        if "compiled_s" in r:
            print(f"{r['kernel']:32s} {r['python_s'] * 1e3:9.3f}ms {r['compiled_s'] * 1e3:9.3f}ms "
                  f"{r['speedup']:7.2f}x " + (f"{r['max_abs_diff']:9.1e}" if "max_abs_diff" in r else f"{'-':>9s}"))
        else:
            print(f"{r['kernel']:32s} {r['python_s'] * 1e3:9.3f}ms {'n/a':>11s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
