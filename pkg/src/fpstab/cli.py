"""Command line interface.

Exit status: 0 when every check passed, 2 when checks ran and some failed,
1 on configuration or execution errors.
"""

import argparse
import json
import sys
from pathlib import Path

from . import BACKEND, __version__
from .errors import FpstabError
from .experiments import runner
from .experiments.config import builtin_names, load_config


def _cmd_run(args):
    cfg = load_config(args.config)
    res = runner.run(cfg, args.out)
    print(json.dumps({"status": res.status, "directory": str(res.directory), "summary": res.summary},
                     indent=2, default=str))
    return res.status


def _cmd_sweep(args):
    cfg = load_config(args.config)
    values = [float(v) for v in args.values.split(",")]
    res = runner.sweep(cfg, args.param, values, args.out)
    print(f"slope {res.summary['slope']:.6g}  ({res.directory / 'sweep.csv'})")
    return res.status


def _cmd_ot(args):
    from .measures import read_cloud_csv
    from .transport import CostSpec, solve_entropic, solve_exact, write_plan_csv
    mu, nu = read_cloud_csv(args.mu), read_cloud_csv(args.nu)
    spec = CostSpec(args.cost, args.delta, args.p)
    if args.epsilon is None:
        plan = solve_exact(mu, nu, spec)
    else:
        plan = solve_entropic(mu, nu, spec, args.epsilon)
    out = Path(args.out) if args.out else runner.output_root() / "ot"
    out.mkdir(parents=True, exist_ok=True)
    write_plan_csv(out / "plan.csv", plan)
    print(json.dumps({"value": plan.cost, "gap": plan.gap, "solver": plan.solver,
                      "marginal_error": plan.marginal_error(), "plan": str(out / "plan.csv")}, indent=2))
    return 0


def _cmd_zvonkin(args):
    cfg = load_config(args.config)
    res = runner.run_zvonkin(cfg, args.out)
    print(json.dumps(res.summary, indent=2, default=str))
    return res.status


def _cmd_calibrate(args):
    out = args.out or str(runner.output_root() / "constants.json")
    data = runner.calibrate(args.seed, out, args.jobs)
    print(json.dumps({"constants": out, "bounds": data["bounds"]}, indent=2))
    return 0


def _cmd_list(args):
    for name in builtin_names():
        print(name)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fpstab", description="Stability checks for Fokker-Planck equations.")
    parser.add_argument("--version", action="version", version=f"fpstab {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the checks of a scenario config")
    p.add_argument("config", help="config path or builtin:<name>")
    p.add_argument("--out", help="output directory (default $FPSTAB_OUTPUT/<name>)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="sweep one parameter and fit a log-log rate")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=runner.SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ot", help="transport value and plan between two cloud CSVs")
    p.add_argument("mu")
    p.add_argument("nu")
    p.add_argument("--cost", default="log-squared", choices=["log-squared", "log-linear", "power"])
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--epsilon", type=float, help="entropic regularisation (exact solver if omitted)")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ot)

    p = sub.add_parser("zvonkin", help="backward system, damping selection and transform checks")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_zvonkin)

    p = sub.add_parser("calibrate-constants", help="recalibrate the constants manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="manifest path (default $FPSTAB_OUTPUT/constants.json)")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("list", help="list built-in scenarios")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FpstabError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return runner.EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
