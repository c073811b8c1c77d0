"""Orchestration: run scenario checks, sweeps and calibration; write reports.

Every run writes into one output directory: report JSON/CSV files, density
and cloud CSVs, and ``manifest.json`` listing every file with versions,
seed and the hash of the constants manifest. A failed run keeps partial
outputs and adds a ``FAILED`` marker.
"""

import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__, constants as const
from .. import zvonkin as zv
from ..coefficients import mollify, sample_drift
from ..fpe import FpeProblem, solve
from ..measures import ParticleCloud, density_from_cloud, l1_distance, write_cloud_csv, write_density_csv
from ..simulate import (SdeScheme, coupled_cost_curve, energy_test, evolve, evolve_coupled,
                        sample_density)
from ..stability import (BoundReport, ScenarioData, _clean, check_bound, write_reports,
                         zero_diffusivity_sweep)
from ..transport import CostSpec
from .config import load_config, validate

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
OUTPUT_ENV = "FPSTAB_OUTPUT"
SUITE = ("sobolev-step", "sigma-shift", "cusp-bump", "variable-sigma", "rotation-2d")
HELDOUT = ("heldout-step", "heldout-sigma", "heldout-cusp", "heldout-2d", "heldout-lps")
OSGOOD = ("osgood-identity", "osgood-log")
CALIBRATION_MARGIN = 1.5


def output_root():
    """Root for run outputs: ``$FPSTAB_OUTPUT`` or ``./fpstab-output``."""
    return Path(os.environ.get(OUTPUT_ENV, "fpstab-output"))


@dataclass
class RunResult:
    status: int
    directory: Path
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


class _Outputs:
    """Tracks written files so the manifest references every artifact."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.dir / name

    def json(self, name, obj):
        with open(self.path(name), "w") as fh:
            fh.write(json.dumps(_clean(obj), indent=2, sort_keys=True))
            fh.write("\n")

    def csv(self, name, header, rows):
        with open(self.path(name), "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def manifest(self, status, seed, constants, extra=None, error=None):
        files = sorted(set(self.files))
        for name in files:
            if name.endswith(".csv") and (self.dir / name).with_suffix(".json").exists():
                files.append(Path(name).with_suffix(".json").name)
        doc = {"status": status, "seed": seed, "files": sorted(set(files)),
               "constants_sha256": const.constants_hash(constants) if constants else None,
               "versions": {"fpstab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                            "python": platform.python_version()},
               "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        if extra:
            doc.update(extra)
        if error:
            doc["error"] = error
            (self.dir / "FAILED").write_text(error + "\n")
        elif (self.dir / "FAILED").exists():
            (self.dir / "FAILED").unlink()
        with open(self.dir / "manifest.json", "w") as fh:
            fh.write(json.dumps(_clean(doc), indent=2, sort_keys=True))
            fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    return str(v)


def _directory(cfg, out):
    if out is not None:
        return Path(out)
    if cfg.output:
        return Path(cfg.output)
    return output_root() / cfg.name


# Checks ---------------------------------------------------------------------------

def scenario_reports(cfg, constants):
    """All bound reports requested by a config (bound tags only)."""
    sc = cfg.scenario()
    data = ScenarioData(sc)
    reports = []
    for tag in cfg.tags:
        if tag in ("superposition", "zero-diffusivity"):
            continue
        if tag == "gronwall":
            reports.append(check_bound(sc, tag, sc.p, data=data))
            continue
        scales = cfg.alphas if tag == "w2" else cfg.deltas
        c = const.bound_constants(constants, tag, cfg.dim, sc.p)
        for scale in scales:
            reports.append(check_bound(sc, tag, scale, c, data=data))
    return reports, data


def superposition_report(cfg):
    """Grid solution against a particle histogram at the horizon (L^1 distance)."""
    sc = cfg.scenario()
    grid = sc.grid
    sol = solve(FpeProblem(sc.field1, sc.init, 1.0, sc.horizon), [0.0, sc.horizon])
    start = sample_density(sc.init, sc.particles, sc.seed)
    scheme = SdeScheme.uniform(sc.horizon, sc.step, [0.0, sc.horizon])
    paths = evolve(sc.field1, start, scheme, sc.seed)
    cloud = ParticleCloud(paths[-1], None, sc.horizon)
    hist = density_from_cloud(cloud, grid)
    err = l1_distance(sol.frames[-1], hist) + hist.leakage + sol.frames[-1].leakage
    return {"l1": err, "tolerance": 0.05, "pass": err <= 0.05, "particles": sc.particles,
            "histogram_leakage": hist.leakage}, sol, cloud


def zvonkin_report(cfg, refine=True):
    """Backward system, damping selection and diffeomorphism checks."""
    zc = {"target": 0.5, "pairs": 1000, "particles": 10000, "step": 0.005, "level": 0.01}
    zc.update(cfg.zvonkin)
    grid = cfg.grid()
    fld = cfg.scenario().field1
    sel = zv.select_lambda(fld, grid, cfg.horizon, float(zc["target"]))
    sol = sel.solution
    dx = grid.spacing[0]
    out = {"lam": sel.lam, "sup_grad": sel.norm, "attempts": [list(a) for a in sel.attempts],
           "residual_l2": float(sol.residuals.max()), "dx": dx,
           "residual_ok": float(sol.residuals.max()) <= 10 * dx}
    if refine:
        half = type(grid)(grid.lower, grid.upper, [2 * c for c in grid.counts])
        fine = zv.solve_backward(fld, sel.lam, half, cfg.horizon)
        out["residual_l2_half"] = float(fine.residuals.max())
        out["residual_ratio"] = out["residual_l2"] / out["residual_l2_half"]
    rng = np.random.default_rng(cfg.seed)
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    inner = lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)
    x = rng.uniform(*inner, size=(int(zc["pairs"]), grid.dim))
    y = rng.uniform(*inner, size=(int(zc["pairs"]), grid.dim))
    psi = zv.Diffeomorphism(sol, 0.0)
    back = psi.inverse(psi.forward(x), tol=1e-12)
    out["roundtrip"] = float(np.abs(back - x).max())
    ratios = zv.inverse_lipschitz_ratios(psi, x, y)
    out["inverse_lipschitz_max"] = float(ratios.max())
    out["inverse_lipschitz_ok"] = bool(ratios.max() <= 2.0)
    test = pushforward_test(cfg, sol, int(zc["particles"]), float(zc["step"]), float(zc["level"]))
    out.update(test)
    out["pass"] = bool(out["residual_ok"] and sel.norm <= zc["target"] and out["roundtrip"] <= 1e-8
                       and out["inverse_lipschitz_ok"] and out["pushforward_pass"])
    return out, sol


def pushforward_test(cfg, sol, particles, step, level=0.01):
    """Law of ``X_T`` against ``psi_T^{-1}(Y_T)`` for the transformed SDE.

    ``X`` follows the original SDE with identity noise; ``Y`` starts at
    ``psi_0(X_0)`` and follows the transformed SDE on an independent
    noise stream. Equality in law is tested with an energy permutation test.
    """
    sc = cfg.scenario()
    from ..coefficients import CoefficientField, constant_diffusion
    original = CoefficientField(sc.field1.drift, constant_diffusion(1.0, sc.grid.dim), sc.grid.dim,
                                sc.grid.dim, sc.horizon)
    transformed = zv.transform_coefficients(sol).field
    scheme = SdeScheme.uniform(sc.horizon, step, [0.0, sc.horizon])
    x0 = sample_density(sc.init, particles, cfg.seed)
    y0 = sample_density(sc.init, particles, cfg.seed + 1)
    xs = evolve(original, x0, scheme, cfg.seed)
    ys = evolve(transformed, zv.Diffeomorphism(sol, 0.0).forward(y0), scheme, cfg.seed + 1)
    pulled = zv.Diffeomorphism(sol, sc.horizon).inverse(ys[-1])
    res = energy_test(xs[-1], pulled, permutations=199, level=level, seed=cfg.seed)
    return {"pushforward_statistic": res.statistic, "pushforward_p_value": res.p_value,
            "pushforward_pass": res.passed}


def run(cfg, out=None, constants=None):
    """Execute every check a config requests and write its outputs.

    Returns a :class:`RunResult` whose ``status`` follows the exit contract:
    0 all checks passed, 2 some check failed, 1 execution error.
    """
    constants = const.load_constants() if constants is None else constants
    outputs = _Outputs(_directory(cfg, out))
    outputs.json("config.json", cfg.raw)
    summary = {}
    try:
        passed = True
        bound_tags = [t for t in cfg.tags if t not in ("superposition", "zero-diffusivity")]
        if bound_tags:
            reports, data = scenario_reports(cfg, constants)
            write_reports(reports, outputs.path("reports.json"), outputs.path("reports.csv"))
            for k, frame in enumerate(data.u1.frames[-1:] + data.u2.frames[-1:]):
                write_density_csv(outputs.path(f"density_{k + 1}_T.csv"), frame)
            if data._ensemble is not None:
                ens = data._ensemble
                n = min(1000, ens.size)
                write_cloud_csv(outputs.path("cloud_1_T.csv"), ParticleCloud(ens.first[-1][:n], None, ens.times[-1]))
                write_cloud_csv(outputs.path("cloud_2_T.csv"), ParticleCloud(ens.second[-1][:n], None, ens.times[-1]))
            summary["bounds"] = {f"{r.tag}@{r.scale:g}": r.passed for r in reports}
            passed &= all(r.passed for r in reports)
        if "zero-diffusivity" in cfg.tags:
            sc = cfg.scenario()
            c = const.bound_constants(constants, "zero_diffusivity", cfg.dim, sc.p)
            sweep = zero_diffusivity_sweep(sc.field1, sc.init, cfg.kappas, sc.horizon, c, sc.p,
                                           sc.times and list(sc.times), sc.particles, sc.step, sc.seed,
                                           cfg.fixed_scale)
            outputs.json("zero_diffusivity.json", sweep.to_dict())
            rows = [(k, t, sweep.values[i, j], sweep.errors[i, j], sweep.ot_values[i, j], sweep.rhs)
                    for i, k in enumerate(sweep.kappas) for j, t in enumerate(sweep.times)]
            outputs.csv("zero_diffusivity.csv", ["kappa", "t", "value", "se", "ot_value", "rhs"], rows)
            summary["zero_diffusivity"] = sweep.passed
            passed &= sweep.passed
        if "superposition" in cfg.tags:
            rep, sol, cloud = superposition_report(cfg)
            outputs.json("superposition.json", rep)
            write_density_csv(outputs.path("density_grid_T.csv"), sol.frames[-1])
            n = min(1000, cloud.size)
            write_cloud_csv(outputs.path("cloud_T.csv"), ParticleCloud(cloud.points[:n], None, cloud.time))
            summary["superposition"] = rep["pass"]
            passed &= rep["pass"]
        status = EXIT_PASS if passed else EXIT_FAIL
        outputs.manifest("passed" if passed else "failed-checks", cfg.seed, constants, {"summary": summary})
        return RunResult(status, outputs.dir, outputs.files, summary)
    except Exception as exc:
        outputs.manifest("error", cfg.seed, constants, {"summary": summary}, error=f"{type(exc).__name__}: {exc}")
        raise


def _zvonkin_frames(sol, count=5):
    """Long-format ``phi`` and ``grad phi`` rows at ``count`` evenly spaced frames."""
    grid = sol.grid
    d = grid.dim
    pts = grid.points()
    header = ["t"] + [f"x{i}" for i in range(d)] + [f"phi{k}" for k in range(d)]
    header += [f"grad{k}{j}" for k in range(d) for j in range(d)]
    rows = []
    for idx in np.unique(np.linspace(0, len(sol.times) - 1, count).round().astype(int)):
        phi = sol.phi[idx].reshape(d, -1)
        grad = sol.grad[idx].reshape(d * d, -1)
        for n in range(pts.shape[0]):
            rows.append((float(sol.times[idx]),) + tuple(pts[n]) + tuple(phi[:, n]) + tuple(grad[:, n]))
    return header, rows


def run_zvonkin(cfg, out=None):
    outputs = _Outputs(_directory(cfg, out))
    try:
        rep, sol = zvonkin_report(cfg)
        outputs.json("zvonkin.json", rep)
        rows = [(t, r) for t, r in zip(sol.times, sol.residuals)]
        outputs.csv("zvonkin_residuals.csv", ["t", "residual_l2"], rows)
        outputs.csv("zvonkin_frames.csv", *_zvonkin_frames(sol))
        outputs.manifest("passed" if rep["pass"] else "failed-checks", cfg.seed, None)
        return RunResult(EXIT_PASS if rep["pass"] else EXIT_FAIL, outputs.dir, outputs.files, rep)
    except Exception as exc:
        outputs.manifest("error", cfg.seed, None, error=f"{type(exc).__name__}: {exc}")
        raise


# Sweeps --------------------------------------------------------------------------

SWEEP_PARAMS = ("kappa", "delta", "epsilon-mollifier", "grid-resolution", "particle-count")


def _fit(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        x, y = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(x[ok], y[ok], 1)
    return float(slope), float(intercept)


def _exact_gaussian(cfg):
    """Exact law at the horizon for linear drift, constant noise and one Gaussian, else None."""
    if cfg.dim != 1 or len(cfg.fields) != 1:
        return None
    spec = cfg.fields[0]
    terms = spec.get("drift", [])
    terms = [terms] if isinstance(terms, dict) else terms
    if any(t.get("name") != "linear" for t in terms) or spec.get("diffusion", {}).get("name", "constant") != "constant":
        return None
    if "components" in cfg.init:
        return None
    a = sum(float(t.get("a", 1.0)) for t in terms)
    c = sum(float(t.get("c", 0.0)) for t in terms)
    s = float(spec.get("diffusion", {}).get("value", 0.0))
    m0, v0, T = float(cfg.init.get("mean", 0.0)), float(cfg.init.get("std", 1.0)) ** 2, cfg.horizon
    if a == 0:
        return m0 + c * T, v0 + s * s * T
    e = math.exp(-a * T)
    return m0 * e + c / a * (1 - e), v0 * e * e + s * s * (1 - e * e) / (2 * a)


def _with(cfg, **changes):
    raw = json.loads(json.dumps(cfg.raw))
    raw.update(changes)
    return validate(raw)


def sweep(cfg, param, values, out=None, constants=None):
    """One row of scalars per parameter value plus a log-log rate fit."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"parameter must be one of {', '.join(SWEEP_PARAMS)}")
    constants = const.load_constants() if constants is None else constants
    outputs = _Outputs(_directory(cfg, out) / f"sweep-{param}")
    values = [float(v) for v in values]
    sc = cfg.scenario()
    rows, xs, ys = [], [], []
    if param == "kappa":
        c = const.bound_constants(constants, "zero_diffusivity", cfg.dim, sc.p)
        rep = zero_diffusivity_sweep(sc.field1, sc.init, values, sc.horizon, c, sc.p, None, sc.particles,
                                     sc.step, sc.seed, cfg.fixed_scale)
        header = ["kappa", "value_sqrt_kappa", "value_fixed_scale", "rhs"]
        for i, k in enumerate(values):
            rows.append((k, rep.values[i, -1], rep.fixed_values[i, -1], rep.rhs))
        xs, ys = values, rep.fixed_values[:, -1]
    elif param == "delta":
        tag = next(t for t in cfg.tags if t not in ("gronwall", "w2", "superposition", "zero-diffusivity"))
        data = ScenarioData(sc)
        c = const.bound_constants(constants, tag, cfg.dim, sc.p)
        header = ["delta", "lhs", "rhs", "margin"]
        for d in values:
            r = check_bound(sc, tag, d, c, data=data)
            rows.append((d, r.rows[-1]["lhs"], r.rows[-1]["rhs"], r.rows[-1]["margin"]))
        xs, ys = values, [r[1] for r in rows]
    elif param == "epsilon-mollifier":
        header = ["epsilon", "delta_n", "lhs", "rhs", "pass"]
        tag = next(t for t in cfg.tags if t in ("sobolev", "mixed", "w11"))
        c = const.bound_constants(constants, tag, cfg.dim, sc.p)
        for eps in values:
            msc = _mollified_scenario(sc, eps)
            data = ScenarioData(msc)
            delta = data.st(data.b_diff, 1, sc.p) + data.st(data.s_diff, 2, 2 * sc.p)
            r = check_bound(msc, tag, delta, c, data=data)
            rows.append((eps, delta, r.rows[-1]["lhs"], r.rows[-1]["rhs"], r.passed))
        xs, ys = values, [r[1] for r in rows]
    elif param == "grid-resolution":
        header = ["cells", "dx", "l1_error"]
        exact = _exact_gaussian(cfg)
        for n in values:
            c2 = _with(cfg, cells=[int(n)] * cfg.dim)
            s2 = c2.scenario()
            sol = solve(FpeProblem(s2.field1, s2.init, 1.0, s2.horizon), [0.0, s2.horizon])
            if exact is None:
                raise ValueError("grid-resolution sweeps need a scenario with a closed-form law")
            mean, var = exact
            grid = s2.grid
            edges = grid.edges()[0]
            from scipy.stats import norm
            cellmass = np.diff(norm.cdf(edges, mean, math.sqrt(var)))
            err = float(np.abs(sol.frames[-1].values * grid.cell_volume - cellmass).sum())
            rows.append((int(n), grid.spacing[0], err))
        xs, ys = [r[1] for r in rows], [r[2] for r in rows]
    else:
        header = ["particles", "mean", "se"]
        spec = CostSpec("log-squared", float(cfg.deltas[0]) if cfg.deltas and cfg.deltas[0] != "auto" else 0.1)
        for n in values:
            start = sample_density(sc.init, int(n), sc.seed)
            scheme = SdeScheme.uniform(sc.horizon, sc.step, [0.0, sc.horizon])
            ens = evolve_coupled(sc.field1, sc.field2, start, start, scheme, sc.seed)
            curve = coupled_cost_curve(ens, spec)
            rows.append((int(n), curve.mean[-1], curve.se[-1]))
        xs, ys = values, [r[2] for r in rows]
    slope, intercept = _fit(xs, ys)
    rows.append(("fit", slope, intercept) + ("",) * (len(header) - 3))
    outputs.csv("sweep.csv", header, rows)
    outputs.manifest("completed", cfg.seed, constants, {"param": param, "values": values,
                                                        "slope": slope, "intercept": intercept})
    return RunResult(EXIT_PASS, outputs.dir, outputs.files, {"slope": slope, "rows": rows[:-1]})


def _mollified_scenario(sc, eps):
    """Replace the second drift by its mollification at scale ``eps`` (grid interpolated)."""
    from dataclasses import replace
    from ..zvonkin import interpolate
    grid = sc.grid
    f2 = sc.field2
    smooth = np.stack([mollify(v, grid, eps) for v in sample_drift(f2, grid, 0.0)])

    def drift(t, x):
        return interpolate(grid, smooth, x)

    return replace(sc, name=f"{sc.name}-eps{eps:g}", field2=f2.with_drift(drift, f2.name + "-mollified"))


# Calibration ------------------------------------------------------------------------

def _required(reports_zero, reports_one):
    """Smallest multiplier making every checkpoint pass for ``rhs = A + C B``."""
    need = 0.0
    for r0, r1 in zip(reports_zero, reports_one):
        for a, b in zip(r0.rows, r1.rows):
            slope = b["rhs"] - a["rhs"]
            if a["lhs"] > a["rhs"]:
                need = max(need, (a["lhs"] - a["rhs"]) / slope if slope > 0 else math.inf)
    return need


def _calibrate_scenario(name):
    cfg = load_config(f"builtin:{name}")
    sc = cfg.scenario()
    data = ScenarioData(sc)
    out = {}
    for tag in cfg.tags:
        zero = {"C": 0.0, "C1": 0.0, "C2": 0.0, "C_alpha": 0.0}
        one = {"C": 1.0, "C1": 1.0, "C2": 1.0, "C_alpha": 1.0}
        scales = cfg.alphas if tag == "w2" else cfg.deltas
        r0 = [check_bound(sc, tag, s, zero, data=data) for s in scales]
        r1 = [check_bound(sc, tag, s, one, data=data) for s in scales]
        out[tag] = {"dim": cfg.dim, "p": sc.p, "required": _required(r0, r1)}
    return name, out


def calibrate(seed, out=None, jobs=1, fields=100, pairs=1000):
    """Calibrate lemma constants on seeded suites and bound constants on the held-out family.

    Bound constants are ``max(structural, 1.5 x required)``, where the
    structural value follows from the lemma constants (Sobolev, W^{1,1},
    mixed) or is 1 when no such value exists (LPS and W_2 bounds).
    """
    lemmas = const.calibrate_lemmas(seed, fields, pairs)
    structural = const.structural_bounds(lemmas)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            found = dict(pool.map(_calibrate_scenario, HELDOUT))
    else:
        found = dict(map(_calibrate_scenario, HELDOUT))
    bounds = json.loads(json.dumps(structural))
    bounds["lps"] = {d: {"C1": 1.0, "C2": 1.0} for d in ("1", "2")}
    bounds["w2"] = {d: 1.0 for d in ("1", "2")}
    record = {}
    for name in HELDOUT:
        for tag, info in found[name].items():
            d, req = str(info["dim"]), info["required"]
            record[f"{name}/{tag}"] = req
            need = CALIBRATION_MARGIN * req
            if tag == "sobolev":
                k = const.pkey(info["p"])
                bounds["sobolev"][d][k] = max(bounds["sobolev"][d][k], need)
            elif tag == "w11":
                bounds["w11"][d] = max(bounds["w11"][d], need)
            elif tag in ("mixed", "lps"):
                for key in ("C1", "C2"):
                    bounds[tag][d][key] = max(bounds[tag][d][key], need)
            elif tag == "w2":
                bounds["w2"][d] = max(bounds["w2"][d], need)
    data = const.new_manifest(seed, lemmas, bounds, {"required": record,
                                                     "heldout": list(HELDOUT),
                                                     "margin": CALIBRATION_MARGIN,
                                                     "lemma_safety": const.SAFETY})
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        const.dump_constants(data, out)
    return data


def suite_reports(names=SUITE, constants=None):
    """Bound reports of the regression suite with frozen constants."""
    constants = const.load_constants() if constants is None else constants
    reports = []
    for name in names:
        reps, _ = scenario_reports(load_config(f"builtin:{name}"), constants)
        reports.extend(reps)
    return reports


__all__ = ["BoundReport", "RunResult", "calibrate", "run", "run_zvonkin", "suite_reports", "sweep",
           "superposition_report", "zvonkin_report", "output_root"]
