"""Right-hand sides of the stability bounds and their numerical checks.

Every ``rhs_*`` function assembles one bound from named ingredient norms
exactly as written (the coefficients 2, 8, ``1/delta``, ``1/delta^2`` and the
``delta/9`` scale are hard-coded). :func:`check_bound` measures the left
side on a scenario in two ways:

(a) the mean pair cost of a coupled Euler-Maruyama ensemble, which is the
    cost of one admissible coupling and hence an upper bound, reported
    with its Monte Carlo standard error;
(b) exact transport between subsampled marginals (several resamples).

A checkpoint passes when the upper estimate ``(a) + 3 SE`` does not exceed
the assembled right side.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import coefficients as coef
from .errors import (IncompleteIngredientsError, InvalidAlphaError, InvalidExponentError,
                     LpsViolationError)
from .fpe import FpeProblem, apriori_bound, solve
from .measures import lr_norm, quantile_gaps
from .simulate import (SdeScheme, coupled_cost_curve, evolve_coupled, sample_density,
                       stream_uniforms)
from .transport import CostSpec, as_cloud, pair_costs, solve_exact, wasserstein

TAGS = ("sobolev", "w11", "osgood", "mixed", "lps", "w2", "gronwall")
MC_SIGMAS = 3.0


def _need(ingredients, *keys):
    missing = [k for k in keys if k not in ingredients]
    if missing:
        raise IncompleteIngredientsError(f"missing ingredients: {', '.join(missing)}")
    return [float(ingredients[k]) for k in keys]


def rhs_thm_sobolev(ingredients, delta, constants):
    """Bound for Sobolev coefficients with ``p > 1``.

    ``init + 2 ||u2||_{Linf Lq} (||b1-b2||_{L1 Lp} / delta + ||s1-s2||^2_{L2 L2p} / delta^2)
    + C (||u1|| + ||u2||) (||grad b1||_{L1 Lp} + ||grad s1||^2_{L2 L2p})``
    """
    init, u2, bd, sd, usum, gb, gs = _need(ingredients, "init_distance", "u2_norm", "b_diff",
                                           "sigma_diff_sq", "u_sum", "grad_b1", "grad_sigma1_sq")
    c = float(constants["C"])
    return init + 2 * u2 * (bd / delta + sd / delta ** 2) + c * usum * (gb + gs)


def rhs_thm_w11(ingredients, delta, constants):
    """Bound for ``W^{1,1}`` drifts with the modulus ``phi(delta)``.

    ``init + 2 ||u2||_inf (||b1-b2||_{L1L1} / delta + ||s1-s2||^2_{L2L2} / delta^2)
    + C (1 + sum ||ui||_inf) [phi(delta) (1 + ||G(|grad b1|)||_{L1L1}) + ||grad s1||^2_{L2L2}]``
    """
    init, u2, bd, sd, usum, phi, gint, gs = _need(
        ingredients, "init_distance", "u2_norm", "b_diff", "sigma_diff_sq", "u_sum",
        "phi", "G_integral", "grad_sigma1_sq")
    c = float(constants["C"])
    return init + 2 * u2 * (bd / delta + sd / delta ** 2) + c * (1 + usum) * (phi * (1 + gint) + gs)


def rhs_thm_osgood(ingredients, delta):
    """Bound under the mixed Osgood condition; no free constant.

    ``init + 8 ||g||_{L1L1} sum ||ui||_inf + 2 ||u2||_inf (||b1-b2||_{L1L1} / delta
    + ||s1-s2||^2_{L2L2} / delta^2)``
    """
    init, g, usum, u2, bd, sd = _need(ingredients, "init_distance", "g_norm", "u_sum", "u2_norm",
                                      "b_diff", "sigma_diff_sq")
    return init + 8 * g * usum + 2 * u2 * (bd / delta + sd / delta ** 2)


def rhs_thm_mixed(ingredients, delta, constants):
    """Bound with separate exponents for diffusion and drift.

    ``init + C1 (||s1-s2||^2 / delta^2 + ||grad s1||^2) + C2 (||b1-b2|| / delta + ||grad b1||)``
    """
    init, sd, gs, bd, gb = _need(ingredients, "init_distance", "sigma_diff_sq", "grad_sigma1_sq",
                                 "b_diff", "grad_b1")
    c1, c2 = float(constants["C1"]), float(constants["C2"])
    return init + c1 * (sd / delta ** 2 + gs) + c2 * (bd / delta + gb)


def check_lps(d, p, q):
    """Raise unless ``p, q > 2`` and ``d/p + 2/q < 1``."""
    if not (p > 2 and q > 2 and d / p + 2 / q < 1):
        raise LpsViolationError(f"exponents p={p}, q={q} violate p, q > 2 and d/p + 2/q < 1 (d={d})")


def rhs_thm_lps(ingredients, delta, constants):
    """Bound for non-degenerate equations with integrable singular drifts.

    ``init(delta/9) + C1 (||b1-b2||^2 / delta^2 + ||b1||^2) + C2 (||b1-b2|| / delta + ||b1||)``
    where ``init(delta/9)`` is the initial discrepancy at scale ``delta / 9``.
    """
    init, bd, b1 = _need(ingredients, "init_distance_ninth", "b_diff", "b1_norm")
    c1, c2 = float(constants["C1"]), float(constants["C2"])
    return init + c1 * (bd ** 2 / delta ** 2 + b1 ** 2) + c2 * (bd / delta + b1)


def check_alpha(alpha, p, q):
    if not (2 < alpha < min(p, q)):
        raise InvalidAlphaError(f"alpha={alpha} must lie in (2, min(p, q)) = (2, {min(p, q)})")


def rhs_thm_w2(ingredients, alpha, constants):
    """``C_alpha [W_alpha(init) + ||u2||^{1/alpha}_{Linf L^{p/(p-alpha)}} ||b1-b2||_{Lq Lp}]``.

    ``u2_norm_root`` is the already-rooted norm ``||u2||^{1/alpha}``.
    """
    w, root, bd = _need(ingredients, "init_w_alpha", "u2_norm_root", "b_diff")
    return float(constants["C_alpha"]) * (w + root * bd)


def rhs_zero_diffusivity(c_qT, c_dp, grad_b, horizon, sigma_sq):
    """``2 C_{q,T} (C_{d,p} ||grad b||_{L1 Lp} + T ||sigma||^2_{L^{2p}})``."""
    return 2 * c_qT * (c_dp * grad_b + horizon * sigma_sq)


def rhs_gronwall(p, lipschitz, horizon, integral):
    """``exp((p L + p - 1) T) int_0^t int |b1 - b2|^p d mu2_s ds``."""
    return math.exp((p * lipschitz + p - 1) * horizon) * integral


# Scenarios ----------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Two coefficient fields, shared initial data and numerical settings.

    Parameters
    ----------
    name : str
    grid : BoxGrid
        Box used for the grid solver and for all norms.
    horizon : float
    field1, field2 : CoefficientField
    init : GridDensity
        Initial density of both solutions.
    tags : tuple of str
        Bounds to check.
    p : float
        Exponent of the Sobolev bounds.
    p1, p2 : float
        Diffusion and drift exponents of the mixed bound.
    lps : tuple, optional
        ``(p, q)`` integrability exponents for the singular-drift bounds.
    alpha : float
        Moment order of the ``W_2`` bound.
    modulus : OsgoodModulus, optional
    deltas : tuple
        Scales to check; the string ``"auto"`` means ``||b1-b2||_{L1 Lp}``.
    times : tuple
        Checkpoint times.
    particles, step, seed : int, float, int
        Ensemble size, Euler step and stream seed.
    lipschitz : float
        Drift Lipschitz constant for the smooth-case bound.
    """

    name: str
    grid: object
    horizon: float
    field1: object
    field2: object
    init: object
    tags: tuple = ("sobolev",)
    p: float = 2.0
    p1: float = 2.0
    p2: float = 2.0
    lps: tuple = None
    alpha: float = 3.0
    modulus: object = None
    deltas: tuple = (0.1,)
    times: tuple = None
    particles: int = 20000
    step: float = 1e-2
    seed: int = 0
    lipschitz: float = None
    norm_samples: int = 41

    @property
    def checkpoints(self):
        if self.times is not None:
            return tuple(self.times)
        T = self.horizon
        return (T / 4, T / 2, T)


@dataclass
class BoundReport:
    """Ingredients, constants and per-checkpoint comparison for one bound."""

    tag: str
    scenario: str
    scale: float
    ingredients: dict
    constants: dict
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r["pass"] for r in self.rows)

    def to_dict(self):
        return {"tag": self.tag, "scenario": self.scenario, "scale": self.scale,
                "ingredients": self.ingredients, "constants": self.constants,
                "rows": self.rows, "passed": self.passed}

    def to_json(self):
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)

    def csv_rows(self):
        return [(self.tag, self.scenario, self.scale, r["t"], r["lhs"], r["rhs"], r["margin"],
                 int(r["pass"])) for r in self.rows]


CSV_HEADER = "tag,scenario,scale,t,lhs,rhs,margin,pass"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_reports(reports, json_path, csv_path):
    """Serialise reports to one JSON document and one flat CSV."""
    with open(json_path, "w") as fh:
        fh.write(json.dumps(_clean([r.to_dict() for r in reports]), indent=2, sort_keys=True))
        fh.write("\n")
    with open(csv_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in reports:
            for row in r.csv_rows():
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# Ingredients -----------------------------------------------------------------------

class ScenarioData:
    """Grid solutions and coefficient samples shared by all bounds of a scenario."""

    def __init__(self, scenario):
        self.scenario = scenario
        grid = scenario.grid
        self.grid = grid
        self.cell = grid.cell_volume
        self.times = np.linspace(0.0, scenario.horizon, scenario.norm_samples)
        self.u1 = solve(FpeProblem(scenario.field1, scenario.init, 1.0, scenario.horizon), self.times)
        self.u2 = solve(FpeProblem(scenario.field2, scenario.init, 1.0, scenario.horizon), self.times)
        f1, f2 = scenario.field1, scenario.field2
        self.b_diff = np.stack([np.sqrt(np.sum((coef.sample_drift(f1, grid, t)
                                                - coef.sample_drift(f2, grid, t)) ** 2, axis=0))
                                for t in self.times])
        self.s_diff = np.stack([np.sqrt(np.sum((coef.sample_sigma(f1, grid, t)
                                                - coef.sample_sigma(f2, grid, t)) ** 2, axis=(0, 1)))
                                for t in self.times])
        self.b1 = np.stack([np.sqrt(np.sum(coef.sample_drift(f1, grid, t) ** 2, axis=0))
                            for t in self.times])
        self.grad_b1 = np.stack([coef.drift_gradient_magnitude(f1, grid, t) for t in self.times])
        self.grad_s1 = np.stack([coef.sigma_gradient_magnitude(f1, grid, t) for t in self.times])
        self._ensemble = None

    def st(self, values, r, s):
        return coef.spacetime_norm(values, self.times, self.cell, r, s)

    def u_norm(self, which, q):
        frames = (self.u1 if which == 1 else self.u2).frames
        return float(max(lr_norm(f, q) for f in frames))

    def ensemble(self):
        """Coupled ensemble from a shared initial sample (identity coupling)."""
        if self._ensemble is None:
            sc = self.scenario
            init = sample_density(sc.init, sc.particles, sc.seed)
            times = sorted(set((0.0,) + tuple(sc.checkpoints)))
            scheme = SdeScheme.uniform(sc.horizon, sc.step, times)
            self._ensemble = evolve_coupled(sc.field1, sc.field2, init, init, scheme, sc.seed)
        return self._ensemble


def _conj(p):
    return math.inf if p == 1 else p / (p - 1.0)


def ingredients_for(tag, data, delta=None):
    """Ingredient norms entering the bound ``tag``."""
    sc = data.scenario
    if tag == "sobolev":
        p = sc.p
        if not p > 1:
            raise InvalidExponentError("the Sobolev bound needs p > 1")
        q = _conj(p)
        return {"init_distance": 0.0, "u2_norm": data.u_norm(2, q),
                "u_sum": data.u_norm(1, q) + data.u_norm(2, q),
                "b_diff": data.st(data.b_diff, 1, p), "sigma_diff_sq": data.st(data.s_diff, 2, 2 * p) ** 2,
                "grad_b1": data.st(data.grad_b1, 1, p),
                "grad_sigma1_sq": data.st(data.grad_s1, 2, 2 * p) ** 2, "p": p, "q": q}
    if tag == "w11":
        cellt = data.cell * (data.times[1] - data.times[0])
        weights = np.full(data.grad_b1.shape, cellt)
        weights[0] *= 0.5
        weights[-1] *= 0.5
        G = coef.dvp_construct(data.grad_b1, weights)
        return {"init_distance": 0.0, "u2_norm": data.u_norm(2, np.inf),
                "u_sum": data.u_norm(1, np.inf) + data.u_norm(2, np.inf),
                "b_diff": data.st(data.b_diff, 1, 1), "sigma_diff_sq": data.st(data.s_diff, 2, 2) ** 2,
                "phi": coef.phi_delta(G, delta), "G_integral": G.integral, "G": G.name,
                "grad_sigma1_sq": data.st(data.grad_s1, 2, 2) ** 2}
    if tag == "osgood":
        mod = sc.modulus
        g = np.stack([mod.g(t, data.grid.points()).reshape(data.grid.shape) for t in data.times])
        return {"init_distance": 0.0, "g_norm": data.st(g, 1, 1),
                "u2_norm": data.u_norm(2, np.inf),
                "u_sum": data.u_norm(1, np.inf) + data.u_norm(2, np.inf),
                "b_diff": data.st(data.b_diff, 1, 1), "sigma_diff_sq": data.st(data.s_diff, 2, 2) ** 2,
                "modulus": mod.name}
    if tag == "mixed":
        p1, p2 = sc.p1, sc.p2
        return {"init_distance": 0.0, "sigma_diff_sq": data.st(data.s_diff, 2, 2 * p1) ** 2,
                "grad_sigma1_sq": data.st(data.grad_s1, 2, 2 * p1) ** 2,
                "b_diff": data.st(data.b_diff, 1, p2), "grad_b1": data.st(data.grad_b1, 1, p2),
                "u_sum": max(data.u_norm(1, _conj(p1)) + data.u_norm(2, _conj(p1)),
                             data.u_norm(1, _conj(p2)) + data.u_norm(2, _conj(p2))),
                "p1": p1, "p2": p2}
    if tag == "lps":
        p, q = sc.lps
        check_lps(data.grid.dim, p, q)
        return {"init_distance_ninth": 0.0, "b_diff": data.st(data.b_diff, q, p),
                "b1_norm": data.st(data.b1, q, p), "p": p, "q": q}
    if tag == "w2":
        p, q = sc.lps
        check_alpha(sc.alpha, p, q)
        r = p / (p - sc.alpha)
        return {"init_w_alpha": 0.0, "u2_norm_root": data.u_norm(2, r) ** (1.0 / sc.alpha),
                "b_diff": data.st(data.b_diff, q, p), "alpha": sc.alpha, "p": p, "q": q}
    if tag == "gronwall":
        return {}
    raise ValueError(f"unknown bound tag {tag!r}")


def _cost_spec(tag, delta, scenario):
    if tag == "osgood":
        return CostSpec("osgood", delta, modulus=scenario.modulus)
    return CostSpec("log-squared", delta)


def subsampled_ot(cloud1, cloud2, spec, atoms, resamples, rng, matched=True):
    """Largest exact transport value over random subsamples of ``atoms`` points.

    With ``matched`` the same trajectory indices are drawn from both clouds,
    so the identity pairing is admissible and each value is at most the mean
    pair cost of its subsample. Returns the maximum and the resample spread.
    """
    vals = []
    for _ in range(resamples):
        i = rng.choice(cloud1.size, atoms, replace=False)
        j = i if matched else rng.choice(cloud2.size, atoms, replace=False)
        plan = solve_exact(as_cloud(cloud1.points[i]), as_cloud(cloud2.points[j]), spec)
        vals.append(plan.cost)
    return float(max(vals)), float(np.std(vals))


def _ensemble_rows(tag, scale, data, rhs, constants_used, atoms=200, resamples=5):
    sc = data.scenario
    ens = data.ensemble()
    rng = np.random.default_rng(sc.seed + 1)
    rows = []
    if tag == "w2":
        for k, t in enumerate(ens.times):
            if t not in sc.checkpoints:
                continue
            sq = np.sum((ens.first[k] - ens.second[k]) ** 2, axis=1)
            mean, se = float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(len(sq)))
            upper = math.sqrt(mean + MC_SIGMAS * se)
            ot = wasserstein(as_cloud(ens.first[k][:2000]), as_cloud(ens.second[k][:2000]), 2.0)
            rows.append({"t": float(t), "lhs": upper, "lhs_mean": math.sqrt(mean), "lhs_se": se,
                         "lhs_ot": ot, "rhs": rhs, "margin": rhs - upper, "pass": upper <= rhs})
        return rows
    spec = _cost_spec(tag, scale, sc)
    curve = coupled_cost_curve(ens, spec)
    for k, t in enumerate(curve.times):
        if t not in sc.checkpoints:
            continue
        upper = float(curve.mean[k] + MC_SIGMAS * curve.se[k])
        a = as_cloud(ens.first[k])
        b = as_cloud(ens.second[k])
        ot, spread = subsampled_ot(a, b, spec, min(atoms, a.size), resamples, rng)
        rows.append({"t": float(t), "lhs": upper, "lhs_mean": float(curve.mean[k]),
                     "lhs_se": float(curve.se[k]), "lhs_ot": ot, "lhs_ot_spread": spread,
                     "rhs": rhs, "margin": rhs - upper, "pass": upper <= rhs})
    return rows


def gronwall_report(data, p=2.0):
    """Smooth-case check ``W_p^p(mu1_t, mu2_t) <= exp((pL+p-1)T) int_0^t int |b1-b2|^p dmu2 ds``.

    Both sides come from the grid solutions: the left by the 1D quantile
    formula, the right by cell and trapezoidal quadrature along ``mu2``.
    """
    from .measures import wasserstein_1d_densities
    sc = data.scenario
    L = sc.lipschitz
    if L is None:
        raise IncompleteIngredientsError("the smooth-case bound needs a declared Lipschitz constant")
    inner = np.array([np.sum(data.b_diff[k] ** p * f.values) * data.cell
                      for k, f in enumerate(data.u2.frames)])
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (inner[1:] + inner[:-1]) * np.diff(data.times))])
    rows = []
    for t in sc.checkpoints:
        k = int(np.argmin(np.abs(data.times - t)))
        lhs = wasserstein_1d_densities(data.u1.frames[k], data.u2.frames[k], p) ** p
        rhs = rhs_gronwall(p, L, sc.horizon, float(cumulative[k]))
        rows.append({"t": float(data.times[k]), "lhs": lhs, "rhs": rhs, "margin": rhs - lhs,
                     "relative_margin": (rhs - lhs) / rhs if rhs > 0 else 0.0, "pass": lhs <= rhs})
    return BoundReport("gronwall", sc.name, float(p), {"lipschitz": L, "p": p}, {}, rows)


def check_bound(scenario, tag, scale, constants=None, data=None):
    """Assemble the bound ``tag`` at ``scale`` and compare with the measured left side.

    Parameters
    ----------
    scenario : Scenario
    tag : str
        One of ``sobolev``, ``w11``, ``osgood``, ``mixed``, ``lps``, ``w2``, ``gronwall``.
    scale : float or "auto"
        ``delta`` for discrepancy bounds, ``alpha`` for ``w2``, ``p`` for ``gronwall``.
    constants : dict
        Frozen constants for this tag (ignored for ``osgood``).
    data : ScenarioData, optional
        Reuse grid solutions and the ensemble across calls.
    """
    data = ScenarioData(scenario) if data is None else data
    constants = dict(constants or {})
    if tag == "gronwall":
        return gronwall_report(data, scenario.p if scale in (None, "auto") else float(scale))
    if scale == "auto":
        scale = data.st(data.b_diff, 1, scenario.p)
    scale = float(scale)
    ing = ingredients_for(tag, data, scale)
    if tag == "sobolev":
        rhs = rhs_thm_sobolev(ing, scale, constants)
    elif tag == "w11":
        rhs = rhs_thm_w11(ing, scale, constants)
    elif tag == "osgood":
        _check_hypothesis(scenario, data)
        constants = {}
        rhs = rhs_thm_osgood(ing, scale)
    elif tag == "mixed":
        rhs = rhs_thm_mixed(ing, scale, constants)
    elif tag == "lps":
        rhs = rhs_thm_lps(ing, scale, constants)
    elif tag == "w2":
        rhs = rhs_thm_w2(ing, scale, constants)
    else:
        raise ValueError(f"unknown bound tag {tag!r}")
    report = BoundReport(tag, scenario.name, scale, ing, constants)
    report.rows = _ensemble_rows(tag, scale, data, rhs, constants)
    return report


def _check_hypothesis(scenario, data, pairs=4000):
    from .errors import HypothesisViolationError
    pts = data.grid.points()
    u = stream_uniforms(scenario.seed, 0, 0, 2 * pairs, stream=3)
    i = np.minimum((u[:pairs] * len(pts)).astype(int), len(pts) - 1)
    j = np.minimum((u[pairs:] * len(pts)).astype(int), len(pts) - 1)
    keep = i != j
    for t in (0.0, scenario.horizon / 2, scenario.horizon):
        rep = coef.check_osgood_hypothesis(scenario.field1, scenario.modulus, t, pts[i[keep]], pts[j[keep]])
        if not rep.passed:
            raise HypothesisViolationError(
                f"mixed Osgood condition fails on samples (max ratio {rep.max_ratio:.3g}) in {scenario.name}")


# Zero-diffusivity sweep -----------------------------------------------------------

@dataclass
class SweepReport:
    """Coupled discrepancy at scale ``sqrt(kappa)`` for a list of ``kappa``."""

    kappas: list
    times: list
    values: np.ndarray
    errors: np.ndarray
    ot_values: np.ndarray
    rhs: float
    fixed_scale: float
    fixed_values: np.ndarray
    slope: float
    ingredients: dict
    grid_values: np.ndarray = None

    @property
    def ratios(self):
        """Max over min across positive ``kappa`` at each checkpoint."""
        v = self.values[np.asarray(self.kappas) > 0]
        return v.max(axis=0) / v.min(axis=0)

    @property
    def passed(self):
        return bool(np.all(self.ratios < 3) and np.all(self.values + MC_SIGMAS * self.errors <= self.rhs))

    def to_dict(self):
        return _clean({"kappas": self.kappas, "times": self.times, "values": self.values.tolist(),
                       "errors": self.errors.tolist(), "ot_values": self.ot_values.tolist(),
                       "rhs": self.rhs, "ratios": self.ratios.tolist(), "fixed_scale": self.fixed_scale,
                       "fixed_values": self.fixed_values.tolist(), "slope": self.slope,
                       "grid_values": None if self.grid_values is None else self.grid_values.tolist(),
                       "ingredients": self.ingredients, "passed": self.passed})


def zero_diffusivity_sweep(fld, init, kappas, horizon, constants, p=2.0, times=None,
                           particles=20000, step=1e-3, seed=0, fixed_scale=0.1, atoms=200, resamples=5):
    """Compare the diffusive and the pure transport solution across ``kappa``.

    For every ``kappa`` the pair ``(Y^kappa, Y^0)`` is simulated with shared
    noise and initial points, where ``Y^kappa`` has diffusion factor
    ``sqrt(kappa) sigma`` and ``Y^0`` none; the mean of
    ``log(1 + |Y^kappa - Y^0|^2 / kappa)`` bounds the discrepancy at scale
    ``sqrt(kappa)`` from above. The kappa-free right side uses ``C_{q,T}``
    from the a priori ``L^q`` estimate and the frozen ``C_{d,p}``.
    """
    from .fpe import negative_divergence_sup
    grid = init.grid
    times = [horizon / 4, horizon / 2, horizon] if times is None else list(times)
    q = _conj(p)
    ts = np.linspace(0.0, horizon, 41)
    neg = float(np.trapezoid([negative_divergence_sup(fld, grid, t) for t in ts], ts))
    c_qT = apriori_bound(init, q, neg_div_integral=neg)
    grad_b = coef.spacetime_norm(np.stack([coef.drift_gradient_magnitude(fld, grid, t) for t in ts]),
                                 ts, grid.cell_volume, 1, p)
    sig = coef.sample_sigma(fld, grid, 0.0)
    sigma_sq = coef.grid_lr_norm(np.sqrt(np.sum(sig ** 2, axis=(0, 1))), grid.cell_volume, 2 * p) ** 2
    rhs = rhs_zero_diffusivity(c_qT, constants["C"], grad_b, horizon, sigma_sq)
    start = sample_density(init, particles, seed)
    scheme = SdeScheme.uniform(horizon, step, [0.0] + times)
    transport_only = coef.CoefficientField(fld.drift, coef.constant_diffusion(0.0, fld.dim, fld.noise_dim),
                                           fld.dim, fld.noise_dim, horizon, {}, None, "transport", fld.autonomous)
    values, errors, ot_values, fixed, grid_values, lq = [], [], [], [], [], []
    rng = np.random.default_rng(seed + 1)
    limit = FpeProblem(transport_only, init, 0.0, horizon)
    limit_sol = solve(limit, [0.0] + times) if grid.dim == 1 else None
    for kappa in kappas:
        if kappa == 0:
            # identical equations: the coupled pair never separates
            zeros = np.zeros(len(times))
            values.append(zeros)
            errors.append(zeros)
            fixed.append(zeros)
            ot_values.append(list(zeros))
            if limit_sol is not None:
                lq.append(max(lr_norm(f, q) for f in limit_sol.frames))
                grid_values.append(list(zeros))
            continue
        if limit_sol is not None:
            sol = solve(FpeProblem(fld, init, kappa, horizon), [0.0] + times)
            lq.append(max(lr_norm(f, q) for f in sol.frames))
            grid_values.append([float(np.mean(np.log1p(quantile_gaps(a, b) ** 2 / kappa)))
                                for a, b in zip(sol.frames[1:], limit_sol.frames[1:])])
        scaled = coef.CoefficientField(fld.drift, _scaled(fld.diffusion, math.sqrt(kappa)), fld.dim,
                                       fld.noise_dim, horizon, {}, None, "diffusive", fld.autonomous)
        ens = evolve_coupled(scaled, transport_only, start, start, scheme, seed)
        spec = CostSpec("log-squared", math.sqrt(kappa))
        curve = coupled_cost_curve(ens, spec)
        fixed_curve = coupled_cost_curve(ens, CostSpec("log-squared", fixed_scale))
        values.append(curve.mean[1:])
        errors.append(curve.se[1:])
        fixed.append(fixed_curve.mean[1:])
        row = []
        for k in range(1, len(ens.times)):
            a, b = as_cloud(ens.first[k]), as_cloud(ens.second[k])
            row.append(subsampled_ot(a, b, spec, min(atoms, a.size), resamples, rng)[0])
        ot_values.append(row)
    fixed = np.array(fixed)
    positive = np.asarray(kappas) > 0
    slope = (float(np.polyfit(np.log(np.asarray(kappas)[positive]), np.log(fixed[positive, -1]), 1)[0])
             if positive.sum() >= 2 else math.nan)
    ing = {"C_qT": c_qT, "neg_div_integral": neg, "grad_b": grad_b, "sigma_sq": sigma_sq,
           "C": constants["C"], "p": p, "q": q, "grid_lq_norms": lq,
           "grid_lq_within_apriori": bool(all(v <= c_qT * 1.01 for v in lq))}
    return SweepReport(list(kappas), times, np.array(values), np.array(errors), np.array(ot_values),
                       rhs, fixed_scale, fixed, slope, ing, np.array(grid_values))


def _scaled(diffusion, factor):
    def scaled(t, x):
        return factor * np.asarray(diffusion(t, x), dtype=float)
    return scaled


# Uniqueness diagnostic -------------------------------------------------------------

@dataclass
class UniquenessReport:
    ns: list
    kappas: list
    masses: np.ndarray
    envelope: np.ndarray

    @property
    def concentrated(self):
        """Off-diagonal mass vanishes at the finest scale for every ``kappa``."""
        return bool(np.all(self.masses[-1] <= 1e-9))

    @property
    def nonincreasing(self):
        return bool(np.all(np.diff(self.masses, axis=0) <= 1e-12))


def uniqueness_diagnostic(mu, nu, ns, kappas, G=None):
    """Mass that optimal plans at ``delta = 1/n`` put on ``{|x - y| > kappa}``.

    Also returns the envelope ``(1 + phi(1/n)) / log(1 + n^2 kappa^2)`` with
    ``G(s) = s log(1 + s)`` by default, for trend comparison.
    """
    mu, nu = as_cloud(mu), as_cloud(nu)
    G = coef.slog if G is None else G
    dist = np.sqrt(((mu.points[:, None, :] - nu.points[None, :, :]) ** 2).sum(axis=2))
    masses, env = [], []
    for n in ns:
        plan = solve_exact(mu, nu, CostSpec("log-squared", 1.0 / n))
        masses.append([float(plan.matrix[dist > k].sum()) for k in kappas])
        phi = coef.phi_delta(G, min(1.0, 1.0 / n))
        env.append([(1 + phi) / math.log1p(n * n * k * k) for k in kappas])
    return UniquenessReport(list(ns), list(kappas), np.array(masses), np.array(env))


def coupled_pair_costs(ensemble, spec, frame):
    """Per-trajectory costs at one frame (exposed for diagnostics)."""
    return pair_costs(spec, ensemble.first[frame], ensemble.second[frame])
