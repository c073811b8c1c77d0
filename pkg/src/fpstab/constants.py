"""Frozen numerical constants: loading, hashing and lemma-level calibration.

The manifest ``data/constants.json`` stores every constant that the bounds
leave unspecified. Lemma constants are calibrated here on seeded random
field suites; bound constants are calibrated from scenario runs in
:mod:`fpstab.experiments`.
"""

import copy
import hashlib
import json
import math
from importlib import resources

import numpy as np

from . import coefficients as coef
from .errors import ConfigError
from .measures import BoxGrid

SAFETY = 1.25
EXPONENTS = (1.5, 2.0, 4.0)
MANIFEST_SCHEMA = "fpstab.constants/1"


def manifest_path():
    return resources.files("fpstab") / "data" / "constants.json"


def load_constants(path=None):
    """Read the constants manifest (the packaged one by default)."""
    if path is None:
        text = manifest_path().read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    data = json.loads(text)
    if data.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(f"unsupported constants schema {data.get('schema')!r}")
    return data


def constants_hash(data):
    """SHA-256 of the canonical JSON form of a manifest."""
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()


def dump_constants(data, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(data, indent=2, sort_keys=True))
        fh.write("\n")


def pkey(p):
    return f"{float(p):g}"


def bound_constants(data, tag, dim, p=2.0):
    """Constants entering the bound ``tag`` for dimension ``dim``."""
    bounds = data["bounds"]
    d = str(int(dim))
    if tag == "sobolev":
        return {"C": bounds["sobolev"][d][pkey(p)]}
    if tag == "w11":
        return {"C": bounds["w11"][d]}
    if tag == "mixed":
        return dict(bounds["mixed"][d])
    if tag == "lps":
        return dict(bounds["lps"][d])
    if tag == "w2":
        return {"C_alpha": bounds["w2"][d]}
    if tag == "zero_diffusivity":
        return {"C": data["maximal"][d][pkey(p)]}
    return {}


# Random field suites -----------------------------------------------------------

def suite_grid(dim):
    if dim == 1:
        return BoxGrid([-1.0], [1.0], [400])
    return BoxGrid([-1.0, -1.0], [1.0, 1.0], [64, 64])


def random_field(grid, rng, kind):
    """One random test function on ``grid``.

    ``kind`` is ``bumps`` (sum of Gaussian bumps of random width), ``boxes``
    (sum of indicators of random boxes) or ``waves`` (random low-mode
    Fourier sum, smooth).
    """
    mesh = grid.mesh()
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    out = np.zeros(grid.shape)
    count = int(rng.integers(1, 6))
    for _ in range(count):
        centre = rng.uniform(lo, hi)
        amp = rng.uniform(0.2, 1.0)
        if kind == "bumps":
            width = 10 ** rng.uniform(-1.7, -0.5)
            r2 = sum((m - c) ** 2 for m, c in zip(mesh, centre))
            out += amp * np.exp(-r2 / (2 * width ** 2))
        elif kind == "boxes":
            half = 10 ** rng.uniform(-1.5, -0.5, grid.dim)
            inside = np.ones(grid.shape, dtype=bool)
            for m, c, h in zip(mesh, centre, half):
                inside &= np.abs(m - c) <= h
            out += amp * inside
        elif kind == "waves":
            freq = rng.uniform(0.5, 4.0, grid.dim)
            phase = rng.uniform(0, 2 * math.pi)
            out += amp * np.sin(sum(f * m for f, m in zip(freq, mesh)) + phase)
        else:
            raise ValueError(f"unknown field kind {kind!r}")
    return out


def field_suite(dim, count, seed):
    """``count`` random fields cycling through the three kinds."""
    rng = np.random.default_rng(seed)
    grid = suite_grid(dim)
    kinds = ("bumps", "boxes", "waves")
    return grid, [random_field(grid, rng, kinds[k % 3]) for k in range(count)]


def maximal_ratios(dim, p, count, seed):
    """``||Mf||_p / ||f||_p`` over a random suite."""
    grid, fields = field_suite(dim, count, seed)
    radii = coef.radius_ladder(grid)
    out = []
    for f in fields:
        mf = coef.maximal_function(f, grid, radii)
        out.append(coef.grid_lr_norm(mf, grid.cell_volume, p) / coef.grid_lr_norm(f, grid.cell_volume, p))
    return np.array(out)


def smooth_fields(grid):
    """Three fixed smooth test functions for the pointwise difference check."""
    mesh = grid.mesh()
    r2 = sum(m ** 2 for m in mesh)
    return {"gaussian": np.exp(-4 * r2),
            "wave": np.sin(3 * mesh[0]) * (np.cos(2 * mesh[-1]) if grid.dim == 2 else 1.0),
            "ramp": np.tanh(5 * sum(mesh))}


def sobolev_suite_ratios(dim, pairs, seed):
    """Largest pointwise difference ratio per smooth field and random suite field."""
    rng = np.random.default_rng(seed)
    grid, fields = field_suite(dim, 30, seed)
    tests = [v for k, v in sorted(smooth_fields(grid).items())]
    tests += [coef.mollify(f, grid, 0.1) for f in fields]
    radii = coef.radius_ladder(grid)
    return np.array([coef.sobolev_ratios(f, grid, coef.random_pairs(grid, pairs, rng), radii).max()
                     for f in tests])


def jabin_ratios(dim, pairs, seed):
    """Kernel integral over ``|x - y|`` for random pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(pairs):
        x, y = rng.normal(size=dim), rng.normal(size=dim)
        out.append(coef.jabin_kernel_integral(x, y) / np.linalg.norm(x - y))
    return np.array(out)


def calibrate_lemmas(seed, fields=100, pairs=1000):
    """Lemma constants with a safety factor over the worst sampled ratio."""
    out = {"maximal": {}, "sobolev_pointwise": {}, "kernel": {}, "calibration": {}}
    for dim in (1, 2):
        d = str(dim)
        out["maximal"][d] = {}
        for p in EXPONENTS:
            worst = float(maximal_ratios(dim, p, fields, seed).max())
            out["maximal"][d][pkey(p)] = SAFETY * worst
            out["calibration"][f"maximal_d{dim}_p{pkey(p)}_worst"] = worst
        worst = float(sobolev_suite_ratios(dim, pairs, seed).max())
        out["sobolev_pointwise"][d] = SAFETY * worst
        out["calibration"][f"sobolev_pointwise_d{dim}_worst"] = worst
        worst = float(jabin_ratios(dim, 50, seed).max())
        out["kernel"][d] = worst * (1 + 1e-6)
        out["calibration"][f"kernel_d{dim}_worst"] = worst
    return out


def structural_bounds(lemmas, horizon=1.0):
    """Bound constants implied by the lemma constants alone.

    Sobolev and mixed: ``2 C_d C_{d,p}``. ``W^{1,1}``: ``2 C_d C'_d max(1, T)``.
    """
    out = {"sobolev": {}, "w11": {}, "mixed": {}}
    for d in ("1", "2"):
        cd = lemmas["sobolev_pointwise"][d]
        out["sobolev"][d] = {k: 2 * cd * v for k, v in lemmas["maximal"][d].items()}
        out["w11"][d] = 2 * cd * lemmas["kernel"][d] * max(1.0, horizon)
        c = 2 * cd * lemmas["maximal"][d][pkey(2.0)]
        out["mixed"][d] = {"C1": c, "C2": c}
    return out


def new_manifest(seed, lemmas, bounds, calibration):
    data = {"schema": MANIFEST_SCHEMA, "seed": int(seed)}
    data.update(copy.deepcopy(lemmas))
    data["bounds"] = bounds
    data["calibration"].update(calibration)
    return data
