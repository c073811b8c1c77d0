"""Built-in coefficient, weight and initial-measure builders.

Every builder takes a parameter dict from a scenario config and returns a
vectorised callable. Drifts are sums of terms; each term maps ``(t, x)``
with ``x`` of shape ``(n, d)`` to ``(n, d)``.
"""

import numpy as np

from ..coefficients import CoefficientField, constant_diffusion, identity_modulus, log_modulus
from ..errors import ConfigError
from ..measures import GridDensity


def _vec(value, dim):
    arr = np.asarray(value, dtype=float)
    return np.full(dim, float(arr)) if arr.ndim == 0 else arr.reshape(dim)


def _linear(par, dim):
    a = np.asarray(par.get("a", 1.0), dtype=float)
    c = _vec(par.get("c", 0.0), dim)
    mat = a * np.eye(dim) if a.ndim == 0 else a.reshape(dim, dim)
    return lambda t, x: -x @ mat.T + c


def _rotation(par, dim):
    if dim != 2:
        raise ConfigError("rotation drift needs d = 2")
    w = float(par.get("omega", 1.0))
    return lambda t, x: w * np.stack([-x[:, 1], x[:, 0]], axis=1)


def _direction(par, dim):
    e = _vec(par.get("direction", [1.0] + [0.0] * (dim - 1)), dim)
    return e


def _smooth_step(par, dim):
    eps, width = float(par["eps"]), float(par.get("width", 0.01))
    centre = float(par.get("centre", 0.0))
    axis = int(par.get("axis", 0))
    e = _direction(par, dim)
    return lambda t, x: eps * 0.5 * (1 + np.tanh((x[:, axis] - centre) / width))[:, None] * e


def _bump(par, dim):
    eps, width = float(par["eps"]), float(par.get("width", 0.5))
    centre = _vec(par.get("centre", 0.0), dim)
    e = _direction(par, dim)
    return lambda t, x: eps * np.exp(-np.sum((x - centre) ** 2, axis=1) / (2 * width ** 2))[:, None] * e


def _decay(par, dim):
    a, s = float(par.get("a", 1.0)), float(par.get("scale", 1.0))
    return lambda t, x: -a * x * np.exp(-np.sum(x ** 2, axis=1) / (2 * s ** 2))[:, None]


def _log_profile(r):
    out = np.ones_like(r)
    small = (r > 0) & (r < 1)
    out[small] = 1.0 - np.log(r[small])
    return out


def _log_osgood(par, dim):
    """``-a x (1 + log^-|x|) exp(-|x|^2 / 2s^2)``: continuous, not Lipschitz at 0."""
    a, s = float(par.get("a", 1.0)), float(par.get("scale", 1.0))

    def drift(t, x):
        r = np.sqrt(np.sum(x ** 2, axis=1))
        return -a * x * (_log_profile(r) * np.exp(-r ** 2 / (2 * s ** 2)))[:, None]
    return drift


def _cusp(par, dim):
    """``-a sign(x) |x|^beta exp(-x^2 / 2s^2)`` componentwise (gradient in L^1 only)."""
    a, beta, s = float(par.get("a", 1.0)), float(par.get("beta", 0.5)), float(par.get("scale", 1.0))
    return lambda t, x: -a * np.sign(x) * np.abs(x) ** beta * np.exp(-x ** 2 / (2 * s ** 2))


def _sine(par, dim):
    a, w = float(par.get("a", 1.0)), float(par.get("omega", 1.0))
    ph = float(par.get("phase", 0.0))
    return lambda t, x: a * np.sin(w * x + ph)


DRIFTS = {"linear": _linear, "rotation": _rotation, "smooth-step": _smooth_step, "bump": _bump,
          "decay": _decay, "log-osgood": _log_osgood, "cusp": _cusp, "sine": _sine}


def build_drift(terms, dim):
    """Sum of named drift terms."""
    if isinstance(terms, dict):
        terms = [terms]
    parts = []
    for term in terms:
        name = term.get("name")
        if name not in DRIFTS:
            raise ConfigError(f"unknown drift {name!r}; known: {', '.join(sorted(DRIFTS))}")
        parts.append(DRIFTS[name](term, dim))

    def drift(t, x):
        out = np.zeros_like(x)
        for part in parts:
            out = out + part(t, x)
        return out
    return drift


def build_diffusion(spec, dim):
    name = spec.get("name", "constant")
    if name == "constant":
        return constant_diffusion(float(spec.get("value", 0.0)), dim)
    if name == "sine":
        s0, s1 = float(spec.get("base", 1.0)), float(spec.get("amplitude", 0.0))
        w, ph = float(spec.get("omega", 1.0)), float(spec.get("phase", 0.0))

        def diffusion(t, x):
            vals = s0 + s1 * np.sin(w * x + ph)
            return vals[:, :, None] * np.eye(dim)[None]
        return diffusion
    raise ConfigError(f"unknown diffusion {name!r}; known: constant, sine")


def build_field(spec, dim, horizon, name):
    return CoefficientField(build_drift(spec.get("drift", []), dim),
                            build_diffusion(spec.get("diffusion", {}), dim), dim, dim, horizon,
                            dict(spec.get("exponents", {})), spec.get("lipschitz"), name, True)


def build_weight(spec):
    """Osgood weight ``g(x) = c / (1 + |x|^2)^power``."""
    c, power = float(spec.get("c", 1.0)), float(spec.get("power", 0.5))
    return lambda t, x: c / (1 + np.sum(np.asarray(x).reshape(len(x), -1) ** 2, axis=1)) ** power


def build_modulus(spec):
    name = spec.get("name", "identity")
    weight = build_weight(spec.get("weight", {}))
    if name == "identity":
        return identity_modulus(weight)
    if name == "log":
        return log_modulus(weight)
    raise ConfigError(f"unknown modulus {name!r}; known: identity, log")


def build_initial(spec, grid):
    """Gaussian (mixture) density on the grid, normalised to unit mass."""
    kind = spec.get("kind", "gaussian")
    if kind != "gaussian":
        raise ConfigError(f"unknown initial measure {kind!r}; known: gaussian")
    comps = spec.get("components", [spec])

    def density(*mesh):
        out = np.zeros(mesh[0].shape)
        for c in comps:
            mean = _vec(c.get("mean", 0.0), grid.dim)
            std = float(c.get("std", 1.0))
            w = float(c.get("weight", 1.0))
            r2 = sum((m - mu) ** 2 for m, mu in zip(mesh, mean))
            out += w * np.exp(-r2 / (2 * std ** 2)) / (2 * np.pi * std ** 2) ** (grid.dim / 2)
        return out
    return GridDensity.from_function(grid, density)
