"""Versioned JSON scenario configs: parsing, validation and scenario assembly."""

import json
import re
from dataclasses import dataclass, field
from importlib import resources

from ..errors import ConfigError
from ..measures import BoxGrid
from ..stability import Scenario, TAGS, check_lps
from . import library

SCHEMA = "fpstab.scenario/1"
EXTRA_TAGS = ("superposition", "zero-diffusivity")
KNOWN_KEYS = {"schema", "name", "dim", "box", "cells", "horizon", "fields", "init", "tags", "deltas",
              "alphas", "kappas", "times", "exponents", "modulus", "simulation", "seed", "output",
              "zvonkin", "description", "fixed_scale"}


@dataclass
class ScenarioConfig:
    """Validated scenario config; ``raw`` keeps the parsed document."""

    name: str
    dim: int
    lower: list
    upper: list
    cells: list
    horizon: float
    fields: list
    init: dict
    tags: list
    deltas: list
    alphas: list
    kappas: list
    times: list
    exponents: dict
    modulus: dict
    simulation: dict
    seed: int
    output: str = None
    zvonkin: dict = field(default_factory=dict)
    fixed_scale: float = 0.1
    raw: dict = field(default_factory=dict)

    def grid(self):
        return BoxGrid(self.lower, self.upper, self.cells)

    def scenario(self):
        """Assemble the :class:`~fpstab.stability.Scenario` this config describes."""
        grid = self.grid()
        f1 = library.build_field(self.fields[0], self.dim, self.horizon, self.name + "/1")
        f2 = library.build_field(self.fields[-1], self.dim, self.horizon, self.name + "/2")
        ex = self.exponents
        lps = tuple(ex["lps"]) if "lps" in ex else None
        return Scenario(
            name=self.name, grid=grid, horizon=self.horizon, field1=f1, field2=f2,
            init=library.build_initial(self.init, grid), tags=tuple(self.tags),
            p=float(ex.get("p", 2.0)), p1=float(ex.get("p1", 2.0)), p2=float(ex.get("p2", 2.0)),
            lps=lps, alpha=float(self.alphas[0]) if self.alphas else 3.0,
            modulus=library.build_modulus(self.modulus) if self.modulus else None,
            deltas=tuple(self.deltas), times=tuple(self.times) if self.times else None,
            particles=int(self.simulation.get("particles", 20000)),
            step=float(self.simulation.get("step", 1e-2)), seed=self.seed,
            lipschitz=self.fields[0].get("lipschitz"))


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(text, key, message, source):
    line = _line_of(text, key)
    where = f"{source}:{line}" if line else source
    raise ConfigError(f"{where}: {message}")


def parse_config(text, source="<config>"):
    """Parse and validate a scenario config document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return validate(raw, text, source)


def load_config(path):
    """Read a config file; ``builtin:<name>`` selects a packaged scenario."""
    path = str(path)
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        res = resources.files("fpstab") / "data" / "scenarios" / f"{name}.json"
        if not res.is_file():
            raise ConfigError(f"no built-in scenario named {name!r}; known: {', '.join(builtin_names())}")
        return parse_config(res.read_text(), path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, path)


def builtin_names():
    root = resources.files("fpstab") / "data" / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def validate(raw, text=None, source="<config>"):
    """Check a parsed document and return a :class:`ScenarioConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: the config must be a JSON object")
    if raw.get("schema") != SCHEMA:
        _fail(text, "schema", f"schema must be {SCHEMA!r}", source)
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        _fail(text, unknown[0], f"unknown key {unknown[0]!r}", source)
    for key in ("name", "dim", "box", "horizon", "fields", "init"):
        if key not in raw:
            raise ConfigError(f"{source}: missing required key {key!r}")
    dim = raw["dim"]
    if dim not in (1, 2):
        _fail(text, "dim", "dim must be 1 or 2", source)
    box = raw["box"]
    lower, upper = list(box.get("lower", [])), list(box.get("upper", []))
    if len(lower) != dim or len(upper) != dim or any(u <= l for l, u in zip(lower, upper)):
        _fail(text, "box", "box needs lower < upper with one entry per dimension", source)
    cells = raw.get("cells")
    if cells is None or len(cells) != dim or any(int(c) < 2 for c in cells):
        _fail(text, "cells", "cells needs one count >= 2 per dimension", source)
    horizon = float(raw["horizon"])
    if not horizon > 0:
        _fail(text, "horizon", "horizon must be positive", source)
    fields = raw["fields"]
    if not isinstance(fields, list) or not 1 <= len(fields) <= 2:
        _fail(text, "fields", "fields must list one or two coefficient specs", source)
    tags = list(raw.get("tags", []))
    for tag in tags:
        if tag not in TAGS + EXTRA_TAGS:
            _fail(text, "tags", f"unknown tag {tag!r}", source)
    ex = dict(raw.get("exponents", {}))
    for key in ("p", "p1", "p2"):
        if key in ex and not float(ex[key]) > 1:
            _fail(text, key, f"exponent {key}={ex[key]} violates {key} > 1", source)
    if any(t in ("lps", "w2") for t in tags):
        if "lps" not in ex:
            _fail(text, "exponents", "lps and w2 tags need exponents.lps = [p, q]", source)
        try:
            check_lps(dim, *map(float, ex["lps"]))
        except Exception as exc:
            _fail(text, "lps", str(exc), source)
    if "osgood" in tags and not raw.get("modulus"):
        _fail(text, "tags", "the osgood tag needs a modulus", source)
    deltas = raw.get("deltas", [0.1])
    for d in deltas:
        if d != "auto" and not float(d) > 0:
            _fail(text, "deltas", "every delta must be positive or 'auto'", source)
    kappas = list(raw.get("kappas", []))
    if any(float(k) < 0 for k in kappas):
        _fail(text, "kappas", "kappa must be nonnegative", source)
    times = list(raw.get("times", []))
    if any(not 0 < float(t) <= horizon for t in times):
        _fail(text, "times", "checkpoint times must lie in (0, horizon]", source)
    step = float(raw.get("simulation", {}).get("step", 1e-2))
    frames = times or [horizon / 4, horizon / 2, horizon]
    if not step > 0 or any(abs(round(t / step) * step - t) > 1e-9 for t in [horizon] + frames):
        _fail(text, "step" if "step" in raw.get("simulation", {}) else "horizon",
              f"horizon and checkpoint times must be multiples of the step {step:g}", source)
    try:
        library.build_field(fields[0], dim, horizon, "check")
        library.build_field(fields[-1], dim, horizon, "check")
        if raw.get("modulus"):
            library.build_modulus(raw["modulus"])
    except ConfigError as exc:
        _fail(text, "fields", str(exc), source)
    except (KeyError, TypeError, ValueError) as exc:
        _fail(text, "fields", f"bad coefficient parameters ({exc})", source)
    return ScenarioConfig(
        name=str(raw["name"]), dim=dim, lower=lower, upper=upper, cells=[int(c) for c in cells],
        horizon=horizon, fields=fields, init=raw["init"], tags=tags, deltas=list(deltas),
        alphas=list(raw.get("alphas", [])), kappas=kappas, times=[float(t) for t in times],
        exponents=ex, modulus=raw.get("modulus", {}), simulation=dict(raw.get("simulation", {})),
        seed=int(raw.get("seed", 0)), output=raw.get("output"), zvonkin=dict(raw.get("zvonkin", {})),
        fixed_scale=float(raw.get("fixed_scale", 0.1)), raw=raw)
