"""Experiment configuration: INI-style ``key = value`` files with [section] headers.

Every key is checked against a schema; unknown sections or keys, missing
required ones and out-of-range values raise :class:`ConfigError` naming the
section and key.
"""

from __future__ import annotations

import configparser
import inspect
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import models
from .errors import ConfigError

SECTIONS = ("model", "grid", "mc", "weight", "bsde", "experiment", "output")
REQUIRED_SECTIONS = ("model", "grid", "mc", "experiment")
ESTIMATORS = ("bismut", "conditional", "finite_difference")
PAYOFFS = ("linear", "sin", "square")
DRIVERS = ("zero", "linear", "nonlinear")
WEIGHT_KINDS = ("elworthy_li", "damped", "gruschin", "hamiltonian")


def _floats(text, section, key):
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {text!r}") from None


def _vectors(text, section, key):
    """``1, 0; 0, 1`` -> ((1.0, 0.0), (0.0, 1.0))."""
    vecs = tuple(_floats(part, section, key) for part in text.split(";") if part.strip())
    if not vecs:
        raise ConfigError(f"[{section}] {key}: no vectors given")
    return vecs


class _Section:
    """Typed reads from one section that remember which keys were consumed."""

    def __init__(self, parser, name):
        self.name = name
        self.raw = dict(parser[name]) if parser.has_section(name) else {}
        self.used = set()

    def _get(self, key, default, required):
        self.used.add(key)
        if key not in self.raw:
            if required:
                raise ConfigError(f"[{self.name}] missing required key '{key}'")
            return None
        return self.raw[key].strip()

    def string(self, key, default=None, choices=None, required=False):
        val = self._get(key, default, required)
        if val is None:
            return default
        if choices and val not in choices:
            raise ConfigError(f"[{self.name}] {key}: {val!r} not one of {', '.join(choices)}")
        return val

    def number(self, key, default=None, kind=float, lo=None, hi=None, required=False,
               open_lo=False):
        val = self._get(key, default, required)
        if val is None:
            return default
        try:
            x = kind(val)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: expected {kind.__name__}, got {val!r}") from None
        if not np.isfinite(x):
            raise ConfigError(f"[{self.name}] {key}: must be finite")
        if lo is not None and (x < lo or (open_lo and x == lo)):
            raise ConfigError(f"[{self.name}] {key}: {x} must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and x > hi:
            raise ConfigError(f"[{self.name}] {key}: {x} must be <= {hi}")
        return x

    def boolean(self, key, default=False):
        val = self._get(key, default, False)
        if val is None:
            return default
        if val.lower() in ("1", "true", "yes", "on"):
            return True
        if val.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key}: expected a boolean, got {val!r}")

    def leftovers(self):
        extra = sorted(set(self.raw) - self.used)
        if extra:
            raise ConfigError(f"[{self.name}] unknown key(s): {', '.join(extra)}")


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str
    model_params: dict
    t0: float
    T: float
    steps: int
    paths: int
    seed: int
    inner_paths: int
    outer_paths: int
    fd_eps: float
    weight_kind: str
    weight_c: float | None
    gram_rule: str
    derivative_rule: str
    damped_rule: str
    basis_degree: int
    picard_tol: float
    fit_paths: int
    payoff: str
    payoff_vector: tuple
    driver: str
    driver_alpha: float
    name: str
    estimators: tuple
    probes: tuple
    directions: tuple
    s: float
    csv: str | None
    timings: bool
    source: str = ""


def _model_params(sec: _Section, kind: str) -> dict:
    sig = inspect.signature(models.CATALOG[kind])
    params = {}
    for key, p in sig.parameters.items():
        if key not in sec.raw:
            continue
        if isinstance(p.default, int) and not isinstance(p.default, bool):
            params[key] = sec.number(key, kind=int, lo=1)
        else:
            params[key] = sec.number(key)
    sec.leftovers()
    return params


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are case-sensitive (T vs t0)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join('[' + s + ']' for s in unknown)}")
    for s in REQUIRED_SECTIONS:
        if not parser.has_section(s):
            raise ConfigError(f"missing required section [{s}]")
    sec = {s: _Section(parser, s) for s in SECTIONS}

    m = sec["model"]
    kind = m.string("kind", required=True, choices=tuple(models.CATALOG))
    params = _model_params(m, kind)

    g = sec["grid"]
    t0 = g.number("t0", 0.0)
    T = g.number("T", required=True)
    if not T > t0:
        raise ConfigError(f"[grid] T: {T} must exceed t0 = {t0}")
    steps = g.number("steps", required=True, kind=int, lo=1, hi=100_000)
    g.leftovers()

    mc = sec["mc"]
    paths = mc.number("paths", required=True, kind=int, lo=2, hi=10_000_000)
    seed = mc.number("seed", 0, kind=int, lo=0, hi=2 ** 64 - 1)
    inner = mc.number("inner_paths", 10_000, kind=int, lo=1000, hi=10_000_000)
    outer = mc.number("outer_paths", 10, kind=int, lo=1, hi=100_000)
    eps = mc.number("fd_eps", 1e-3, lo=0.0, open_lo=True, hi=1.0)
    mc.leftovers()

    w = sec["weight"]
    wkind = w.string("kind", "elworthy_li", WEIGHT_KINDS)
    c = w.number("c", None, lo=0.0, open_lo=True)
    gram = w.string("gram_rule", "left", ("left", "trapezoid"))
    deriv = w.string("derivative_rule", "cell_average", ("cell_average", "point"))
    damped = w.string("damped_rule", "integrating_factor", ("integrating_factor", "left_point"))
    w.leftovers()

    b = sec["bsde"]
    degree = b.number("basis_degree", 3, kind=int, lo=1, hi=6)
    picard = b.number("picard_tol", 1e-4, lo=0.0, open_lo=True, hi=1.0)
    fit_paths = b.number("fit_paths", paths, kind=int, lo=2, hi=10_000_000)
    payoff = b.string("payoff", "linear", PAYOFFS)
    d = models.CATALOG[kind](**params).dim_d
    avec = b.raw.get("payoff_vector")
    avec = _floats(b.string("payoff_vector"), "bsde", "payoff_vector") if avec else (1.0,) * d
    if len(avec) != d:
        raise ConfigError(f"[bsde] payoff_vector: needs {d} entries for model '{kind}', got {len(avec)}")
    driver = b.string("driver", "zero", DRIVERS)
    alpha = b.number("driver_alpha", 0.5)
    b.leftovers()

    e = sec["experiment"]
    name = e.string("name", required=True)
    ests = tuple(t.strip() for t in e.string("estimators", "bismut").split(",") if t.strip())
    for t in ests:
        if t not in ESTIMATORS:
            raise ConfigError(f"[experiment] estimators: {t!r} not one of {', '.join(ESTIMATORS)}")
    if not ests:
        raise ConfigError("[experiment] estimators: empty list")
    probes = _vectors(e.string("probes", required=True), "experiment", "probes")
    dirs = _vectors(e.string("directions", required=True), "experiment", "directions")
    for key, vecs in (("probes", probes), ("directions", dirs)):
        if any(len(v) != d for v in vecs):
            raise ConfigError(f"[experiment] {key}: every vector needs {d} entries")
    s = e.number("s", t0)
    if not t0 <= s < T:
        raise ConfigError(f"[experiment] s: {s} must lie in [t0, T)")
    e.leftovers()

    o = sec["output"]
    csv = o.string("csv")
    timings = o.boolean("timings", False)
    o.leftovers()

    return ExperimentConfig(kind, params, t0, T, steps, paths, seed, inner, outer, eps, wkind, c,
                            gram, deriv, damped, degree, picard, fit_paths, payoff, avec, driver, alpha,
                            name, ests, probes, dirs, s, csv, timings, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def bundled_configs() -> dict:
    """Name -> path of the configs shipped with the package."""
    root = resources.files("fbsde") / "configs"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".ini")}
