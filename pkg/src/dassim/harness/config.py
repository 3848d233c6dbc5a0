"""Experiment configuration files.

Configs are TOML documents with four tables, ``[model]``, ``[observation]``,
``[filter]`` and ``[run]``, plus an optional ``[prior]``.  Matrices are
row-major nested arrays (``[[1.0, 0.0], [0.0, 1.0]]``); a bare number where a
covariance is expected means a multiple of the identity.  See README.md for
the full key list.
"""
from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..filters import FILTER_NAMES
from ..models import ModelSpec, ObservationModel, linear_model, lorenz63
from ..prob import GaussianDensity
from ..resampling import SCHEMES

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OBSERVATION_FUNCTIONS = {
    "identity": lambda x: x,
    "square": lambda x: x * x,
    "cube": lambda x: x ** 3,
}

_KNOWN = {
    "model": {"name", "dt", "Q", "A", "u", "x0", "sigma", "rho", "beta"},
    "observation": {"H", "h", "R", "interval"},
    "prior": {"mean", "cov"},
    "filter": {"name", "M", "seed", "n_substeps", "ess_threshold", "scheme", "bias_correction",
               "forecast", "init", "density", "proposal"},
    "run": {"n_steps", "seed", "output", "formats", "oracle"},
}


class _Locator:
    """Maps ``section.key`` to a 1-based line number in the source text."""

    def __init__(self, text):
        self.lines = {}
        section = None
        for i, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            m = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]$", line)
            if m:
                section = m.group(1)
                self.lines.setdefault((section, None), i)
                continue
            m = re.match(r"^([A-Za-z0-9_\"'-]+)\s*=", line)
            if m:
                self.lines.setdefault((section, m.group(1).strip("\"'")), i)

    def __call__(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    observation: ObservationModel
    prior: GaussianDensity
    x0: np.ndarray
    filter_name: str
    M: int
    n_steps: int
    seed: int
    filter_seed: Optional[int] = None
    options: dict = field(default_factory=dict)
    output: Optional[str] = None
    formats: tuple = ("csv", "json")
    oracle: bool = False
    source: dict = field(default_factory=dict, repr=False)

    def with_overrides(self, seed=None, output=None, oracle=None):
        kw = dict(self.__dict__)
        if seed is not None:
            kw["seed"] = int(seed)
        if output is not None:
            kw["output"] = str(output)
        if oracle:
            kw["oracle"] = True
        return ExperimentConfig(**kw)


DEFAULT_OPTIONS = {
    "n_substeps": 20,
    "ess_threshold": None,
    "scheme": "residual",
    "bias_correction": False,
    "forecast": "stochastic",
    "init": "matched",
    "density": "gaussian",
    "proposal": "nudged",
}


class _Reader:
    def __init__(self, data, loc):
        self.data = data
        self.loc = loc

    def fail(self, msg, section, key=None):
        raise ConfigError(msg, self.loc(section, key))

    def table(self, section, required=True):
        t = self.data.get(section)
        if t is None:
            if required:
                raise ConfigError(f"missing [{section}] section")
            return {}
        if not isinstance(t, dict):
            self.fail(f"{section} must be a table", section)
        unknown = sorted(set(t) - _KNOWN[section])
        if unknown:
            self.fail(f"unknown key {section}.{unknown[0]}", section, unknown[0])
        return t

    def get(self, section, key, kind, default=None, required=False):
        t = self.data.get(section, {})
        if key not in t:
            if required:
                self.fail(f"missing required key {section}.{key}", section)
            return default
        v = t[key]
        where = (section, key)
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(f"{section}.{key} must be an integer", *where)
            return v
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                self.fail(f"{section}.{key} must be a number", *where)
            return float(v)
        if kind is bool:
            if not isinstance(v, bool):
                self.fail(f"{section}.{key} must be true or false", *where)
            return v
        if kind is str:
            if not isinstance(v, str):
                self.fail(f"{section}.{key} must be a string", *where)
            return v
        if kind == "array":
            try:
                a = np.asarray(v, dtype=float)
            except (TypeError, ValueError):
                self.fail(f"{section}.{key} must be a number or a rectangular numeric array", *where)
            return a
        raise AssertionError(kind)

    def vector(self, section, key, n, default=None, required=False):
        a = self.get(section, key, "array", default, required)
        if a is None:
            return None
        a = np.asarray(a, float)
        if a.ndim != 1 or a.size != n:
            self.fail(f"{section}.{key} must be a vector of length {n}", section, key)
        return a

    def covariance(self, section, key, n, default=None, required=False):
        a = self.get(section, key, "array", default, required)
        if a is None:
            return None
        a = np.asarray(a, float)
        if a.ndim == 0:
            a = a * np.eye(n)
        if a.shape != (n, n):
            self.fail(f"{section}.{key} must be a scalar or a {n}x{n} matrix", section, key)
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(a).max()))):
            self.fail(f"{section}.{key} must be symmetric", section, key)
        if np.linalg.eigvalsh(a).min() < -1e-12 * max(1.0, float(np.abs(a).max())):
            self.fail(f"{section}.{key} must be positive semidefinite", section, key)
        return a

    def choice(self, section, key, options, default):
        v = self.get(section, key, str, default)
        if v not in options:
            self.fail(f"{section}.{key} must be one of {', '.join(options)}; got {v!r}", section, key)
        return v


def _model(r: _Reader):
    r.table("model")
    if "name" not in r.data["model"]:
        r.fail("missing required key model.name", "model")
    name = r.choice("model", "name", ("linear", "lorenz63"), None)
    dt = r.get("model", "dt", float, 0.01 if name == "lorenz63" else 0.1)
    if not dt > 0:
        r.fail("model.dt must be positive", "model", "dt")
    if name == "linear":
        A = r.get("model", "A", "array", required=True)
        A = np.atleast_2d(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            r.fail("model.A must be a square matrix", "model", "A")
        n = A.shape[0]
        Q = r.covariance("model", "Q", n, default=0.0)
        u = r.vector("model", "u", n)
        return linear_model(A, u, Q, dt)
    for key in ("A", "u"):
        if key in r.data["model"]:
            r.fail(f"model.{key} only applies to the linear model", "model", key)
    Q = r.covariance("model", "Q", 3, default=0.0)
    params = {k: r.get("model", k, float) for k in ("sigma", "rho", "beta") if k in r.data["model"]}
    return lorenz63(Q=Q, dt=dt, **params)


def _observation(r: _Reader, n):
    r.table("observation")
    sec = r.data["observation"]
    if ("H" in sec) == ("h" in sec):
        r.fail("give exactly one of observation.H or observation.h", "observation")
    if "H" in sec:
        H = np.atleast_2d(r.get("observation", "H", "array"))
        if H.ndim != 2 or H.shape[1] != n:
            r.fail(f"observation.H must be a K x {n} matrix", "observation", "H")
        K, h = H.shape[0], None
    else:
        hname = r.choice("observation", "h", tuple(OBSERVATION_FUNCTIONS), None)
        H, K, h = None, n, OBSERVATION_FUNCTIONS[hname]
    R = r.covariance("observation", "R", K, required=True)
    if np.linalg.eigvalsh(R).min() <= 0:
        r.fail("observation.R must be positive definite", "observation", "R")
    interval = r.get("observation", "interval", int, 1)
    if interval < 1:
        r.fail("observation.interval must be >= 1", "observation", "interval")
    return ObservationModel(R, H=H, h=h, dim_obs=K, interval=interval)


def parse_config(text: str, source_name="<config>") -> ExperimentConfig:
    """Parse and validate config text; errors carry the offending line number."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"{source_name}: {exc}", int(m.group(1)) if m else None) from None
    r = _Reader(data, _Locator(text))
    for section in data:
        if section not in _KNOWN:
            r.fail(f"unknown section [{section}]", section)

    model = _model(r)
    n = model.dim
    obs = _observation(r, n)

    x0 = r.vector("model", "x0", n, default=np.zeros(n) if model.name == "linear" else None)
    if x0 is None:
        x0 = np.array([1.0, 1.0, 1.0])

    r.table("prior", required=False)
    mean = r.vector("prior", "mean", n, default=x0)
    cov = r.covariance("prior", "cov", n, default=1.0)
    prior = GaussianDensity(mean, cov)

    r.table("filter")
    fname = r.get("filter", "name", str, required=True)
    if fname not in FILTER_NAMES:
        r.fail(f"filter.name must be one of {', '.join(FILTER_NAMES)}; got {fname!r}", "filter", "name")
    M = r.get("filter", "M", int, required=True)
    if M < 2:
        r.fail("filter.M must be at least 2", "filter", "M")
    opts = dict(DEFAULT_OPTIONS)
    opts["n_substeps"] = r.get("filter", "n_substeps", int, 20)
    if opts["n_substeps"] < 1:
        r.fail("filter.n_substeps must be >= 1", "filter", "n_substeps")
    ess = r.get("filter", "ess_threshold", float, None)
    if ess is not None and not 0 <= ess <= M:
        r.fail("filter.ess_threshold must lie in [0, M]", "filter", "ess_threshold")
    opts["ess_threshold"] = ess
    opts["scheme"] = r.choice("filter", "scheme", SCHEMES, "residual")
    opts["bias_correction"] = r.get("filter", "bias_correction", bool, False)
    opts["forecast"] = r.choice("filter", "forecast", ("stochastic", "inflation"), "stochastic")
    opts["init"] = r.choice("filter", "init", ("matched", "sample"), "matched")
    opts["density"] = r.choice("filter", "density", ("gaussian", "kde"), "gaussian")
    opts["proposal"] = r.choice("filter", "proposal", ("nudged", "optimal", "transition"), "nudged")
    if opts["init"] == "matched" and M <= n:
        r.fail(f"filter.init = \"matched\" needs M > {n}", "filter", "M")
    if fname in ("esrf", "esrf-ot", "etkbf", "enkf") and not obs.is_linear:
        r.fail(f"filter {fname!r} needs a linear observation matrix H", "observation")
    if fname == "guided" and opts["proposal"] == "optimal" and not obs.is_linear:
        r.fail("the optimal proposal needs a linear observation matrix H", "filter", "proposal")
    if fname == "guided" and np.linalg.eigvalsh(model.diffusion_cov).min() <= 0:
        r.fail("guided SMC needs a positive definite model.Q", "model", "Q")
    if fname == "meanfield" and np.count_nonzero(obs.noise_cov - np.diag(np.diag(obs.noise_cov))):
        r.fail("the mean-field filter needs a diagonal observation.R", "observation", "R")
    fseed = r.get("filter", "seed", int, None)

    r.table("run")
    n_steps = r.get("run", "n_steps", int, required=True)
    if n_steps < 0:
        r.fail("run.n_steps must be nonnegative", "run", "n_steps")
    seed = r.get("run", "seed", int, 0)
    if seed < 0:
        r.fail("run.seed must be nonnegative", "run", "seed")
    output = r.get("run", "output", str, None)
    formats = data["run"].get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        r.fail('run.formats must be a list drawn from "csv", "json"', "run", "formats")
    oracle = r.get("run", "oracle", bool, False)
    if oracle and (model.linear is None or not obs.is_linear):
        r.fail("the Kalman reference needs a linear model and a linear observation", "run", "oracle")

    return ExperimentConfig(model, obs, prior, x0, fname, M, n_steps, seed, fseed, opts, output,
                            tuple(formats), oracle, data)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))
