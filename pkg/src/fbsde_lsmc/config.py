"""Experiment configuration: sectioned INI files, validated before any computation.

Layout::

    [model]   name = pendulum | cartpole | lq, plus model parameters
    [cost]    goal, q_diag, r, terminal_weight, wrap_angles   (not used by lq)
    [grid]    t0, T, N
    [solver]  x0, M, n_iter, seed, ridge, explore_std, degree, n_eval
    [output]  dir, dump_trajectories, dump_value

Vectors are comma separated; matrix rows are separated by ``;``. The token
``pi`` (optionally signed) is accepted wherever a number is.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import cartpole_model, lq_model, pendulum_model, wrapped_quadratic_cost
from .exceptions import ConfigError
from .policy import SolverConfig

logger = logging.getLogger(__name__)

MODELS = {
    "pendulum": dict(mass=1.0, length=0.5, damping=0.1, gravity=9.81, sigma=0.1),
    "cartpole": dict(cart_mass=1.0, pole_mass=0.1, length=0.5, gravity=9.81, sigma=1.0),
    "lq": dict(a="0", b="1", sigma="0.5", q="1", r="1", g_t="0"),
}
GRID_DEFAULTS = dict(t0=0.0, T=1.0, N=100)
SOLVER_DEFAULTS = dict(x0=None, M=1000, n_iter=1, seed=0, ridge=1e-6, explore_std=0.5, degree=2, n_eval=None)
OUTPUT_DEFAULTS = dict(dir="out", dump_trajectories=False, dump_value=False)
SECTIONS = {"model", "cost", "grid", "solver", "output"}


def _number(tok, key):
    tok = tok.strip()
    sign = -1.0 if tok.startswith("-") else 1.0
    body = tok.lstrip("+-").strip()
    if body == "pi":
        return sign * np.pi
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse number {tok!r}") from None


def parse_vector(text, key):
    return np.array([_number(t, key) for t in str(text).split(",") if t.strip()])


def parse_matrix(text, key):
    rows = [parse_vector(r, key) for r in str(text).split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{key}: ragged matrix {text!r}")
    return np.array(rows)


def _bool(text, key):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


@dataclass
class ExperimentConfig:
    model_name: str
    model_params: dict
    cost_params: dict
    grid: dict
    solver: dict
    output: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))

    def build(self):
        """Return ``(model, cost, SolverConfig)``."""
        p = self.model_params
        if self.model_name == "lq":
            a = parse_matrix(p["a"], "model.a")
            n = a.shape[0]
            model, cost = lq_model(
                a,
                parse_matrix(p["b"], "model.b").reshape(n, -1),
                parse_matrix(p["sigma"], "model.sigma").reshape(n, -1),
                parse_matrix(p["q"], "model.q"),
                parse_matrix(p["r"], "model.r"),
                parse_matrix(p["g_t"], "model.g_t"),
            )
        else:
            ctor = pendulum_model if self.model_name == "pendulum" else cartpole_model
            model = ctor(**{k: float(v) for k, v in p.items()})
            c = self.cost_params
            goal = parse_vector(c["goal"], "cost.goal")
            q_diag = parse_vector(c["q_diag"], "cost.q_diag")
            for key, vec in (("cost.goal", goal), ("cost.q_diag", q_diag)):
                if vec.shape != (model.n,):
                    raise ConfigError(f"{key} needs {model.n} entries, got {vec.shape[0]}")
            cost = wrapped_quadratic_cost(
                goal, q_diag, parse_matrix(c["r"], "cost.r"), float(c["terminal_weight"]),
                model.angle_indices if c["wrap_angles"] else (),
            )
        s = dict(self.solver)
        x0 = s.pop("x0")
        x0 = np.zeros(model.n) if x0 is None else parse_vector(x0, "solver.x0")
        if x0.shape != (model.n,):
            raise ConfigError(f"solver.x0 needs {model.n} entries, got {x0.shape[0]}")
        return model, cost, SolverConfig(x0=x0, **self.grid, **s)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["model"] = {"name": self.model_name, **{k: str(v) for k, v in self.model_params.items()}}
        if self.model_name != "lq":
            cp["cost"] = {k: str(v) for k, v in self.cost_params.items()}
        cp["grid"] = {k: repr(v) for k, v in self.grid.items()}
        cp["solver"] = {k: str(v) for k, v in self.solver.items() if v is not None}
        cp["output"] = {k: str(v) for k, v in self.output.items()}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
            lines.append("")
        return "\n".join(lines)


def _take(section, defaults, sec_name, converters):
    out = {}
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"[{sec_name}] unknown keys: {', '.join(sorted(unknown))}; "
                          f"valid: {', '.join(sorted(defaults))}")
    for key, default in defaults.items():
        if key in section:
            conv = converters.get(key, float)
            try:
                out[key] = conv(section[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{sec_name}.{key}: {exc}") from None
        else:
            out[key] = default
    return out


def parse_config(text: str, source="<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None
    extra = set(cp.sections()) - SECTIONS
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    if not cp.has_section("model") or "name" not in cp["model"]:
        raise ConfigError("model.name is required")
    model_sec = dict(cp["model"])
    name = model_sec.pop("name").strip()
    if name not in MODELS:
        raise ConfigError(f"model.name: unknown model {name!r}; valid names: {', '.join(sorted(MODELS))}")
    model_params = _take(model_sec, MODELS[name], "model", {k: str for k in ("a", "b", "sigma", "q", "r", "g_t")})

    cost_sec = dict(cp["cost"]) if cp.has_section("cost") else {}
    if name == "lq":
        if cost_sec:
            raise ConfigError("[cost] is not used by the lq model; put q, r, g_t under [model]")
        cost_params = {}
    else:
        missing = {"goal", "q_diag", "r", "terminal_weight"} - set(cost_sec)
        if missing:
            raise ConfigError(f"[cost] missing keys: {', '.join(sorted(missing))}")
        defaults = dict(goal=None, q_diag=None, r=None, terminal_weight=None, wrap_angles=False)
        cost_params = _take(cost_sec, defaults, "cost",
                            dict(goal=str, q_diag=str, r=str, wrap_angles=lambda v: _bool(v, "cost.wrap_angles")))

    grid = _take(dict(cp["grid"]) if cp.has_section("grid") else {}, GRID_DEFAULTS, "grid", dict(N=int))
    solver = _take(
        dict(cp["solver"]) if cp.has_section("solver") else {}, SOLVER_DEFAULTS, "solver",
        dict(x0=str, M=int, n_iter=int, seed=int, degree=int, n_eval=int),
    )
    output = _take(
        dict(cp["output"]) if cp.has_section("output") else {}, OUTPUT_DEFAULTS, "output",
        dict(dir=str, dump_trajectories=lambda v: _bool(v, "output.dump_trajectories"),
             dump_value=lambda v: _bool(v, "output.dump_value")),
    )
    cfg = ExperimentConfig(name, model_params, cost_params, grid, solver, output)
    cfg.build()  # full validation up front
    logger.info("resolved configuration from %s:\n%s", source, cfg.to_ini())
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=path)


def preset_names():
    return sorted(p.name[:-4] for p in resources.files(__package__).joinpath("presets").iterdir()
                  if p.name.endswith(".ini"))


def load_preset(name) -> ExperimentConfig:
    ref = resources.files(__package__).joinpath("presets", f"{name}.ini")
    if not ref.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_config(ref.read_text(encoding="utf-8"), source=f"preset:{name}")
