"""Experiment configuration: a flat, typed key-value file with section headers.

The schema is documented in docs/config_format.md. Parsing failures raise
ConfigError with the offending section.key in the message.
"""

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import LossSpec, NoiseComponent, NoiseModel
from .errors import ConfigError
from .scale_mixtures import (
    Contaminated,
    Dirac,
    Discrete,
    InverseGamma,
    Pareto,
    ScaleMixture,
)
from .state_evolution import ProblemSpec

__all__ = ["ExperimentConfig", "parse_config", "parse_mixture", "problem_spec"]

MODES = ("solve", "sweep", "optimize", "simulate", "compare", "bayes", "rates")
GRID_AXES = ("alpha", "lambda", "delta", "eps_c", "eps_n")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "solve"
    alpha: float = 2.0
    beta_star_sq: float = 1.0
    loss_kind: str = "square"
    ridge: float = 1e-10
    delta: float = 1.0
    covariates: ScaleMixture = Dirac(1.0)
    noise: NoiseModel = NoiseModel.gaussian(1.0)
    grids: dict = field(default_factory=dict)
    opt_params: tuple = ("lambda",)
    opt_bounds: dict = field(default_factory=dict)
    opt_grid_points: int = 25
    sim_d: int = 1000
    sim_seeds: int = 20
    out: str = "results.csv"
    seed: int = 0
    workers: int = 1


def _split_top_level(text: str) -> list[str]:
    parts, depth, current = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if current:
        parts.append("".join(current))
    return [p.strip() for p in parts if p.strip()]


def parse_mixture(text: str) -> ScaleMixture:
    """Parse expressions like contaminated(0.5, dirac(1), inverse_gamma(1.1, 0.1))."""
    text = text.strip()
    m = re.fullmatch(r"([a-z_]+)\s*\((.*)\)", text, flags=re.DOTALL)
    if not m:
        raise ValueError(f"cannot parse mixture expression {text!r}")
    name, body = m.group(1), m.group(2)
    args = _split_top_level(body)
    if name == "dirac":
        return Dirac(float(args[0]))
    if name == "inverse_gamma":
        return InverseGamma(float(args[0]), float(args[1]))
    if name == "pareto":
        return Pareto(float(args[0]))
    if name == "contaminated":
        if len(args) != 3:
            raise ValueError("contaminated takes (eps, base, tail)")
        return Contaminated(float(args[0]), parse_mixture(args[1]), parse_mixture(args[2]))
    if name == "discrete":
        atoms = []
        for a in args:
            s, w = a.split(":")
            atoms.append((float(s), float(w)))
        return Discrete(tuple(atoms))
    raise ValueError(f"unknown mixture family {name!r}")


def _parse_values(text: str) -> list[float]:
    text = text.strip()
    m = re.fullmatch(r"logspace\s*\(([^)]*)\)", text)
    if m:
        lo, hi, n = _split_top_level(m.group(1))
        return [float(v) for v in np.geomspace(float(lo), float(hi), int(n))]
    return [float(v) for v in _split_top_level(text)]


def _read_sections(text: str) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = value.strip()
    return sections


def _noise_from(problem: dict[str, str]) -> NoiseModel:
    if "noise_outlier_eps" in problem:
        eps = float(problem["noise_outlier_eps"])
        theta = float(problem.get("noise_outlier_theta", 1.0))
        sig_in = float(problem.get("noise_outlier_sigma_in", 1.0))
        sig_out = float(problem.get("noise_outlier_sigma_out", 1.0))
        return NoiseModel.with_outliers(eps, theta, sig_in, sig_out)
    law = parse_mixture(problem.get("noise", "dirac(1)"))
    return NoiseModel.from_scale_law(law)


def parse_config(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Parse a config text plus `section.key=value` overrides into a typed config."""
    sections = _read_sections(text)
    for key, value in overrides or []:
        if "." not in key:
            raise ConfigError(f"override {key!r} must be section.key")
        sec, name = key.split(".", 1)
        sections.setdefault(sec, {})[name] = value
    known = {"experiment", "problem", "grids", "optimize", "simulate"}
    for sec in sections:
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]")
    exp = sections.get("experiment", {})
    problem = sections.get("problem", {})
    grids_raw = sections.get("grids", {})
    opt = sections.get("optimize", {})
    simulate = sections.get("simulate", {})

    def take(section, data, key, conv, default):
        if key not in data:
            return default
        try:
            return conv(data[key])
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from exc

    mode = take("experiment", exp, "mode", str, "solve")
    if mode not in MODES:
        raise ConfigError(f"experiment.mode: must be one of {MODES}, got {mode!r}")
    loss_kind = take("problem", problem, "loss", str, "square")
    if loss_kind not in ("square", "huber", "lad"):
        raise ConfigError(f"problem.loss: must be square|huber|lad, got {loss_kind!r}")
    grids = {}
    for key, value in grids_raw.items():
        if key not in GRID_AXES:
            raise ConfigError(f"grids.{key}: unknown axis (choose from {GRID_AXES})")
        grids[key] = take("grids", grids_raw, key, _parse_values, [])
        if not grids[key]:
            raise ConfigError(f"grids.{key}: empty grid")
    if mode == "sweep" and not grids:
        raise ConfigError("grids: sweep mode needs at least one non-empty grid axis")
    opt_params = tuple(
        p.strip() for p in take("optimize", opt, "params", lambda s: s.split(","), ["lambda"])
    )
    for p in opt_params:
        if p not in ("lambda", "delta"):
            raise ConfigError(f"optimize.params: free parameters are lambda/delta, got {p!r}")
    opt_bounds = {}
    for p in opt_params:
        key = f"{p}_bounds"
        if key in opt:
            lo_hi = take("optimize", opt, key, _parse_values, None)
            if len(lo_hi) != 2 or lo_hi[0] <= 0 or lo_hi[1] <= lo_hi[0]:
                raise ConfigError(f"optimize.{key}: need 0 < lo < hi")
            opt_bounds[p] = (lo_hi[0], lo_hi[1])
        elif mode == "optimize":
            raise ConfigError(f"optimize.{key}: bounds required for free parameter {p!r}")
    try:
        covariates = parse_mixture(problem.get("covariates", "dirac(1)"))
    except ValueError as exc:
        raise ConfigError(f"problem.covariates: {exc}") from exc
    try:
        noise = _noise_from(problem)
    except ValueError as exc:
        raise ConfigError(f"problem.noise: {exc}") from exc
    return ExperimentConfig(
        mode=mode,
        alpha=take("problem", problem, "alpha", float, 2.0),
        beta_star_sq=take("problem", problem, "beta_star_sq", float, 1.0),
        loss_kind=loss_kind,
        ridge=take("problem", problem, "lambda", float, 1e-10),
        delta=take("problem", problem, "delta", float, 1.0),
        covariates=covariates,
        noise=noise,
        grids=grids,
        opt_params=opt_params,
        opt_bounds=opt_bounds,
        opt_grid_points=take("optimize", opt, "grid_points", int, 25),
        sim_d=take("simulate", simulate, "d", int, 1000),
        sim_seeds=take("simulate", simulate, "seeds", int, 20),
        out=take("experiment", exp, "out", str, "results.csv"),
        seed=take("experiment", exp, "seed", int, 0),
        workers=take("experiment", exp, "workers", int, 1),
    )


def _with_eps(law: ScaleMixture, eps: float, context: str) -> ScaleMixture:
    if not isinstance(law, Contaminated):
        raise ConfigError(f"{context}: sweeping a contamination fraction needs a top-level contaminated(...) law")
    return replace(law, eps=eps)


def point_laws(config: ExperimentConfig, point: dict) -> tuple[ScaleMixture, NoiseModel]:
    """Covariate law and noise model at one grid point (contamination applied)."""
    covariates = config.covariates
    if "eps_c" in point:
        covariates = _with_eps(covariates, point["eps_c"], "grids.eps_c")
    noise = config.noise
    if "eps_n" in point:
        comps = noise.components
        if len(comps) != 1 or comps[0].theta != 1.0:
            raise ConfigError("grids.eps_n: noise must be a single unit-theta component")
        law = _with_eps(comps[0].scale_law, point["eps_n"], "grids.eps_n")
        noise = NoiseModel((NoiseComponent(1.0, 1.0, law),))
    return covariates, noise


def point_loss(config: ExperimentConfig, point: dict) -> LossSpec:
    ridge = point.get("lambda", config.ridge)
    if config.loss_kind == "square":
        return LossSpec.square(ridge)
    if config.loss_kind == "lad":
        return LossSpec.lad(ridge)
    return LossSpec.huber(point.get("delta", config.delta), ridge)


def problem_spec(config: ExperimentConfig, point: dict) -> ProblemSpec:
    """Instantiate the solver problem at one grid point."""
    covariates, noise = point_laws(config, point)
    return ProblemSpec.single(
        alpha=point.get("alpha", config.alpha),
        scale_law=covariates,
        noise=noise,
        loss=point_loss(config, point),
        beta_star_sq=config.beta_star_sq,
    )


def contamination_of(law_or_noise) -> float:
    """Top-level contamination fraction of a law / single-component noise, or nan."""
    law = law_or_noise
    if isinstance(law_or_noise, NoiseModel):
        comps = law_or_noise.components
        if len(comps) != 1:
            return math.nan
        law = comps[0].scale_law
    return law.eps if isinstance(law, Contaminated) else math.nan
