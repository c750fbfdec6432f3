"""Strict JSON experiment configuration.

One document with the sections ``model``, ``noise``, ``perturbation``, ``sim``,
``sweep``, ``stability`` and ``concentration``.  Only ``model`` and ``sim`` are
required; unknown sections or keys are rejected.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..model import CONSTANT_NAMES, ModelConstants, build_model
from ..noise import NoiseSpec, PerturbationSpec
from ..simulate import SimConfig
from ..stability import SoloParams

SECTIONS = {
    "model": {"name", "params", "constants"},
    "noise": {"family", "scale", "s_min", "s_max", "delta", "C_M", "tail_threshold_v",
              "mixture_weight", "mixture_sigmas", "calibration_samples", "calibration_seed"},
    "perturbation": {"eps_star", "mode"},
    "sim": {"a", "eps", "horizon_N", "T_end", "seed", "ode_substeps", "x0", "y0", "replicas",
            "threads"},
    "sweep": {"axes", "replicas", "T_end", "with_bounds"},
    "stability": {"epsilon_s", "delta_s", "beta_s", "gamma_exp", "b", "p", "window_T", "pairs",
                  "pair_seed", "stride", "matrix_csv", "domain_samples"},
    "concentration": {"n", "eta", "replicas", "calibration_seed", "validation_seed", "substeps"},
}
REQUIRED = ("model", "sim")
SWEEP_AXES = ("a", "eps", "eps_star", "d")


def _reject_constant(name):
    raise ConfigError(f"non-finite number {name} in config")


def _check_keys(section, body):
    if not isinstance(body, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(body) - SECTIONS[section]
    if unknown:
        raise ConfigError(f"unknown keys in section {section!r}: {sorted(unknown)}")


def validate_document(doc):
    """Check the section and key names of a parsed document."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for name in REQUIRED:
        if name not in doc:
            raise ConfigError(f"config section {name!r} is required")
    for name, body in doc.items():
        _check_keys(name, body)
    if "name" not in doc["model"]:
        raise ConfigError("model.name is required")
    if "a" not in doc["sim"]:
        raise ConfigError("sim.a is required")
    return doc


def load_document(path):
    """Read and validate a config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh, parse_constant=_reject_constant)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return validate_document(doc)


@dataclass(frozen=True)
class StabilityOptions:
    params: SoloParams
    window_T: float = 1.0
    pairs: int = 40
    pair_seed: int = 0
    stride: int = 1
    matrix_csv: Optional[str] = None
    domain_samples: int = 300


@dataclass(frozen=True)
class ConcentrationOptions:
    n: Optional[int] = None
    eta: Optional[tuple] = None
    replicas: int = 2000
    calibration_seed: int = 1
    validation_seed: int = 2
    substeps: Optional[int] = None


@dataclass
class Experiment:
    """Fully resolved objects for one configuration."""

    doc: dict
    model: object
    supplied: ModelConstants
    noise: NoiseSpec
    noise_samples: int
    noise_seed: int
    perturbation: PerturbationSpec
    sim: SimConfig
    replicas: int
    threads: int
    stability: StabilityOptions
    concentration: ConcentrationOptions
    sweep: Optional[dict] = field(default=None)


def _int(value, what, lo=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{what} must be an integer, got {value!r}")
    value = int(value)
    if lo is not None and value < lo:
        raise ConfigError(f"{what} must be >= {lo}")
    return value


def _num(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{what} must be a finite number, got {value!r}")
    return float(value)


def _vector(value, dim, what):
    if value is None:
        return None
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ConfigError(f"{what} must be a number or a list")
    if len(arr) == 1:
        arr = np.full(dim, arr[0])
    if len(arr) != dim:
        raise ConfigError(f"{what} has length {len(arr)}, model dimension is {dim}")
    return tuple(float(v) for v in arr)


def _noise(body):
    body = dict(body)
    samples = _int(body.pop("calibration_samples", 100_000), "noise.calibration_samples", 10_000)
    seed = _int(body.pop("calibration_seed", 0), "noise.calibration_seed", 0)
    family = body.pop("family", "gaussian")
    scale = _num(body.pop("scale", 1.0), "noise.scale")
    kw = {"scale": scale, "s_min": body.pop("s_min", scale), "s_max": body.pop("s_max", scale)}
    if "mixture_sigmas" in body:
        kw["mixture_sigmas"] = tuple(body.pop("mixture_sigmas"))
    kw.update(body)
    if family == "none":
        return NoiseSpec.zero(), samples, seed
    try:
        return NoiseSpec(family=family, **kw), samples, seed
    except TypeError as exc:
        raise ConfigError(f"bad noise section: {exc}") from None


def build_experiment(doc):
    """Turn a validated document into model, noise, simulation and option objects."""
    doc = validate_document(copy.deepcopy(doc))
    m = doc["model"]
    params = dict(m.get("params", {}))
    model = build_model(m["name"], **params)
    consts = dict(m.get("constants", {}))
    unknown = set(consts) - set(CONSTANT_NAMES)
    if unknown:
        raise ConfigError(f"unknown model constants: {sorted(unknown)}")
    supplied = ModelConstants(**{k: _num(v, f"model.constants.{k}") for k, v in consts.items()})

    noise, n_samples, n_seed = _noise(doc.get("noise", {"family": "none"}))
    p = doc.get("perturbation", {})
    pert = PerturbationSpec(_num(p.get("eps_star", 0.0), "perturbation.eps_star"),
                            p.get("mode", "zero"))

    s = doc["sim"]
    a = _num(s["a"], "sim.a")
    if "horizon_N" in s and "T_end" in s:
        raise ConfigError("give sim.horizon_N or sim.T_end, not both")
    if "T_end" in s:
        N = max(1, int(round(_num(s["T_end"], "sim.T_end") / a)))
    else:
        N = _int(s.get("horizon_N", 100), "sim.horizon_N", 1)
    sim = SimConfig(
        a=a, eps=_num(s.get("eps", 0.0), "sim.eps"), horizon_N=N,
        seed=_int(s.get("seed", 0), "sim.seed", 0),
        ode_substeps=_int(s.get("ode_substeps", 10), "sim.ode_substeps", 1),
        x0=_vector(s.get("x0"), model.dim, "sim.x0"), y0=_vector(s.get("y0"), model.dim, "sim.y0"),
    )

    st = dict(doc.get("stability", {}))
    solo_keys = {"epsilon_s", "delta_s", "beta_s", "gamma_exp", "b", "p"}
    solo = SoloParams(**{k: st.pop(k) for k in list(st) if k in solo_keys})
    stab = StabilityOptions(
        solo,
        window_T=_num(st.get("window_T", 1.0), "stability.window_T"),
        pairs=_int(st.get("pairs", 40), "stability.pairs", 20),
        pair_seed=_int(st.get("pair_seed", 0), "stability.pair_seed", 0),
        stride=_int(st.get("stride", 1), "stability.stride", 1),
        matrix_csv=st.get("matrix_csv"),
        domain_samples=_int(st.get("domain_samples", 300), "stability.domain_samples", 2),
    )

    c = doc.get("concentration", {})
    eta = c.get("eta")
    conc = ConcentrationOptions(
        n=None if c.get("n") is None else _int(c["n"], "concentration.n", 1),
        eta=None if eta is None else tuple(_num(v, "concentration.eta") for v in eta),
        replicas=_int(c.get("replicas", 2000), "concentration.replicas", 1),
        calibration_seed=_int(c.get("calibration_seed", 1), "concentration.calibration_seed", 0),
        validation_seed=_int(c.get("validation_seed", 2), "concentration.validation_seed", 0),
        substeps=None if c.get("substeps") is None else _int(c["substeps"], "concentration.substeps", 1),
    )
    return Experiment(
        doc=doc, model=model, supplied=supplied, noise=noise, noise_samples=n_samples,
        noise_seed=n_seed, perturbation=pert, sim=sim,
        replicas=_int(s.get("replicas", 200), "sim.replicas", 1),
        threads=_int(s.get("threads", 1), "sim.threads", 1),
        stability=stab, concentration=conc, sweep=doc.get("sweep"),
    )


def apply_overrides(doc, seed=None, replicas=None, threads=None):
    """Copy of ``doc`` with command-line overrides applied."""
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["sim"]["seed"] = int(seed)
    if replicas is not None:
        doc["sim"]["replicas"] = int(replicas)
        if "sweep" in doc:
            doc["sweep"]["replicas"] = int(replicas)
    if threads is not None:
        doc["sim"]["threads"] = int(threads)
    return doc


def with_axis(doc, axis, value):
    """Copy of ``doc`` with one sweep axis set to ``value``."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    doc = copy.deepcopy(doc)
    if axis == "a":
        doc["sim"]["a"] = float(value)
    elif axis == "eps":
        doc["sim"]["eps"] = float(value)
    elif axis == "eps_star":
        p = doc.setdefault("perturbation", {})
        p["eps_star"] = float(value)
        if p.get("mode", "zero") == "zero":
            p["mode"] = "constant_direction"
    else:
        if int(value) != value:
            raise ConfigError("d axis values must be integers")
        doc["model"].setdefault("params", {})["dim"] = int(value)
        for key in ("x0", "y0"):
            v = doc["sim"].get(key)
            if v is not None and np.ndim(v) > 0 and len(v) != 1:
                raise ConfigError(f"sim.{key} must be a scalar when sweeping d")
    return doc
