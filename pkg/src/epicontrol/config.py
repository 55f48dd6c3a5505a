"""Run configuration: nested YAML sections with units in the key names.

Unknown keys are rejected. :func:`validate` collects every violated bound
instead of stopping at the first; ``allow_out_of_range: true`` turns the
parameter-range checks into warnings (structural checks still apply).
"""
import copy
import json
import logging
import math

import yaml

from .dataset import ParameterRanges, SimConfig
from .graph import DegreeParams
from .ibm import IbmParams, population_size
from .mpc import MpcSettings, Scenario, StoppingCriteria
from .ocp import OcpConfig

__all__ = ["DEFAULTS", "ConfigError", "load_config", "resolve", "validate", "dump_config"]

log = logging.getLogger(__name__)

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "allow_out_of_range": False,
    "population": {"alpha_contacts": 10.0, "n_max_nodes": 20000},
    "epidemic": {
        "n_ratio": 0.5,
        "beta_per_day": 0.5,
        "kappa": 1.0,
        "gamma_per_day": 1.0 / 6.0,
        "s0_fraction": 0.9995,
        "i0_fraction": 0.0005,
    },
    "simulation": {
        "horizon_days": 200.0,
        "sample_dt_days": 2.0 / 7.0,
        "replicas": 50,
        "edge_rate": "per_contact",
    },
    "dataset": {
        "n_configs": 80,
        "n_ratio_range": [0.1, 1.0],
        "beta_range_per_day": [0.075, 0.9],
        "kappa_range": [0.1, 10.0],
        "i0_range": [1e-4, 1e-3],
    },
    "training": {
        "learning_rate": 1e-3,
        "lr_decay_per_epoch": 0.9,
        "batch_size": 512,
        "epochs": 15,
        "validation_fraction": 0.15,
        "hidden_layers": [64, 128, 64, 16],
    },
    "reduced": {"dt_int_days": 0.05, "r_inf_horizon_days": 200.0},
    "quantities": {
        "n_ratios": [0.2, 0.5, 0.9],
        "kappa_min": 0.1,
        "kappa_max": 10.0,
        "kappa_points": 20,
        "beta_min_per_day": 0.01,
        "beta_max_per_day": 0.9,
        "beta_points": 20,
        "r_inf_n_ratio": 0.5,
    },
    "control": {
        "t_c_days": 1.0,
        "t_horizon_days": 200.0,
        "dt_days": 2.0 / 7.0,
        "omega_beta": 0.2,
        "omega_kappa": 0.2,
        "omega_hosp": 0.6,
        "i_hosp": 0.025,
        "i_max": 0.1,
        "epsilon": 1e-2,
        "delta": 1e-7,
        "eta": 1e-6,
        "b_min": 0.1,
        "k_max": 10.0,
        "n_g": 50,
        "tau_g": 1e-4,
    },
    "mpc": {
        "tau_rl": 1e-3,
        "tau_l2": 1.0,
        "tau_rinf": 1e-3,
        "tau_ip_days": 6.0,
        "max_outer_iterations": 50,
        "d0_fraction": 0.075,
        "fine_tune_epochs": 5,
    },
    "validation": {
        # rows of [n_ratio, beta_per_day, kappa, i0_fraction]
        "configs": [
            [0.8, 0.5, 2.0, 5e-4],
            [0.5, 0.3, 0.2, 5e-4],
            [0.15, 0.6, 1.0, 5e-4],
            [0.9, 0.8, 8.0, 2e-4],
            [0.6, 0.25, 5.0, 5e-4],
        ],
    },
    "plot": {"input": "trajectory.csv", "kind": "trajectory", "columns": ["s", "i"]},
    "paths": {
        "dataset": "dataset.csv",
        "model": "model.json",
        "batch": "batch.csv",
        "schedule": "",
    },
}

# (section, key, low, high, group); None means unbounded on that side
RANGE_BOUNDS = [
    ("epidemic", "n_ratio", 0.1, 1.0, "parameter ranges"),
    ("epidemic", "beta_per_day", 0.075, 0.9, "parameter ranges"),
    ("epidemic", "kappa", 0.1, 10.0, "parameter ranges"),
    ("epidemic", "i0_fraction", 1e-4, 1e-3, "parameter ranges"),
]

STRUCTURAL_BOUNDS = [
    ("population", "alpha_contacts", 0.0, None, "contact graph"),
    ("population", "n_max_nodes", 1, None, "contact graph"),
    ("epidemic", "n_ratio", 0.0, 1.0, "contact graph"),
    ("epidemic", "beta_per_day", 0.0, None, "rates"),
    ("epidemic", "kappa", 0.0, None, "rates"),
    ("epidemic", "gamma_per_day", 0.0, None, "rates"),
    ("epidemic", "i0_fraction", 0.0, 1.0, "initial state"),
    ("epidemic", "s0_fraction", 0.0, 1.0, "initial state"),
    ("simulation", "horizon_days", 0.0, None, "simulation"),
    ("simulation", "sample_dt_days", 0.0, None, "simulation"),
    ("simulation", "replicas", 1, None, "simulation"),
    ("dataset", "n_configs", 1, None, "dataset"),
    ("training", "learning_rate", 0.0, None, "training"),
    ("training", "batch_size", 1, None, "training"),
    ("training", "epochs", 1, None, "training"),
    ("training", "validation_fraction", 0.0, 1.0, "training"),
    ("reduced", "dt_int_days", 0.0, None, "reduced model"),
    ("control", "b_min", 0.0, 1.0, "control defaults"),
    ("control", "k_max", 1.0, None, "control defaults"),
    ("control", "i_max", 0.0, 1.0, "control defaults"),
    ("control", "i_hosp", 0.0, 1.0, "control defaults"),
    ("control", "epsilon", 0.0, None, "control defaults"),
    ("control", "eta", 0.0, None, "control defaults"),
    ("control", "dt_days", 0.0, None, "control defaults"),
    ("mpc", "tau_rl", 0.0, None, "stopping tolerances"),
    ("mpc", "tau_l2", 0.0, None, "stopping tolerances"),
    ("mpc", "tau_rinf", 0.0, None, "stopping tolerances"),
    ("mpc", "tau_ip_days", 0.0, None, "stopping tolerances"),
    ("mpc", "max_outer_iterations", 1, None, "stopping tolerances"),
    ("mpc", "d0_fraction", 0.0, 1.0, "mpc"),
]


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _merge(base, override, path, unknown):
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            unknown.append(where)
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                unknown.append(f"{where} (expected a section)")
            else:
                _merge(base[key], value, where, unknown)
        else:
            base[key] = value


def resolve(user=None):
    """Defaults overlaid with ``user``; raises :class:`ConfigError` on unknown keys or bad bounds."""
    cfg = copy.deepcopy(DEFAULTS)
    unknown = []
    _merge(cfg, user or {}, "", unknown)
    problems = [f"unknown key '{u}'" for u in unknown]
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _check(cfg, section, key, low, high, group, strict_low=True):
    value = cfg[section][key]
    name = f"{section}.{key}={value!r}"
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
        return f"{name} must be a finite number [{group}]"
    if low is not None and (value <= low if strict_low and isinstance(low, float) else value < low):
        return f"{name} below bound {low} [{group}]"
    if high is not None and value > high:
        return f"{name} above bound {high} [{group}]"
    return None


def validate(cfg):
    """Every violated bound as a readable message (empty list when valid)."""
    problems = []
    for bound in STRUCTURAL_BOUNDS:
        msg = _check(cfg, *bound)
        if msg:
            problems.append(msg)
    for bound in RANGE_BOUNDS:
        msg = _check(cfg, *bound, strict_low=False)
        if msg:
            if cfg.get("allow_out_of_range"):
                log.warning("override: %s", msg)
            else:
                problems.append(msg + " (set allow_out_of_range: true to override)")
    c = cfg["control"]
    if isinstance(c["i_hosp"], (int, float)) and isinstance(c["i_max"], (int, float)) and not c["i_hosp"] < c["i_max"]:
        problems.append(f"control.i_hosp={c['i_hosp']!r} must be below control.i_max={c['i_max']!r} [control defaults]")
    if not c["t_c_days"] < c["t_horizon_days"]:
        problems.append("control.t_c_days must precede control.t_horizon_days [control defaults]")
    for key in ("omega_beta", "omega_kappa", "omega_hosp", "delta"):
        if not (isinstance(c[key], (int, float)) and c[key] >= 0):
            problems.append(f"control.{key}={c[key]!r} must be non-negative [control defaults]")
    e = cfg["epidemic"]
    if isinstance(e["s0_fraction"], (int, float)) and isinstance(e["i0_fraction"], (int, float)):
        if e["s0_fraction"] + e["i0_fraction"] > 1 + 1e-12:
            problems.append("epidemic.s0_fraction + epidemic.i0_fraction exceeds 1 [initial state]")
    d = cfg["dataset"]
    for key in ("n_ratio_range", "beta_range_per_day", "kappa_range", "i0_range"):
        pair = d[key]
        if not (isinstance(pair, list) and len(pair) == 2 and 0 < pair[0] <= pair[1]):
            problems.append(f"dataset.{key}={pair!r} must be [low, high] with 0 < low <= high [parameter ranges]")
    if cfg["simulation"]["edge_rate"] not in ("per_contact", "raw"):
        problems.append("simulation.edge_rate must be 'per_contact' or 'raw' [simulation]")
    if not (isinstance(cfg["threads"], int) and cfg["threads"] >= 1):
        problems.append("threads must be a positive integer")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        problems.append("seed must be a non-negative integer")
    return problems


def load_config(path):
    """Read a YAML config, or the ``config`` entry of a JSON run manifest."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        data = json.loads(text)
        user = data.get("config", data)
    else:
        user = yaml.safe_load(text) or {}
    if not isinstance(user, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return resolve(user)


def dump_config(cfg, path):
    with open(path, "w", newline="\n") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


# -- typed views ------------------------------------------------------------


def degree_params(cfg):
    e = cfg["epidemic"]
    return DegreeParams(alpha=float(cfg["population"]["alpha_contacts"]), kappa=float(e["kappa"]),
                        n_nodes=population_size(e["n_ratio"], cfg["population"]["n_max_nodes"]))


def ibm_params(cfg):
    e, s = cfg["epidemic"], cfg["simulation"]
    return IbmParams(beta=float(e["beta_per_day"]), gamma=float(e["gamma_per_day"]),
                     i0_fraction=float(e["i0_fraction"]), horizon=float(s["horizon_days"]),
                     sample_dt=float(s["sample_dt_days"]), edge_rate=s["edge_rate"])


def parameter_ranges(cfg):
    d = cfg["dataset"]
    return ParameterRanges(tuple(d["n_ratio_range"]), tuple(d["beta_range_per_day"]),
                           tuple(d["kappa_range"]), tuple(d["i0_range"]))


def validation_configs(cfg):
    return [SimConfig(*map(float, row)) for row in cfg["validation"]["configs"]]


def ocp_config(cfg, s_c=None, i_c=None):
    c, e = cfg["control"], cfg["epidemic"]
    return OcpConfig(n=float(e["n_ratio"]), beta0=float(e["beta_per_day"]), kappa0=float(e["kappa"]),
                     s_c=float(e["s0_fraction"] if s_c is None else s_c),
                     i_c=float(e["i0_fraction"] if i_c is None else i_c),
                     t_c=float(c["t_c_days"]), t_horizon=float(c["t_horizon_days"]),
                     dt=float(c["dt_days"]), dt_int=float(cfg["reduced"]["dt_int_days"]),
                     gamma=float(e["gamma_per_day"]), omega_beta=float(c["omega_beta"]),
                     omega_kappa=float(c["omega_kappa"]), omega_hosp=float(c["omega_hosp"]),
                     i_hosp=float(c["i_hosp"]), i_max=float(c["i_max"]), epsilon=float(c["epsilon"]),
                     delta=float(c["delta"]), eta=float(c["eta"]), b_min=float(c["b_min"]),
                     k_max=float(c["k_max"]), n_g=int(c["n_g"]), tau_g=float(c["tau_g"]))


def scenario(cfg):
    e = cfg["epidemic"]
    return Scenario(float(e["n_ratio"]), float(e["beta_per_day"]), float(e["kappa"]),
                    float(e["s0_fraction"]), float(e["i0_fraction"]))


def stopping_criteria(cfg):
    m = cfg["mpc"]
    return StoppingCriteria(float(m["tau_rl"]), float(m["tau_l2"]), float(m["tau_rinf"]),
                            float(m["tau_ip_days"]), int(m["max_outer_iterations"]))


def mpc_settings(cfg):
    m = cfg["mpc"]
    return MpcSettings(ocp=ocp_config(cfg), replicas=int(cfg["simulation"]["replicas"]),
                       alpha=float(cfg["population"]["alpha_contacts"]),
                       n_max=int(cfg["population"]["n_max_nodes"]),
                       d0_fraction=float(m["d0_fraction"]),
                       fine_tune_epochs=int(m["fine_tune_epochs"]),
                       train_epochs=int(cfg["training"]["epochs"]), n_jobs=int(cfg["threads"]))
