"""Campaign configuration: TOML parsing with strict key checking.

A campaign file has three tables.  [mechanism] picks one of the built-in
branching mechanisms with its parameters, [sim] fills SimConfig, and [run]
holds the command, check selection, initial conditions and output paths.
Unknown keys anywhere are an error, and every output embeds the hash of the
raw config bytes so results are traceable to the exact file."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import tomli

from .mechanism import (
    Mechanism,
    feller_mechanism,
    neveu_mechanism,
    slow_log_mechanism,
    stable_mechanism,
)
from .paths import SimConfig

__all__ = ["CampaignSpec", "RunSpec", "load_config", "mechanism_from_dict", "config_hash"]

_COMMANDS = ("inspect", "tables", "simulate", "verify")
_SIMULATORS = ("lcb", "conditioned", "cb-conditioned", "levy", "gou", "dual-u", "dual-v", "v-down")
_CHECKS = (
    "laplace",
    "siegmund",
    "biduality",
    "supermartingale",
    "infimum",
    "progeny",
    "lifetime",
    "dichotomy",
    "conditioning",
    "two-constructions",
    "entrance",
)

_MECH_KEYS = {
    "stable": {"a", "alpha", "gamma", "c", "x0"},
    "neveu": {"c", "x0"},
    "feller": {"sigma", "gamma", "c", "x0"},
    "slow-log": {"alpha", "c", "sigma", "gamma", "x0"},
}
_SIM_KEYS = {
    "dt", "eps_jump", "t_max", "n_paths", "seed", "small_jump_mode",
    "diffusion_scheme", "explosion_cap", "extinction_floor",
}
_RUN_KEYS = {
    "command", "checks", "out", "seed", "simulator", "z0", "x", "y", "t",
    "t_list", "theta_list", "a_list", "z_list", "dump_paths", "workers",
}


@dataclass(frozen=True)
class RunSpec:
    """The [run] table: what to do and with which campaign parameters."""

    command: str
    checks: tuple = _CHECKS
    out: str = "out"
    simulator: str = "lcb"
    z0: float = 1.0
    x: float = 1.0
    y: float = 1.0
    t: float = 0.5
    t_list: tuple = (0.5, 1.0)
    theta_list: tuple = (1.0, 0.3, 0.1, 0.03)
    a_list: tuple = ()
    z_list: tuple = (0.1, 0.01, 0.001)
    dump_paths: int = 0
    workers: int | None = None


@dataclass(frozen=True)
class CampaignSpec:
    mechanism: Mechanism
    sim: SimConfig
    run: RunSpec
    config_hash: str
    raw: dict = field(repr=False, default_factory=dict)


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ValueError(f"unknown keys in [{where}]: {sorted(unknown)}")


def mechanism_from_dict(d: dict) -> Mechanism:
    if "kind" not in d:
        raise ValueError("[mechanism] needs a 'kind' key")
    kind = d["kind"]
    if kind not in _MECH_KEYS:
        raise ValueError(f"unknown mechanism kind {kind!r}; pick one of {sorted(_MECH_KEYS)}")
    params = {k: v for k, v in d.items() if k != "kind"}
    _reject_unknown(params, _MECH_KEYS[kind], "mechanism")
    factory = {
        "stable": stable_mechanism,
        "neveu": neveu_mechanism,
        "feller": feller_mechanism,
        "slow-log": slow_log_mechanism,
    }[kind]
    return factory(**params)


def config_hash(raw_bytes: bytes) -> str:
    return hashlib.sha256(raw_bytes).hexdigest()[:16]


def load_config(path) -> CampaignSpec:
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    data = tomli.loads(raw_bytes.decode("utf-8"))
    _reject_unknown(data, {"mechanism", "sim", "run"}, "top level")
    if "mechanism" not in data or "run" not in data:
        raise ValueError("config needs [mechanism] and [run] tables")

    mech = mechanism_from_dict(data["mechanism"])

    sim_table = dict(data.get("sim", {}))
    _reject_unknown(sim_table, _SIM_KEYS, "sim")
    sim = SimConfig(**sim_table)

    run_table = dict(data["run"])
    _reject_unknown(run_table, _RUN_KEYS, "run")
    if "command" not in run_table:
        raise ValueError("[run] needs a 'command' key")
    if run_table["command"] not in _COMMANDS:
        raise ValueError(f"unknown command {run_table['command']!r}; pick one of {_COMMANDS}")
    if "simulator" in run_table and run_table["simulator"] not in _SIMULATORS:
        raise ValueError(
            f"unknown simulator {run_table['simulator']!r}; pick one of {_SIMULATORS}"
        )
    if "checks" in run_table:
        bad = set(run_table["checks"]) - set(_CHECKS)
        if bad:
            raise ValueError(f"unknown checks {sorted(bad)}; pick from {_CHECKS}")
        if not run_table["checks"]:
            raise ValueError("[run] checks must not be empty")
    for key in ("checks", "t_list", "theta_list", "a_list", "z_list"):
        if key in run_table:
            run_table[key] = tuple(run_table[key])
    if "seed" in run_table:
        sim = SimConfig(**{**sim_table, "seed": int(run_table.pop("seed"))})
    run = RunSpec(**run_table)
    if not run.a_list:
        levels = tuple(f * run.z0 for f in (0.4, 0.55, 0.7, 0.85, 0.95))
        run = RunSpec(**{**run.__dict__, "a_list": levels})

    return CampaignSpec(
        mechanism=mech,
        sim=sim,
        run=run,
        config_hash=config_hash(raw_bytes),
        raw=data,
    )
