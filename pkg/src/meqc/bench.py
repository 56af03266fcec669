"""Experiment configuration, sweeps and CSV emission.

Experiments are described by a single YAML document (every key optional;
an empty document reproduces the default setup).  A sweep runs every
(sweep value, policy, seed) combination through the evaluator and emits
one CSV row per combination; identical config plus seeds give a
byte-identical file.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
import yaml

from .device import CryostatConfig, QubitTech
from .marl import LearnedPolicy, TrainConfig, load_checkpoint
from .solvers import BaselinePolicy, PolicyKind, evaluate
from .workload import (
    DEFAULT_BANDWIDTH,
    DEFAULT_CHIP_ENERGY,
    DEFAULT_ERROR_THRESHOLD,
    DEFAULT_NOISE_POWER,
    DEFAULT_WEIGHT_LATENCY,
    PIN_FIELDS,
    Scenario,
    gen_scenario,
)

CSV_COLUMNS = (
    "seed",
    "policy",
    "param",
    "value",
    "mean_cost",
    "latency_cost",
    "energy_cost",
    "qpu_grant_rate",
    "mean_success_prob",
)

BASELINE_POLICIES = tuple(kind.value for kind in PolicyKind)
KNOWN_POLICIES = BASELINE_POLICIES + ("trained",)


class ConfigError(ValueError):
    """Malformed or out-of-range experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description (defaults already filled)."""

    users: int = 10
    servers: int = 10
    noise_power: float = DEFAULT_NOISE_POWER
    bandwidth: float = DEFAULT_BANDWIDTH
    chip_energy_per_cycle: float = DEFAULT_CHIP_ENERGY
    error_threshold: float = DEFAULT_ERROR_THRESHOLD
    weight_latency: float = DEFAULT_WEIGHT_LATENCY
    cryostat: CryostatConfig = CryostatConfig()
    qubit_tech: QubitTech = QubitTech()
    sweep_parameter: str | None = None
    sweep_values: tuple[float, ...] = ()
    policies: tuple[str, ...] = ("local", "random", "random_cloud", "greedy", "oracle")
    episodes: int = 10
    seeds: tuple[int, ...] = (0,)
    output: str = "results.csv"
    checkpoint: str | None = None
    workers: int = 1
    train: TrainConfig = TrainConfig()


# key -> (target dataclass field, converter); nested sections listed below.
_SCENARIO_KEYS = {
    "users": int,
    "servers": int,
    "noise_power": float,
    "bandwidth": float,
    "chip_energy_per_cycle": float,
    "error_threshold": float,
    "weight_latency": float,
}
_DEVICE_KEYS = {
    "decoherence_time": ("qubit_tech", "decoherence_time"),
    "frequency": ("qubit_tech", "frequency"),
    "tau_1qb": ("qubit_tech", "tau_1qb"),
    "tau_2qb": ("qubit_tech", "tau_2qb"),
    "tau_meas": ("qubit_tech", "tau_meas"),
    "tau_step": ("qubit_tech", "tau_step"),
    "attenuation_db": ("cryostat", "total_attenuation_db"),
    "num_stages": ("cryostat", "num_stages"),
    "qubit_temperature": ("cryostat", "t_qubit"),
    "generation_temperature": ("cryostat", "t_gen"),
    "heat_gen": ("cryostat", "heat_gen"),
    "heat_hemt": ("cryostat", "heat_hemt"),
    "heat_para": ("cryostat", "heat_para"),
    "t_hemt": ("cryostat", "t_hemt"),
    "t_para": ("cryostat", "t_para"),
}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_TOP_KEYS = {"scenario", "device", "sweep", "policies", "episodes", "seeds",
             "output", "checkpoint", "workers", "train"}


def _key_lines(text: str) -> dict[str, int]:
    """Map dotted key paths to 1-based line numbers of the YAML document."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: dict[str, int] = {}

    def walk(node, prefix):
        if not isinstance(node, yaml.MappingNode):
            return
        for key_node, value_node in node.value:
            path = f"{prefix}{key_node.value}"
            lines[path] = key_node.start_mark.line + 1
            walk(value_node, path + ".")

    walk(root, "")
    return lines


def _fail(key: str, lines: dict[str, int], message: str):
    at = f" (line {lines[key]})" if key in lines else ""
    raise ConfigError(f"{key}{at}: {message}")


def _positive(key, value, lines, kind=float):
    try:
        value = kind(value)
    except (TypeError, ValueError):
        _fail(key, lines, f"expected a {kind.__name__}, got {value!r}")
    if value <= 0:
        _fail(key, lines, f"must be > 0, got {value}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a YAML experiment document.

    Unknown keys and out-of-range values raise ``ConfigError`` with the
    offending key and, where available, its line number.  An empty
    document yields the full default configuration.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("top level of the config must be a mapping")
    lines = _key_lines(text)

    unknown = set(doc) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        _fail(key, lines, "unknown key")

    cfg = ExperimentConfig()

    scenario = doc.get("scenario") or {}
    if not isinstance(scenario, dict):
        _fail("scenario", lines, "must be a mapping")
    for key, value in scenario.items():
        path = f"scenario.{key}"
        if key not in _SCENARIO_KEYS:
            _fail(path, lines, "unknown key")
        if key == "weight_latency":
            value = float(value)
            if not 0.0 <= value <= 1.0:
                _fail(path, lines, f"must lie in [0, 1], got {value}")
        else:
            value = _positive(path, value, lines, _SCENARIO_KEYS[key])
        cfg = replace(cfg, **{key: value})

    device = doc.get("device") or {}
    if not isinstance(device, dict):
        _fail("device", lines, "must be a mapping")
    cryostat_kwargs = {}
    tech_kwargs = {}
    for key, value in device.items():
        path = f"device.{key}"
        if key not in _DEVICE_KEYS:
            _fail(path, lines, "unknown key")
        section, field_name = _DEVICE_KEYS[key]
        kind = int if key == "num_stages" else float
        value = _positive(path, value, lines, kind)
        (cryostat_kwargs if section == "cryostat" else tech_kwargs)[field_name] = value
    try:
        if cryostat_kwargs:
            cfg = replace(cfg, cryostat=replace(cfg.cryostat, **cryostat_kwargs))
        if tech_kwargs:
            cfg = replace(cfg, qubit_tech=replace(cfg.qubit_tech, **tech_kwargs))
    except ValueError as exc:
        raise ConfigError(f"device: {exc}") from exc

    sweep = doc.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict):
            _fail("sweep", lines, "must be a mapping")
        unknown = set(sweep) - {"parameter", "values"}
        if unknown:
            _fail(f"sweep.{sorted(unknown)[0]}", lines, "unknown key")
        parameter = sweep.get("parameter")
        if parameter not in PIN_FIELDS:
            _fail("sweep.parameter", lines, f"must be one of {PIN_FIELDS}")
        values = sweep.get("values")
        if not isinstance(values, list) or not values:
            _fail("sweep.values", lines, "must be a non-empty list")
        try:
            values = tuple(float(v) for v in values)
        except (TypeError, ValueError):
            _fail("sweep.values", lines, "entries must be numbers")
        cfg = replace(cfg, sweep_parameter=parameter, sweep_values=values)

    if "policies" in doc:
        policies = doc["policies"]
        if not isinstance(policies, list) or not policies:
            _fail("policies", lines, "must be a non-empty list")
        for name in policies:
            if name not in KNOWN_POLICIES:
                _fail("policies", lines, f"unknown policy {name!r}")
        cfg = replace(cfg, policies=tuple(policies))

    if "episodes" in doc:
        cfg = replace(cfg, episodes=_positive("episodes", doc["episodes"], lines, int))
    if "workers" in doc:
        cfg = replace(cfg, workers=_positive("workers", doc["workers"], lines, int))
    if "seeds" in doc:
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not seeds:
            _fail("seeds", lines, "must be a non-empty list")
        try:
            seeds = tuple(int(s) for s in seeds)
        except (TypeError, ValueError):
            _fail("seeds", lines, "entries must be integers")
        if any(s < 0 for s in seeds):
            _fail("seeds", lines, "entries must be >= 0")
        cfg = replace(cfg, seeds=seeds)
    if "output" in doc:
        cfg = replace(cfg, output=str(doc["output"]))
    if "checkpoint" in doc:
        cfg = replace(cfg, checkpoint=str(doc["checkpoint"]))

    train = doc.get("train") or {}
    if not isinstance(train, dict):
        _fail("train", lines, "must be a mapping")
    unknown = set(train) - _TRAIN_KEYS
    if unknown:
        _fail(f"train.{sorted(unknown)[0]}", lines, "unknown key")
    if train:
        try:
            cfg = replace(cfg, train=replace(cfg.train, **train))
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc

    if "trained" in cfg.policies and cfg.checkpoint is None:
        _fail("policies", lines, "policy 'trained' needs a checkpoint path")
    return cfg


def build_scenario(cfg: ExperimentConfig, seed: int, pins: dict | None = None) -> Scenario:
    """Generate the scenario described by ``cfg`` for one seed."""
    merged = {"weight_latency": cfg.weight_latency}
    if pins:
        merged.update(pins)
    return gen_scenario(
        cfg.users,
        cfg.servers,
        seed,
        pins=merged,
        noise_power=cfg.noise_power,
        bandwidth=cfg.bandwidth,
        chip_energy_per_cycle=cfg.chip_energy_per_cycle,
        error_threshold=cfg.error_threshold,
        cryostat=cfg.cryostat,
        qubit_tech=cfg.qubit_tech,
    )


def _make_policy(name: str, cfg: ExperimentConfig):
    if name == "trained":
        return LearnedPolicy(load_checkpoint(cfg.checkpoint))
    return BaselinePolicy(PolicyKind(name))


def _sweep_point(args) -> dict:
    cfg, param, value, value_idx, policy, policy_idx, seed = args
    pins = {param: value} if param is not None else None
    scenario = build_scenario(cfg, seed, pins)
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(value_idx, policy_idx))
    )
    stats = evaluate(_make_policy(policy, cfg), scenario, cfg.episodes, rng)
    return {
        "seed": seed,
        "policy": policy,
        "param": param if param is not None else "none",
        "value": float(value),
        "mean_cost": stats.mean_cost,
        "latency_cost": stats.latency_cost,
        "energy_cost": stats.energy_cost,
        "qpu_grant_rate": stats.qpu_grant_rate,
        "mean_success_prob": stats.mean_success_prob,
    }


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Evaluate every (sweep value, policy, seed) combination.

    Rows come back sorted by (value, policy, seed) regardless of worker
    scheduling, so output is deterministic.
    """
    if cfg.sweep_parameter is None:
        raise ConfigError("sweep requires a 'sweep' section in the config")
    grid = [
        (cfg, cfg.sweep_parameter, value, vi, policy, pi, seed)
        for vi, value in enumerate(cfg.sweep_values)
        for pi, policy in enumerate(cfg.policies)
        for seed in cfg.seeds
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_sweep_point, grid))
    else:
        rows = [_sweep_point(point) for point in grid]
    rows.sort(key=lambda r: (r["value"], r["policy"], r["seed"]))
    return rows


def run_eval(cfg: ExperimentConfig) -> list[dict]:
    """Evaluate every (policy, seed) combination on the unswept scenario."""
    grid = [
        (cfg, None, 0.0, 0, policy, pi, seed)
        for pi, policy in enumerate(cfg.policies)
        for seed in cfg.seeds
    ]
    rows = [_sweep_point(point) for point in grid]
    rows.sort(key=lambda r: (r["value"], r["policy"], r["seed"]))
    return rows


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def emit_csv(rows: list[dict], path) -> None:
    """Write rows with the fixed column order, LF endings, 12 significant digits.

    If writing fails midway a ``#PARTIAL`` marker line is appended (best
    effort) so the truncated file cannot pass as complete.
    """
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in rows:
                writer.writerow([_format_cell(row[col]) for col in CSV_COLUMNS])
    except OSError:
        try:
            with open(path, "a", newline="", encoding="utf-8") as fh:
                fh.write("#PARTIAL\n")
        except OSError:
            pass
        raise


def load_csv(path) -> list[dict]:
    """Read back an emitted CSV with numeric columns restored."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            parsed = dict(row)
            parsed["seed"] = int(row["seed"])
            for col in CSV_COLUMNS[3:]:
                parsed[col] = float(row[col])
            rows.append(parsed)
    return rows
