"""Seeded workload and scenario generation.

Ray-tracing render jobs are the reference workload: a job over ``2**pb``
scene primitives costs ``3 * 2**pb`` CPU cycles per byte classically and
compiles to a fixed-width quantum search circuit.  Scenario generation
draws every field from its documented range using a splittable,
counter-based RNG scheme: each field of each entity has its own stream
derived from ``(seed, entity kind, entity index, field tag)``, so adding
users or servers never perturbs existing draws and a single field can be
pinned (for sweeps) without disturbing anything else.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .costs import QuantumTaskSpec, ServerProfile, TaskSpec, UserProfile
from .device import CryostatConfig, QubitTech

SCHEMA_VERSION = 1

# Generation ranges (documented in the scenario format notes).
DATA_SIZE_RANGE = (160e6, 1600e6)  # bytes
PRIMITIVE_EXPONENTS = (3, 9)  # inclusive
CHANNEL_GAIN_RANGE = (4.0, 8.0)
TX_POWER_RANGE = (0.01e-3, 0.2e-3)  # W
LOCAL_CPU_CHOICES = (1e9, 2e9, 3e9)
EDGE_CPU_CHOICES = (10e9, 15e9, 20e9)
PHYSICAL_QUBIT_RANGE = (1000, 5000)  # inclusive
CONCAT_LEVELS = (1, 2, 3)
FRAMES_RANGE = (1024, 10240)  # inclusive
DEFAULT_WEIGHT_LATENCY = 0.5
DEFAULT_BANDWIDTH = 20e6
DEFAULT_NOISE_POWER = 1e-6
DEFAULT_CHIP_ENERGY = 1e-11
DEFAULT_ERROR_THRESHOLD = 2e-4
RAYS_PER_PRIMITIVE = 3
DEFAULT_COORD_BITS = 6
DEFAULT_RESOLUTION = 128 * 128

# Entity namespaces and field tags for the per-field RNG streams.
_USER, _SERVER = 1, 2
_F_TASK, _F_PRIM, _F_FRAMES, _F_GAIN, _F_TX, _F_CPU_LOCAL = 0, 1, 2, 3, 4, 5
_F_CPU_EDGE, _F_SUB_PHYS, _F_SUB_LEVEL, _F_LEVEL = 6, 7, 8, 9

# Pinnable generation fields (used by parameter sweeps).
PIN_FIELDS = ("edge_cpu", "physical_qubits", "decoherence_time", "weight_latency")


def field_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one (entity, field) slot of one seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class RayTracingParams:
    """Shape of one render job before compilation.

    ``primitive_exponent`` sets the scene size ``2**primitive_exponent``;
    ``coord_bits`` is the fixed-point width of one intersection
    coordinate.  Range limits of the generator are enforced at draw time,
    not here, so hand-built corner cases stay constructible.
    """

    primitive_exponent: int
    coord_bits: int = DEFAULT_COORD_BITS
    frames: int = FRAMES_RANGE[0]
    resolution: int = DEFAULT_RESOLUTION
    rays_per_primitive: int = RAYS_PER_PRIMITIVE

    def __post_init__(self):
        if self.primitive_exponent < 0 or self.coord_bits < 0:
            raise ValueError("primitive_exponent and coord_bits must be >= 0")
        if self.frames < 1 or self.resolution < 1 or self.rays_per_primitive < 1:
            raise ValueError("frames, resolution and rays_per_primitive must be >= 1")


@dataclass(frozen=True)
class ObservationScales:
    """Fixed per-field constants that map raw observation values into [0, 1]."""

    f_local: float = LOCAL_CPU_CHOICES[-1]
    data_size: float = DATA_SIZE_RANGE[1]
    cycles_per_byte: float = RAYS_PER_PRIMITIVE * 2 ** PRIMITIVE_EXPONENTS[1]
    logical_qubits: float = PRIMITIVE_EXPONENTS[1] + 2 * DEFAULT_COORD_BITS + 5
    logical_depth: float = 6460.0
    edge_cpu: float = EDGE_CPU_CHOICES[-1]
    logical_qubit_quota: float = PHYSICAL_QUBIT_RANGE[1] // 91
    concat_level: float = CONCAT_LEVELS[-1]
    tx_power: float = TX_POWER_RANGE[1]
    channel_gain: float = CHANNEL_GAIN_RANGE[1]


@dataclass(frozen=True)
class ScenarioUser:
    """One generated user: profile plus its classical and quantum task."""

    profile: UserProfile
    task: TaskSpec
    quantum_task: QuantumTaskSpec


@dataclass(frozen=True)
class Scenario:
    """A complete offloading instance: users, servers and device physics."""

    users: tuple[ScenarioUser, ...]
    servers: tuple[ServerProfile, ...]
    cryostat: CryostatConfig
    qubit_tech: QubitTech
    rng_seed: int
    chip_energy_per_cycle: float = DEFAULT_CHIP_ENERGY
    error_threshold: float = DEFAULT_ERROR_THRESHOLD
    normalization: ObservationScales = ObservationScales()

    def __post_init__(self):
        if not self.users or not self.servers:
            raise ValueError("scenario needs at least one user and one server")


def compile_quantum(params: RayTracingParams, task: TaskSpec) -> QuantumTaskSpec:
    """Quantum footprint of a render job.

    The search circuit needs ``pb + 2*cb + 5`` qubits (primitive register,
    two coordinate registers, bookkeeping) and its depth is the register
    preparation plus the optimal number of search iterations over the
    ``2**width`` joint states.
    """
    width = params.primitive_exponent + 2 * params.coord_bits + 5
    iterations = math.floor(math.pi / 4.0 * math.sqrt(2.0**width))
    return QuantumTaskSpec(
        data_size=task.data_size,
        logical_qubits=width,
        logical_depth=3 * params.primitive_exponent + iterations,
    )


def gen_task(params: RayTracingParams, rng: np.random.Generator) -> TaskSpec:
    """Draw a classical task for a render job of the given shape."""
    return TaskSpec(
        data_size=float(rng.uniform(*DATA_SIZE_RANGE)),
        cycles_per_byte=float(
            params.rays_per_primitive * 2**params.primitive_exponent
        ),
    )


def _pin(pins: dict | None, name: str):
    return None if pins is None else pins.get(name)


def gen_scenario(
    num_users: int,
    num_servers: int,
    seed: int,
    *,
    pins: dict | None = None,
    noise_power: float = DEFAULT_NOISE_POWER,
    bandwidth: float = DEFAULT_BANDWIDTH,
    chip_energy_per_cycle: float = DEFAULT_CHIP_ENERGY,
    error_threshold: float = DEFAULT_ERROR_THRESHOLD,
    cryostat: CryostatConfig | None = None,
    qubit_tech: QubitTech | None = None,
) -> Scenario:
    """Generate a full scenario from ``(num_users, num_servers, seed)``.

    ``pins`` maps a field name from ``PIN_FIELDS`` to a fixed value; the
    pinned field replaces its draw while every other stream is untouched,
    which is what parameter sweeps rely on.
    """
    if num_users < 1 or num_servers < 1:
        raise ValueError("need at least one user and one server")
    if pins:
        unknown = set(pins) - set(PIN_FIELDS)
        if unknown:
            raise ValueError(f"unknown pinned fields: {sorted(unknown)}")

    users = []
    for u in range(num_users):
        prim = int(
            field_rng(seed, _USER, u, _F_PRIM).integers(
                PRIMITIVE_EXPONENTS[0], PRIMITIVE_EXPONENTS[1] + 1
            )
        )
        frames = int(
            field_rng(seed, _USER, u, _F_FRAMES).integers(
                FRAMES_RANGE[0], FRAMES_RANGE[1] + 1
            )
        )
        params = RayTracingParams(primitive_exponent=prim, frames=frames)
        task = gen_task(params, field_rng(seed, _USER, u, _F_TASK))
        qtask = compile_quantum(params, task)

        gains = tuple(
            float(g)
            for g in field_rng(seed, _USER, u, _F_GAIN).uniform(
                *CHANNEL_GAIN_RANGE, size=num_servers
            )
        )
        edge_cpu = _pin(pins, "edge_cpu")
        if edge_cpu is None:
            edge_cpu = float(
                field_rng(seed, _USER, u, _F_CPU_EDGE).choice(EDGE_CPU_CHOICES)
            )
        sub_phys = _pin(pins, "physical_qubits")
        if sub_phys is None:
            sub_phys = int(
                field_rng(seed, _USER, u, _F_SUB_PHYS).integers(
                    PHYSICAL_QUBIT_RANGE[0], PHYSICAL_QUBIT_RANGE[1] + 1
                )
            )
        sub_level = int(
            field_rng(seed, _USER, u, _F_SUB_LEVEL).integers(
                CONCAT_LEVELS[0], CONCAT_LEVELS[-1] + 1
            )
        )
        weight_latency = _pin(pins, "weight_latency")
        if weight_latency is None:
            weight_latency = DEFAULT_WEIGHT_LATENCY

        profile = UserProfile(
            f_local=float(
                field_rng(seed, _USER, u, _F_CPU_LOCAL).choice(LOCAL_CPU_CHOICES)
            ),
            tx_power=float(field_rng(seed, _USER, u, _F_TX).uniform(*TX_POWER_RANGE)),
            weight_latency=float(weight_latency),
            weight_energy=1.0 - float(weight_latency),
            channel_gains=gains,
            edge_cpu=float(edge_cpu),
            logical_qubit_quota=int(sub_phys) // 91**sub_level,
        )
        users.append(ScenarioUser(profile=profile, task=task, quantum_task=qtask))

    servers = tuple(
        ServerProfile(
            noise_power=noise_power,
            bandwidth=bandwidth,
            concat_level=int(
                field_rng(seed, _SERVER, e, _F_LEVEL).integers(
                    CONCAT_LEVELS[0], CONCAT_LEVELS[-1] + 1
                )
            ),
        )
        for e in range(num_servers)
    )

    decoherence = _pin(pins, "decoherence_time")
    tech = qubit_tech if qubit_tech is not None else QubitTech()
    if decoherence is not None:
        tech = replace(tech, decoherence_time=float(decoherence))

    return Scenario(
        users=tuple(users),
        servers=servers,
        cryostat=cryostat if cryostat is not None else CryostatConfig(),
        qubit_tech=tech,
        rng_seed=seed,
        chip_energy_per_cycle=chip_energy_per_cycle,
        error_threshold=error_threshold,
    )


def redraw_tasks(scenario: Scenario, rng: np.random.Generator) -> Scenario:
    """Fresh tasks for every user, keeping profiles and servers untouched."""
    users = []
    for entry in scenario.users:
        prim = int(rng.integers(PRIMITIVE_EXPONENTS[0], PRIMITIVE_EXPONENTS[1] + 1))
        frames = int(rng.integers(FRAMES_RANGE[0], FRAMES_RANGE[1] + 1))
        params = RayTracingParams(primitive_exponent=prim, frames=frames)
        task = gen_task(params, rng)
        users.append(
            ScenarioUser(
                profile=entry.profile,
                task=task,
                quantum_task=compile_quantum(params, task),
            )
        )
    return replace(scenario, users=tuple(users))


def scenario_to_dict(scenario: Scenario) -> dict:
    """Plain-dict form of a scenario (JSON-compatible, round-trip stable)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "rng_seed": scenario.rng_seed,
        "chip_energy_per_cycle": scenario.chip_energy_per_cycle,
        "error_threshold": scenario.error_threshold,
        "users": [
            {
                "profile": {
                    **asdict(entry.profile),
                    "channel_gains": list(entry.profile.channel_gains),
                },
                "task": asdict(entry.task),
                "quantum_task": asdict(entry.quantum_task),
            }
            for entry in scenario.users
        ],
        "servers": [asdict(s) for s in scenario.servers],
        "device": {
            "cryostat": asdict(scenario.cryostat),
            "qubit_tech": asdict(scenario.qubit_tech),
        },
        "normalization": asdict(scenario.normalization),
    }


def scenario_from_dict(doc: dict) -> Scenario:
    """Rebuild a scenario from its dict form, checking the schema version."""
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema_version {version!r}")
    users = tuple(
        ScenarioUser(
            profile=UserProfile(
                **{
                    **entry["profile"],
                    "channel_gains": tuple(entry["profile"]["channel_gains"]),
                }
            ),
            task=TaskSpec(**entry["task"]),
            quantum_task=QuantumTaskSpec(**entry["quantum_task"]),
        )
        for entry in doc["users"]
    )
    return Scenario(
        users=users,
        servers=tuple(ServerProfile(**s) for s in doc["servers"]),
        cryostat=CryostatConfig(**doc["device"]["cryostat"]),
        qubit_tech=QubitTech(**doc["device"]["qubit_tech"]),
        rng_seed=doc["rng_seed"],
        chip_energy_per_cycle=doc["chip_energy_per_cycle"],
        error_threshold=doc["error_threshold"],
        normalization=ObservationScales(**doc["normalization"]),
    )


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_dict(scenario), indent=2) + "\n", encoding="utf-8"
    )


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
