"""Per-user offloading cost terms and the system total.

Latency/energy for the four processing paths (local CPU, uplink, edge CPU,
edge QPU), the quantum-feasibility indicator, and the weighted sum over
users.  All functions are pure; ``ScenarioEvaluator`` just precomputes the
per-scenario device tables so that solvers and the environment can score
many candidate actions cheaply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .device import (
    GatePowerProfile,
    LogicalResources,
    QubitTech,
    cryostat_stages,
    gate_power_profile,
    logical_resources,
    physical_error_rate,
    success_probability,
)

if TYPE_CHECKING:
    from .workload import Scenario

# A quantum execution is accepted when its success probability reaches the
# classical single-run threshold of two thirds.
SUCCESS_THRESHOLD = 2.0 / 3.0

BITS_PER_BYTE = 8.0


@dataclass(frozen=True)
class UserProfile:
    """One mobile user: hardware, radio and subscribed edge resources.

    ``channel_gains[e]`` is the unitless uplink gain toward server ``e``.
    ``edge_cpu`` is the cycles/s the user has subscribed on any edge
    server, ``logical_qubit_quota`` the subscribed number of logical
    qubits.
    """

    f_local: float
    tx_power: float
    weight_latency: float
    weight_energy: float
    channel_gains: tuple[float, ...]
    edge_cpu: float
    logical_qubit_quota: int

    def __post_init__(self):
        if self.f_local <= 0.0:
            raise ValueError("f_local must be > 0")
        if self.tx_power <= 0.0:
            raise ValueError("tx_power must be > 0")
        for w in (self.weight_latency, self.weight_energy):
            if not 0.0 <= w <= 1.0:
                raise ValueError("weights must lie in [0, 1]")
        if any(g <= 0.0 for g in self.channel_gains):
            raise ValueError("channel gains must be > 0")
        if self.edge_cpu <= 0.0:
            raise ValueError("edge_cpu must be > 0")
        if self.logical_qubit_quota < 0:
            raise ValueError("logical_qubit_quota must be >= 0")


@dataclass(frozen=True)
class TaskSpec:
    """A classical task: payload bytes and CPU cycles needed per byte."""

    data_size: float
    cycles_per_byte: float

    def __post_init__(self):
        if self.data_size <= 0.0 or self.cycles_per_byte <= 0.0:
            raise ValueError("data_size and cycles_per_byte must be > 0")


@dataclass(frozen=True)
class QuantumTaskSpec:
    """The compiled quantum form of a task: circuit width and depth."""

    data_size: float
    logical_qubits: int
    logical_depth: int

    def __post_init__(self):
        if self.data_size <= 0.0:
            raise ValueError("data_size must be > 0")
        if self.logical_qubits <= 0 or self.logical_depth <= 0:
            raise ValueError("logical_qubits and logical_depth must be > 0")

    @property
    def error_locations(self) -> int:
        """Number of circuit sites where a logical error can occur."""
        return self.logical_qubits * self.logical_depth


@dataclass(frozen=True)
class ServerProfile:
    """One edge server: radio parameters and its error-correction level."""

    noise_power: float = 1e-6
    bandwidth: float = 20e6
    concat_level: int = 1

    def __post_init__(self):
        if self.noise_power <= 0.0:
            raise ValueError("noise_power must be > 0")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be > 0")
        if self.concat_level not in (1, 2, 3):
            raise ValueError(f"concat_level must be 1, 2 or 3, got {self.concat_level}")


@dataclass(frozen=True)
class CostBreakdown:
    """Latency/energy components of one user's execution and the weighted cost.

    Components not on the active path are zero.  ``cost`` is the
    latency-weighted sum of the active latencies plus the energy-weighted
    sum of the active energies.
    """

    latency_local: float = 0.0
    latency_uplink: float = 0.0
    latency_edge_cpu: float = 0.0
    latency_edge_qpu: float = 0.0
    energy_local: float = 0.0
    energy_uplink: float = 0.0
    energy_edge_cpu: float = 0.0
    energy_edge_qpu: float = 0.0
    cost: float = 0.0

    @property
    def latency_total(self) -> float:
        return (
            self.latency_local
            + self.latency_uplink
            + self.latency_edge_cpu
            + self.latency_edge_qpu
        )

    @property
    def energy_total(self) -> float:
        return (
            self.energy_local
            + self.energy_uplink
            + self.energy_edge_cpu
            + self.energy_edge_qpu
        )


@dataclass(frozen=True)
class JointAction:
    """Resolved decisions for every user: server, local ratio, QPU indicator."""

    server_choice: tuple[int, ...]
    local_ratio: tuple[float, ...]
    quantum_indicator: tuple[int, ...]

    def __post_init__(self):
        n = len(self.server_choice)
        if len(self.local_ratio) != n or len(self.quantum_indicator) != n:
            raise ValueError("action fields must have equal length")
        if any(not 0.0 <= r <= 1.0 for r in self.local_ratio):
            raise ValueError("local_ratio entries must lie in [0, 1]")
        if any(i not in (0, 1) for i in self.quantum_indicator):
            raise ValueError("quantum_indicator entries must be 0 or 1")


def uplink_rate(user: UserProfile, server: ServerProfile, target: int) -> float:
    """Shannon uplink rate in bits/s from a user to server ``target``."""
    if not 0 <= target < len(user.channel_gains):
        raise LookupError(f"unknown server id {target}")
    snr = user.tx_power * user.channel_gains[target] / server.noise_power
    return server.bandwidth * math.log2(1.0 + snr)


def local_cost(
    user: UserProfile, task: TaskSpec, local_ratio: float, chip_energy: float
) -> CostBreakdown:
    """Cost of processing the ``local_ratio`` share of a task on the user CPU."""
    if not 0.0 <= local_ratio <= 1.0:
        raise ValueError("local_ratio must lie in [0, 1]")
    cycles = local_ratio * task.data_size * task.cycles_per_byte
    latency = cycles / user.f_local
    energy = chip_energy * cycles
    return CostBreakdown(
        latency_local=latency,
        energy_local=energy,
        cost=user.weight_latency * latency + user.weight_energy * energy,
    )


def transmission_cost(
    user: UserProfile,
    server: ServerProfile,
    target: int,
    task: TaskSpec | QuantumTaskSpec,
    local_ratio: float,
) -> tuple[float, float]:
    """Uplink (latency, energy) of shipping the offloaded share to ``target``.

    Task sizes are bytes while the link rate is bits/s, hence the factor 8.
    """
    bits = (1.0 - local_ratio) * task.data_size * BITS_PER_BYTE
    if bits == 0.0:
        return 0.0, 0.0
    rate = uplink_rate(user, server, target)
    if rate <= 0.0:
        raise ValueError(f"link to server {target} carries no data")
    latency = bits / rate
    return latency, user.tx_power * latency


def edge_classical_cost(
    user: UserProfile,
    server: ServerProfile,
    target: int,
    task: TaskSpec,
    local_ratio: float,
    chip_energy: float,
) -> CostBreakdown:
    """Cost of offloading the remote share to server CPUs, transmission included."""
    d_up, e_up = transmission_cost(user, server, target, task, local_ratio)
    cycles = (1.0 - local_ratio) * task.data_size * task.cycles_per_byte
    latency = cycles / user.edge_cpu
    energy = chip_energy * cycles
    return CostBreakdown(
        latency_uplink=d_up,
        energy_uplink=e_up,
        latency_edge_cpu=latency,
        energy_edge_cpu=energy,
        cost=user.weight_latency * (d_up + latency)
        + user.weight_energy * (e_up + energy),
    )


def edge_quantum_cost(
    user: UserProfile,
    server: ServerProfile,
    target: int,
    qtask: QuantumTaskSpec,
    local_ratio: float,
    resources: LogicalResources,
    powers: GatePowerProfile,
    tech: QubitTech,
) -> CostBreakdown:
    """Cost of offloading the remote share to the server QPU, transmission included.

    Gate latency and energy scale with the offloaded bytes times the
    circuit width; energy adds the static per-physical-qubit draw of one
    logical qubit.
    """
    d_up, e_up = transmission_cost(user, server, target, qtask, local_ratio)
    volume = (1.0 - local_ratio) * qtask.data_size * qtask.logical_qubits
    step_time = (
        tech.tau_1qb * resources.n_1qb
        + tech.tau_2qb * resources.n_2qb
        + tech.tau_meas * resources.n_meas
    )
    step_energy = (
        powers.e_1qb * resources.n_1qb
        + powers.e_2qb * resources.n_2qb
        + powers.e_meas * resources.n_meas
        + powers.e_qubit * resources.phys_per_logical
    )
    latency = volume * step_time
    energy = volume * step_energy
    return CostBreakdown(
        latency_uplink=d_up,
        energy_uplink=e_up,
        latency_edge_qpu=latency,
        energy_edge_qpu=energy,
        cost=user.weight_latency * (d_up + latency)
        + user.weight_energy * (e_up + energy),
    )


def quantum_feasible(
    qtask: QuantumTaskSpec, user: UserProfile, success_prob: float
) -> int:
    """1 when the task fits the user's qubit quota and the run is reliable enough."""
    fits = qtask.logical_qubits <= user.logical_qubit_quota
    reliable = success_prob >= SUCCESS_THRESHOLD
    return 1 if (fits and reliable) else 0


def _merge(local: CostBreakdown, remote: CostBreakdown) -> CostBreakdown:
    return CostBreakdown(
        latency_local=local.latency_local,
        latency_uplink=remote.latency_uplink,
        latency_edge_cpu=remote.latency_edge_cpu,
        latency_edge_qpu=remote.latency_edge_qpu,
        energy_local=local.energy_local,
        energy_uplink=remote.energy_uplink,
        energy_edge_cpu=remote.energy_edge_cpu,
        energy_edge_qpu=remote.energy_edge_qpu,
        cost=local.cost + remote.cost,
    )


class ScenarioEvaluator:
    """Scores actions against one scenario.

    Precomputes the device tables (error rate, gate powers, per-level
    resources) and the per-(user, server) uplink rates, success
    probabilities and feasibility indicators.  The scenario is read-only;
    one evaluator may be shared by concurrent readers.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        stages = cryostat_stages(scenario.cryostat)
        self.error_rate = physical_error_rate(scenario.cryostat, scenario.qubit_tech)
        self.powers = gate_power_profile(scenario.cryostat, scenario.qubit_tech, stages)
        self.resources = {
            level: logical_resources(level)
            for level in {s.concat_level for s in scenario.servers}
        }
        self.num_users = len(scenario.users)
        self.num_servers = len(scenario.servers)
        self.success = [
            tuple(
                success_probability(
                    entry.quantum_task.logical_qubits,
                    entry.quantum_task.logical_depth,
                    server.concat_level,
                    self.error_rate,
                    scenario.error_threshold,
                )
                for server in scenario.servers
            )
            for entry in scenario.users
        ]
        self.eligible = [
            tuple(
                quantum_feasible(
                    entry.quantum_task, entry.profile, self.success[u][e]
                )
                for e in range(self.num_servers)
            )
            for u, entry in enumerate(scenario.users)
        ]

    def user_cost(
        self, u: int, server: int, local_ratio: float, use_qpu: bool
    ) -> CostBreakdown:
        """Full cost of user ``u`` splitting its task toward ``server``."""
        entry = self.scenario.users[u]
        chip = self.scenario.chip_energy_per_cycle
        loc = local_cost(entry.profile, entry.task, local_ratio, chip)
        if use_qpu:
            remote = edge_quantum_cost(
                entry.profile,
                self.scenario.servers[server],
                server,
                entry.quantum_task,
                local_ratio,
                self.resources[self.scenario.servers[server].concat_level],
                self.powers,
                self.scenario.qubit_tech,
            )
        else:
            remote = edge_classical_cost(
                entry.profile,
                self.scenario.servers[server],
                server,
                entry.task,
                local_ratio,
                chip,
            )
        return _merge(loc, remote)

    def qpu_saving(self, u: int, server: int, local_ratio: float) -> float:
        """Cost saved by running user ``u``'s offloaded share on the QPU instead of CPUs."""
        cpu = self.user_cost(u, server, local_ratio, use_qpu=False)
        qpu = self.user_cost(u, server, local_ratio, use_qpu=True)
        return cpu.cost - qpu.cost

    def total(self, action: JointAction) -> tuple[float, tuple[CostBreakdown, ...]]:
        """System cost of a joint action plus per-user breakdowns.

        The indicator set must respect one QPU task per server; a grant to
        an overcommitted server is a contract violation.
        """
        if len(action.server_choice) != self.num_users:
            raise ValueError(
                f"action covers {len(action.server_choice)} users, "
                f"scenario has {self.num_users}"
            )
        granted_per_server = [0] * self.num_servers
        for u, (server, grant) in enumerate(
            zip(action.server_choice, action.quantum_indicator)
        ):
            if not 0 <= server < self.num_servers:
                raise ValueError(f"user {u} picked unknown server {server}")
            if grant:
                granted_per_server[server] += 1
        if any(n > 1 for n in granted_per_server):
            raise ValueError("more than one QPU grant on a single server")

        breakdowns = tuple(
            self.user_cost(
                u,
                action.server_choice[u],
                action.local_ratio[u],
                use_qpu=bool(action.quantum_indicator[u]),
            )
            for u in range(self.num_users)
        )
        return sum(b.cost for b in breakdowns), breakdowns


def total_cost(
    scenario: Scenario, action: JointAction
) -> tuple[float, tuple[CostBreakdown, ...]]:
    """System cost of ``action`` on ``scenario`` (convenience wrapper)."""
    return ScenarioEvaluator(scenario).total(action)
