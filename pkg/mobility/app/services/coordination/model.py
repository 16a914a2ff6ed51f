from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt

from mobility.app.errors import TeamModelError

PROBABILITY_TOLERANCE = 1e-12

FloatArray = npt.NDArray[np.float64]
RandomSource = np.random.Generator | int | None


def as_generator(source: RandomSource) -> np.random.Generator:
    if isinstance(source, np.random.Generator):
        return source
    return np.random.default_rng(source)


def _check_distribution(name: str, probabilities: Sequence[float]) -> None:
    if not probabilities:
        raise TeamModelError(f"{name}: distribution must not be empty")
    if any(p < 0 or math.isnan(p) for p in probabilities):
        raise TeamModelError(f"{name}: probabilities must be non-negative")
    if abs(math.fsum(probabilities) - 1.0) > PROBABILITY_TOLERANCE:
        raise TeamModelError(f"{name}: probabilities must sum to 1")


@dataclass(frozen=True)
class TeamMember:
    """One decision maker: its decision and observation sets, noise model and sharing delay.

    `observation_table[x][v]` is the index of the observation produced in state x
    under noise outcome v.
    """

    name: str
    decisions: tuple[str, ...]
    observations: tuple[str, ...]
    noise_labels: tuple[str, ...]
    noise_probabilities: tuple[float, ...]
    observation_table: tuple[tuple[int, ...], ...]
    delay: int = 0

    def __post_init__(self) -> None:
        if not self.decisions or not self.observations:
            raise TeamModelError(f"member {self.name}: decisions and observations are required")
        if len(self.noise_labels) != len(self.noise_probabilities):
            raise TeamModelError(f"member {self.name}: noise labels and probabilities differ")
        _check_distribution(f"member {self.name} noise", self.noise_probabilities)
        if self.delay < 0:
            raise TeamModelError(f"member {self.name}: delay must be >= 0")
        for row in self.observation_table:
            if len(row) != len(self.noise_labels):
                raise TeamModelError(
                    f"member {self.name}: observation table needs one entry per noise outcome"
                )
            if any(not 0 <= y < len(self.observations) for y in row):
                raise TeamModelError(f"member {self.name}: observation index out of range")


@dataclass(frozen=True)
class TeamModel:
    states: tuple[str, ...]
    members: tuple[TeamMember, ...]
    horizon: int
    disturbance_labels: tuple[str, ...]
    disturbance_probabilities: tuple[float, ...]
    dynamics_table: tuple[tuple[tuple[int, ...], ...], ...]
    cost_table: tuple[tuple[float, ...], ...]
    initial_distribution: tuple[float, ...]
    failure_states: frozenset[int] = field(default_factory=frozenset[int])

    def __post_init__(self) -> None:
        state_count = len(self.states)
        if state_count == 0 or len(set(self.states)) != state_count:
            raise TeamModelError("states must be a non-empty list of unique labels")
        if not self.members:
            raise TeamModelError("a team needs at least one member")
        if self.horizon < 1:
            raise TeamModelError("horizon must be >= 1")
        for member in self.members:
            if member.delay >= self.horizon:
                raise TeamModelError(
                    f"member {member.name}: delay {member.delay} must be below horizon {self.horizon}"
                )
            if len(member.observation_table) != state_count:
                raise TeamModelError(
                    f"member {member.name}: observation table needs one row per state"
                )
        if len(self.disturbance_labels) != len(self.disturbance_probabilities):
            raise TeamModelError("disturbance labels and probabilities differ in length")
        _check_distribution("disturbance", self.disturbance_probabilities)
        _check_distribution("initial distribution", self.initial_distribution)
        if len(self.initial_distribution) != state_count:
            raise TeamModelError("initial distribution needs one entry per state")

        joint_count = math.prod(len(member.decisions) for member in self.members)
        if len(self.dynamics_table) != state_count or len(self.cost_table) != state_count:
            raise TeamModelError("dynamics and cost tables need one row per state")
        for x, (dynamics_row, cost_row) in enumerate(
            zip(self.dynamics_table, self.cost_table, strict=True)
        ):
            if len(dynamics_row) != joint_count or len(cost_row) != joint_count:
                raise TeamModelError(
                    f"state {self.states[x]}: tables need one entry per joint decision"
                )
            for successors in dynamics_row:
                if len(successors) != len(self.disturbance_labels):
                    raise TeamModelError(
                        f"state {self.states[x]}: dynamics need one successor per disturbance"
                    )
                if any(not 0 <= successor < state_count for successor in successors):
                    raise TeamModelError(f"state {self.states[x]}: successor out of range")
            if any(not math.isfinite(cost) for cost in cost_row):
                raise TeamModelError(f"state {self.states[x]}: costs must be finite")
        if any(not 0 <= state < state_count for state in self.failure_states):
            raise TeamModelError("failure state index out of range")

    @property
    def member_count(self) -> int:
        return len(self.members)

    @property
    def decision_shape(self) -> tuple[int, ...]:
        return tuple(len(member.decisions) for member in self.members)

    @cached_property
    def joint_decisions(self) -> tuple[tuple[int, ...], ...]:
        return tuple(itertools.product(*[range(size) for size in self.decision_shape]))

    def joint_index(self, decisions: Sequence[int]) -> int:
        if len(decisions) != self.member_count or any(
            not 0 <= u < size for u, size in zip(decisions, self.decision_shape, strict=True)
        ):
            raise TeamModelError(f"undefined decision profile {tuple(decisions)}")
        return int(np.ravel_multi_index(tuple(decisions), self.decision_shape))

    @property
    def delay(self) -> int:
        """The common sharing delay; planning is only defined for uniform delays."""
        delays = {member.delay for member in self.members}
        if len(delays) != 1:
            raise TeamModelError(f"planning requires a uniform delay, got {sorted(delays)}")
        return delays.pop()

    @cached_property
    def transition(self) -> FloatArray:
        """P[x, u, x'] with u the joint decision index."""
        kernel = np.zeros((len(self.states), len(self.joint_decisions), len(self.states)))
        for x, row in enumerate(self.dynamics_table):
            for u, successors in enumerate(row):
                for w, successor in enumerate(successors):
                    kernel[x, u, successor] += self.disturbance_probabilities[w]
        return kernel

    @cached_property
    def observation_kernels(self) -> tuple[FloatArray, ...]:
        """O^k[x, y] for each member."""
        kernels: list[FloatArray] = []
        for member in self.members:
            kernel = np.zeros((len(self.states), len(member.observations)))
            for x, row in enumerate(member.observation_table):
                for v, y in enumerate(row):
                    kernel[x, y] += member.noise_probabilities[v]
            kernels.append(kernel)
        return tuple(kernels)

    @cached_property
    def successors(self) -> tuple[tuple[tuple[tuple[int, float], ...], ...], ...]:
        """Sparse view of the transition kernel: successors[x][u] = ((x', p), ...)."""
        kernel = self.transition
        return tuple(
            tuple(
                tuple(
                    (int(target), float(kernel[x, u, target]))
                    for target in np.flatnonzero(kernel[x, u])
                )
                for u in range(kernel.shape[1])
            )
            for x in range(kernel.shape[0])
        )

    @cached_property
    def observation_likelihoods(
        self,
    ) -> tuple[tuple[tuple[tuple[int, ...], float], ...], ...]:
        """likelihoods[x] = ((joint observation profile, probability), ...)."""
        rows: list[tuple[tuple[tuple[int, ...], float], ...]] = []
        for x in range(len(self.states)):
            per_member = [
                [(int(y), float(kernel[x, y])) for y in np.flatnonzero(kernel[x])]
                for kernel in self.observation_kernels
            ]
            rows.append(
                tuple(
                    (
                        tuple(y for y, _ in combination),
                        math.prod(p for _, p in combination),
                    )
                    for combination in itertools.product(*per_member)
                )
            )
        return tuple(rows)

    def state_index(self, label: str) -> int:
        try:
            return self.states.index(label)
        except ValueError as exc:
            raise TeamModelError(f"unknown state {label!r}") from exc


def step(
    model: TeamModel,
    x: int,
    u: Sequence[int],
    rng: RandomSource = None,
) -> tuple[int, float]:
    """Sample a disturbance and return (f(x, u, w), c(x, u))."""
    if not 0 <= x < len(model.states):
        raise TeamModelError(f"undefined state index {x}")
    joint = model.joint_index(u)
    generator = as_generator(rng)
    w = int(generator.choice(len(model.disturbance_labels), p=model.disturbance_probabilities))
    return model.dynamics_table[x][joint][w], model.cost_table[x][joint]


def observe(
    model: TeamModel,
    x: int,
    member: int,
    rng: RandomSource = None,
) -> int:
    if not 0 <= x < len(model.states):
        raise TeamModelError(f"undefined state index {x}")
    if not 0 <= member < model.member_count:
        raise TeamModelError(f"undefined member index {member}")
    declared = model.members[member]
    generator = as_generator(rng)
    v = int(generator.choice(len(declared.noise_labels), p=declared.noise_probabilities))
    return declared.observation_table[x][v]


def sample_initial_state(model: TeamModel, rng: RandomSource = None) -> int:
    generator = as_generator(rng)
    return int(generator.choice(len(model.states), p=model.initial_distribution))
