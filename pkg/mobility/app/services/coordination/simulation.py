from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from mobility.app.errors import CoordinationError, ProtocolViolationError
from mobility.app.services.coordination.information import (
    CommonInfo,
    InformationState,
    PrivateInfo,
    SharedPacket,
    SharingProtocol,
    initial_information_state,
    private_view,
    update_information_state,
)
from mobility.app.services.coordination.model import TeamModel, observe, sample_initial_state, step
from mobility.app.services.coordination.planning import (
    CoordinatorBelief,
    HiddenRecord,
    PlanningStrategy,
    Prescription,
    advance_record,
    initial_record,
)
from mobility.app.telemetry import TelemetryClient

LOGGER = logging.getLogger("mobility.coordination.simulation")

_CONSISTENCY_TOLERANCE = 1e-9


class LearningFunction(Protocol):
    """Extension point for a member that refines its prescription from local data."""

    def refine(
        self,
        common: CommonInfo,
        prescription: Prescription,
        private: PrivateInfo,
    ) -> Prescription: ...


@dataclass(frozen=True)
class TrajectoryStep:
    episode: int
    t: int
    state: int
    decisions: tuple[int, ...]
    observations: tuple[int, ...]
    cost: float


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    cost: float
    failed: bool
    steps: tuple[TrajectoryStep, ...]


@dataclass(frozen=True)
class TeamSimulationResult:
    episodes: int
    mean_cost: float
    stderr: float
    failure_episodes: int
    costs: tuple[float, ...]
    trajectories: tuple[EpisodeRecord, ...]


class MemberAgent:
    """One team member. It only ever sees its own observations and decisions plus shared packets."""

    def __init__(
        self,
        member: int,
        model: TeamModel,
        strategy: PlanningStrategy,
        *,
        learning: LearningFunction | None = None,
    ) -> None:
        self.member = member
        self._model = model
        self._strategy = strategy
        self._learning = learning
        self._delay = model.members[member].delay
        self._common = CommonInfo()
        self._observations: list[int] = []
        self._decisions: list[int] = []
        self._information_state = initial_information_state(model)
        self._belief: CoordinatorBelief | None = None

    @property
    def private(self) -> PrivateInfo:
        return private_view(self._observations, self._decisions, self._delay)

    @property
    def information_state(self) -> InformationState:
        return self._information_state

    @property
    def belief(self) -> CoordinatorBelief:
        if self._belief is None:
            raise CoordinationError(f"member {self.member} has not received shared data yet")
        return self._belief

    @property
    def common(self) -> CommonInfo:
        return self._common

    def observe(self, observation: int) -> None:
        self._observations.append(observation)

    def receive(self, packet: SharedPacket) -> None:
        self._common = self._common.extend(packet)
        self._information_state = update_information_state(
            self._information_state, packet, self._model
        )
        self._belief = self._strategy.belief_after(self._common.packets)
        if packet.observations and packet.observations[self.member] is not None:
            self._observations.pop(0)
        if packet.decisions and packet.decisions[self.member] is not None:
            self._decisions.pop(0)

    def decide(self, t: int) -> int:
        prescription = self._strategy.prescribe(t, self.belief)[self.member]
        if self._learning is not None:
            prescription = self._learning.refine(self._common, prescription, self.private)
        decision = prescription.decide(self.private)
        self._decisions.append(decision)
        return decision


def _check_consistency(
    agents: list[MemberAgent],
    record: HiddenRecord,
    model: TeamModel,
    t: int,
) -> None:
    reference = agents[0]
    for agent in agents[1:]:
        if agent.belief.key != reference.belief.key:
            raise CoordinationError(f"t={t}: members disagree on the coordinator belief")
        if agent.information_state != reference.information_state:
            raise CoordinationError(f"t={t}: members disagree on the information state")
    lifted = reference.belief.information_state(len(model.states)).as_array()
    if not np.allclose(
        lifted, reference.information_state.as_array(), atol=_CONSISTENCY_TOLERANCE, rtol=0.0
    ):
        raise CoordinationError(f"t={t}: coordinator belief and information state diverged")
    if not reference.belief.contains(record):
        raise ProtocolViolationError(f"t={t}: realized hidden data outside the shared belief")
    delay = model.delay
    for agent in agents:
        if agent.private != record.private(agent.member, delay):
            raise ProtocolViolationError(
                f"t={t}: member {agent.member} holds data outside its private window"
            )


def run_episode(
    model: TeamModel,
    strategy: PlanningStrategy,
    index: int,
    seed: int,
    *,
    learning: LearningFunction | None = None,
    debug_checks: bool = True,
    keep_steps: bool = False,
) -> EpisodeRecord:
    rng = np.random.default_rng([seed, index])
    delay = model.delay
    members = range(model.member_count)
    protocol = SharingProtocol(delays=tuple(member.delay for member in model.members))
    agents = [MemberAgent(k, model, strategy, learning=learning) for k in members]

    state = sample_initial_state(model, rng)
    observations = tuple(observe(model, state, k, rng) for k in members)
    record, expected = initial_record(state, observations, delay)
    protocol.publish_observations(0, observations)
    visited = [state]
    costs: list[float] = []
    steps: list[TrajectoryStep] = []

    for t in range(model.horizon):
        packet = protocol.release(t)
        if debug_checks and packet != expected:
            raise ProtocolViolationError(f"t={t}: protocol released {packet}, expected {expected}")
        for agent, observation in zip(agents, observations, strict=True):
            agent.observe(observation)
        for agent in agents:
            agent.receive(packet)
        if debug_checks:
            _check_consistency(agents, record, model, t)
        decisions = tuple(agent.decide(t) for agent in agents)
        protocol.publish_decisions(t, decisions)
        next_state, cost = step(model, state, decisions, rng)
        costs.append(cost)
        if keep_steps:
            steps.append(
                TrajectoryStep(
                    episode=index,
                    t=t,
                    state=state,
                    decisions=decisions,
                    observations=observations,
                    cost=cost,
                )
            )
        if t + 1 < model.horizon:
            observations = tuple(observe(model, next_state, k, rng) for k in members)
            protocol.publish_observations(t + 1, observations)
            record, expected = advance_record(record, next_state, observations, decisions, delay)
        state = next_state
        visited.append(state)

    return EpisodeRecord(
        index=index,
        cost=math.fsum(costs),
        failed=any(x in model.failure_states for x in visited),
        steps=tuple(steps),
    )


def simulate_team(
    model: TeamModel,
    strategy: PlanningStrategy,
    episodes: int,
    seed: int,
    *,
    workers: int = 1,
    record_trajectories: bool = False,
    learning: LearningFunction | None = None,
    debug_checks: bool = True,
    telemetry: TelemetryClient | None = None,
) -> TeamSimulationResult:
    """Run seeded episodes; episode i draws from default_rng([seed, i])."""
    if episodes < 1:
        raise CoordinationError("episodes must be >= 1")
    if strategy.model != model:
        raise CoordinationError("strategy was solved for a different team model")

    def _run(index: int) -> EpisodeRecord:
        return run_episode(
            model,
            strategy,
            index,
            seed,
            learning=learning,
            debug_checks=debug_checks,
            keep_steps=record_trajectories,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(_run, range(episodes)))
    else:
        records = [_run(index) for index in range(episodes)]

    costs = tuple(record.cost for record in records)
    mean = math.fsum(costs) / episodes
    stderr = 0.0
    if episodes > 1:
        variance = math.fsum((cost - mean) ** 2 for cost in costs) / (episodes - 1)
        stderr = math.sqrt(variance / episodes)
    failures = sum(1 for record in records if record.failed)
    LOGGER.info(
        "team simulated episodes=%s mean_cost=%s stderr=%s failures=%s",
        episodes,
        mean,
        stderr,
        failures,
    )
    if telemetry is not None:
        telemetry.emit(
            "coordination.simulate.finish",
            episodes=episodes,
            mean_cost=mean,
            failures=failures,
        )
    return TeamSimulationResult(
        episodes=episodes,
        mean_cost=mean,
        stderr=stderr,
        failure_episodes=failures,
        costs=costs,
        trajectories=tuple(record for record in records if record.steps),
    )
