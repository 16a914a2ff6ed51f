from __future__ import annotations

import itertools
import logging
import math
import threading
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from mobility.app.errors import CoordinationError, PlanningTooLargeError, ProtocolViolationError
from mobility.app.services.coordination.information import (
    InformationState,
    PrivateInfo,
    SharedPacket,
    private_view,
)
from mobility.app.services.coordination.model import TeamModel
from mobility.app.telemetry import TelemetryClient

LOGGER = logging.getLogger("mobility.coordination.planning")

VALUE_TIE_TOLERANCE = 1e-12
_KEY_DIGITS = 12


class HiddenRecord(NamedTuple):
    """What the coordinator does not know: recent states and every member's unshared data.

    `trail` holds X_{t-n}..X_t (shorter before the first share), `observations[k]` the
    unshared observations of member k and `decisions[k]` its unshared decisions.
    """

    trail: tuple[int, ...]
    observations: tuple[tuple[int, ...], ...]
    decisions: tuple[tuple[int, ...], ...]

    def private(self, member: int, delay: int) -> PrivateInfo:
        return private_view(self.observations[member], self.decisions[member], delay)


BeliefKey = tuple[tuple[HiddenRecord, float], ...]


@dataclass(frozen=True)
class CoordinatorBelief:
    support: tuple[tuple[HiddenRecord, float], ...]

    @classmethod
    def from_mass(cls, mass: Mapping[HiddenRecord, float]) -> CoordinatorBelief:
        total = math.fsum(mass.values())
        if not total > 0:
            raise CoordinationError("coordinator belief has no mass")
        return cls(
            support=tuple(
                (record, probability / total)
                for record, probability in sorted(mass.items())
                if probability > 0
            )
        )

    @cached_property
    def key(self) -> BeliefKey:
        return tuple((record, round(probability, _KEY_DIGITS)) for record, probability in self.support)

    def private_domain(self, member: int, delay: int) -> tuple[PrivateInfo, ...]:
        return tuple(sorted({record.private(member, delay) for record, _ in self.support}))

    def information_state(self, state_count: int) -> InformationState:
        """Marginal on the oldest state of the trail, i.e. P(X_{t-n} | shared data)."""
        marginal = np.zeros(state_count)
        for record, probability in self.support:
            marginal[record.trail[0]] += probability
        return InformationState.from_array(marginal)

    def mix(self, other: CoordinatorBelief, weight: float) -> CoordinatorBelief:
        mass: dict[HiddenRecord, float] = {}
        for record, probability in self.support:
            mass[record] = mass.get(record, 0.0) + weight * probability
        for record, probability in other.support:
            mass[record] = mass.get(record, 0.0) + (1.0 - weight) * probability
        return CoordinatorBelief.from_mass(mass)

    def contains(self, record: HiddenRecord) -> bool:
        return any(candidate == record for candidate, _ in self.support)


@dataclass(frozen=True, order=True)
class Prescription:
    member: int
    rules: tuple[tuple[PrivateInfo, int], ...]

    def decide(self, private: PrivateInfo) -> int:
        for candidate, decision in self.rules:
            if candidate == private:
                return decision
        raise ProtocolViolationError(
            f"member {self.member}: no prescribed decision for private data {private}"
        )


PrescriptionProfile = tuple[Prescription, ...]


@dataclass(frozen=True)
class Branch:
    packet: SharedPacket
    probability: float
    belief: CoordinatorBelief


@dataclass(frozen=True)
class Propagation:
    immediate_cost: float
    branches: tuple[Branch, ...]


def advance_record(
    record: HiddenRecord,
    next_state: int,
    observations: Sequence[int],
    decisions: Sequence[int],
    delay: int,
) -> tuple[HiddenRecord, SharedPacket]:
    trail = (*record.trail, next_state)
    if len(trail) > delay + 1:
        trail = trail[1:]
    obs_queues = tuple((*queue, y) for queue, y in zip(record.observations, observations, strict=True))
    dec_queues = tuple((*queue, u) for queue, u in zip(record.decisions, decisions, strict=True))
    shared_observations: tuple[int, ...] = ()
    shared_decisions: tuple[int, ...] = ()
    if len(obs_queues[0]) > delay:
        shared_observations = tuple(queue[0] for queue in obs_queues)
        obs_queues = tuple(queue[1:] for queue in obs_queues)
    if len(dec_queues[0]) > delay:
        shared_decisions = tuple(queue[0] for queue in dec_queues)
        dec_queues = tuple(queue[1:] for queue in dec_queues)
    return (
        HiddenRecord(trail=trail, observations=obs_queues, decisions=dec_queues),
        SharedPacket(observations=shared_observations, decisions=shared_decisions),
    )


def _group(
    mass: Mapping[SharedPacket, Mapping[HiddenRecord, float]],
) -> tuple[Branch, ...]:
    return tuple(
        Branch(
            packet=packet,
            probability=math.fsum(bucket.values()),
            belief=CoordinatorBelief.from_mass(bucket),
        )
        for packet, bucket in sorted(mass.items())
    )


def initial_record(
    initial_state: int,
    observations: Sequence[int],
    delay: int,
) -> tuple[HiddenRecord, SharedPacket]:
    members = len(observations)
    record = HiddenRecord(
        trail=(initial_state,),
        observations=tuple((y,) for y in observations),
        decisions=tuple(() for _ in range(members)),
    )
    if delay > 0:
        return record, SharedPacket()
    return (
        record._replace(observations=tuple(() for _ in range(members))),
        SharedPacket(observations=tuple(observations)),
    )


def initial_branches(model: TeamModel) -> tuple[Branch, ...]:
    """Chance node before the first decision: X_0, Y_0 and whatever is shared at t=0."""
    delay = model.delay
    mass: dict[SharedPacket, dict[HiddenRecord, float]] = {}
    for x0, p0 in enumerate(model.initial_distribution):
        if p0 <= 0:
            continue
        for profile, likelihood in model.observation_likelihoods[x0]:
            record, packet = initial_record(x0, profile, delay)
            bucket = mass.setdefault(packet, {})
            bucket[record] = bucket.get(record, 0.0) + p0 * likelihood
    return _group(mass)


def propagate(
    model: TeamModel,
    belief: CoordinatorBelief,
    profile: PrescriptionProfile,
) -> Propagation:
    """Apply a prescription profile for one step and split on the newly shared packet."""
    delay = model.delay
    costs: list[float] = []
    mass: dict[SharedPacket, dict[HiddenRecord, float]] = {}
    for record, probability in belief.support:
        x = record.trail[-1]
        decisions = tuple(
            prescription.decide(record.private(member, delay))
            for member, prescription in enumerate(profile)
        )
        joint = model.joint_index(decisions)
        costs.append(probability * model.cost_table[x][joint])
        for next_state, p_state in model.successors[x][joint]:
            for observations, p_obs in model.observation_likelihoods[next_state]:
                next_record, packet = advance_record(record, next_state, observations, decisions, delay)
                bucket = mass.setdefault(packet, {})
                bucket[next_record] = bucket.get(next_record, 0.0) + probability * p_state * p_obs
    return Propagation(immediate_cost=math.fsum(costs), branches=_group(mass))


def condition(
    model: TeamModel,
    belief: CoordinatorBelief,
    profile: PrescriptionProfile,
    packet: SharedPacket,
) -> CoordinatorBelief:
    for branch in propagate(model, belief, profile).branches:
        if branch.packet == packet:
            return branch.belief
    raise CoordinationError(f"shared packet {packet} is impossible under the current belief")


def enumerate_profiles(
    model: TeamModel,
    domains: Sequence[Sequence[PrivateInfo]],
) -> Iterator[PrescriptionProfile]:
    """Every prescription profile over the given private-data domains, lexicographically."""
    per_member: list[list[Prescription]] = []
    for member, domain in enumerate(domains):
        choices = itertools.product(range(len(model.members[member].decisions)), repeat=len(domain))
        per_member.append(
            [
                Prescription(member=member, rules=tuple(zip(domain, decisions, strict=True)))
                for decisions in choices
            ]
        )
    yield from itertools.product(*per_member)


def profile_count(model: TeamModel, domains: Sequence[Sequence[PrivateInfo]]) -> int:
    return math.prod(
        len(member.decisions) ** len(domain)
        for member, domain in zip(model.members, domains, strict=True)
    )


@dataclass(frozen=True)
class StageDecision:
    profile: PrescriptionProfile
    value: float


class CommonInformationPlanner:
    """Backward induction over coordinator beliefs reachable from the initial distribution."""

    def __init__(self, model: TeamModel, *, profile_limit: int = 65_536) -> None:
        self._model = model
        self._delay = model.delay
        self._profile_limit = profile_limit
        self._memo: dict[tuple[int, BeliefKey], tuple[CoordinatorBelief, StageDecision]] = {}

    @property
    def model(self) -> TeamModel:
        return self._model

    def decision(self, t: int, belief: CoordinatorBelief) -> StageDecision:
        key = (t, belief.key)
        cached = self._memo.get(key)
        if cached is not None:
            return cached[1]
        domains = [belief.private_domain(member, self._delay) for member in range(self._model.member_count)]
        size = profile_count(self._model, domains)
        if size > self._profile_limit:
            raise PlanningTooLargeError(
                f"stage {t} needs too many prescription profiles", size=size, bound=self._profile_limit
            )
        best: StageDecision | None = None
        for profile in enumerate_profiles(self._model, domains):
            propagation = propagate(self._model, belief, profile)
            total = propagation.immediate_cost + math.fsum(
                branch.probability * self.value(t + 1, branch.belief)
                for branch in propagation.branches
            )
            if best is None or total < best.value - VALUE_TIE_TOLERANCE:
                best = StageDecision(profile=profile, value=total)
        assert best is not None
        self._memo[key] = (belief, best)
        return best

    def value(self, t: int, belief: CoordinatorBelief) -> float:
        if t >= self._model.horizon:
            return 0.0
        return self.decision(t, belief).value

    def reached(self, t: int) -> tuple[CoordinatorBelief, ...]:
        return tuple(belief for (stage, _), (belief, _) in self._memo.items() if stage == t)

    @property
    def stage_count(self) -> int:
        return len(self._memo)


@dataclass
class PlanningStrategy:
    """ψ_t: optimal prescription profile per reached coordinator belief, plus V_t."""

    model: TeamModel
    value: float
    initial: tuple[Branch, ...]
    planner: CommonInformationPlanner
    _belief_cache: dict[tuple[SharedPacket, ...], CoordinatorBelief] = field(
        default_factory=dict[tuple[SharedPacket, ...], CoordinatorBelief]
    )
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def prescribe(self, t: int, belief: CoordinatorBelief) -> PrescriptionProfile:
        return self.planner.decision(t, belief).profile

    def stage_value(self, t: int, belief: CoordinatorBelief) -> float:
        return self.planner.value(t, belief)

    def reached_beliefs(self, t: int) -> tuple[CoordinatorBelief, ...]:
        return self.planner.reached(t)

    def information_states(self, t: int) -> tuple[InformationState, ...]:
        return tuple(
            belief.information_state(len(self.model.states)) for belief in self.reached_beliefs(t)
        )

    def belief_after(self, packets: Sequence[SharedPacket]) -> CoordinatorBelief:
        """β_t as a pure function of the shared packets P_0..P_t."""
        history = tuple(packets)
        if not history:
            raise CoordinationError("belief needs at least the initial shared packet")
        with self._lock:
            cached = self._belief_cache.get(history)
        if cached is not None:
            return cached
        if len(history) == 1:
            belief = next(
                (branch.belief for branch in self.initial if branch.packet == history[0]), None
            )
            if belief is None:
                raise CoordinationError(f"initial packet {history[0]} is impossible")
        else:
            previous = self.belief_after(history[:-1])
            t = len(history) - 2
            belief = condition(self.model, previous, self.prescribe(t, previous), history[-1])
        with self._lock:
            self._belief_cache[history] = belief
        return belief


def solve_planning(
    model: TeamModel,
    *,
    profile_limit: int = 65_536,
    telemetry: TelemetryClient | None = None,
) -> PlanningStrategy:
    planner = CommonInformationPlanner(model, profile_limit=profile_limit)
    branches = initial_branches(model)
    with (telemetry or TelemetryClient.disabled()).timed(
        "coordination.plan.finish",
        horizon=model.horizon,
        members=model.member_count,
        delay=model.delay,
    ) as event:
        value = math.fsum(
            branch.probability * planner.value(0, branch.belief) for branch in branches
        )
        event.update(beliefs=planner.stage_count, value=value)
    LOGGER.info(
        "planning solved horizon=%s members=%s delay=%s value=%s beliefs=%s",
        model.horizon,
        model.member_count,
        model.delay,
        value,
        planner.stage_count,
    )
    return PlanningStrategy(model=model, value=value, initial=branches, planner=planner)


def belief_value(
    model: TeamModel,
    t: int,
    belief: CoordinatorBelief,
    *,
    profile_limit: int = 65_536,
) -> float:
    return CommonInformationPlanner(model, profile_limit=profile_limit).value(t, belief)


@dataclass(frozen=True)
class OpenLoopPlan:
    value: float
    decisions: tuple[tuple[int, ...], ...]


def open_loop_value(model: TeamModel, *, limit: int = 1_000_000) -> OpenLoopPlan:
    """Best fixed joint-decision sequence, ignoring every observation."""
    joint_count = len(model.joint_decisions)
    size = joint_count**model.horizon
    if size > limit:
        raise PlanningTooLargeError("too many open-loop sequences", size=size, bound=limit)
    costs = np.asarray(model.cost_table, dtype=np.float64)
    best_value = math.inf
    best_sequence: tuple[int, ...] = ()
    for sequence in itertools.product(range(joint_count), repeat=model.horizon):
        distribution = np.asarray(model.initial_distribution, dtype=np.float64)
        stage_costs: list[float] = []
        for joint in sequence:
            stage_costs.append(float(distribution @ costs[:, joint]))
            distribution = distribution @ model.transition[:, joint, :]
        total = math.fsum(stage_costs)
        if total < best_value - VALUE_TIE_TOLERANCE:
            best_value, best_sequence = total, sequence
    return OpenLoopPlan(
        value=best_value,
        decisions=tuple(model.joint_decisions[joint] for joint in best_sequence),
    )
