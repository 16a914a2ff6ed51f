from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from mobility.app.errors import TeamModelError
from mobility.app.services.coordination.model import TeamMember, TeamModel

DECISIONS: tuple[str, str] = ("wait", "go")
COLLISION = "collision"
MEMBER_NAMES: tuple[str, str] = ("cav", "hdv")
_STALL_OUTCOMES: tuple[tuple[bool, bool], ...] = (
    (False, False),
    (True, False),
    (False, True),
    (True, True),
)


@dataclass(frozen=True)
class IntersectionParams:
    """Two vehicles, one per approach, sharing a single merging cell.

    Cells 0..cells-1 are the approach, `cells` is the merging cell and `cells + 1`
    the goal beyond it.
    """

    lanes: int = 2
    cells: int = 2
    delay: int = 1
    hdv_noise: float = 0.0
    horizon: int | None = None
    collision_penalty: float | None = None
    stall_probability: float = 0.0
    start_jitter: bool = False

    def __post_init__(self) -> None:
        if self.lanes != 2:
            raise TeamModelError("the intersection scenario has exactly two approaches")
        if self.cells < 2:
            raise TeamModelError("cells per approach must be >= 2")
        if self.delay < 0:
            raise TeamModelError("delay must be >= 0")
        if not 0.0 <= self.hdv_noise <= 0.5:
            raise TeamModelError("hdv_noise must lie in [0, 0.5]")
        if not 0.0 <= self.stall_probability < 1.0:
            raise TeamModelError("stall_probability must lie in [0, 1)")
        if self.horizon is not None and self.horizon < 1:
            raise TeamModelError("horizon must be >= 1")
        if self.delay >= self.resolved_horizon:
            raise TeamModelError("delay must be below the horizon")
        if self.collision_penalty is not None and not self.collision_penalty > 0:
            raise TeamModelError("collision_penalty must be > 0")

    @property
    def resolved_horizon(self) -> int:
        return self.horizon if self.horizon is not None else self.cells + 3

    @property
    def resolved_penalty(self) -> float:
        if self.collision_penalty is not None:
            return self.collision_penalty
        return 1000.0 * self.resolved_horizon

    @property
    def merge(self) -> int:
        return self.cells

    @property
    def goal(self) -> int:
        return self.cells + 1


def _position_label(params: IntersectionParams, position: int) -> str:
    if position == params.merge:
        return "merge"
    if position == params.goal:
        return "goal"
    return f"c{position}"


def _disturbances(stall: float) -> tuple[tuple[str, ...], tuple[float, ...], tuple[tuple[bool, bool], ...]]:
    if stall == 0.0:
        return ("none",), (1.0,), ((False, False),)
    go = 1.0 - stall
    return (
        ("none", "stall-cav", "stall-hdv", "stall-both"),
        (go * go, stall * go, go * stall, stall * stall),
        _STALL_OUTCOMES,
    )


def build_intersection_scenario(params: IntersectionParams | None = None) -> TeamModel:
    resolved = params or IntersectionParams()
    positions = list(range(resolved.goal + 1))
    pairs = [
        pair
        for pair in itertools.product(positions, repeat=2)
        if pair != (resolved.merge, resolved.merge)
    ]
    labels = [
        f"{_position_label(resolved, cav)}|{_position_label(resolved, hdv)}" for cav, hdv in pairs
    ]
    collision = len(pairs)
    states = (*labels, COLLISION)
    index_of = {pair: index for index, pair in enumerate(pairs)}
    disturbance_labels, disturbance_probabilities, stalls = _disturbances(
        resolved.stall_probability
    )
    joint_decisions = list(itertools.product(range(len(DECISIONS)), repeat=2))
    penalty = resolved.resolved_penalty

    def _move(position: int, decision: int, stalled: bool) -> int:
        if DECISIONS[decision] == "go" and not stalled and position < resolved.goal:
            return position + 1
        return position

    dynamics: list[tuple[tuple[int, ...], ...]] = []
    costs: list[tuple[float, ...]] = []
    for pair in pairs:
        row: list[tuple[int, ...]] = []
        delay_cost = float(sum(1 for position in pair if position != resolved.goal))
        row_costs: list[float] = []
        for decisions in joint_decisions:
            successors: list[int] = []
            for stalled in stalls:
                moved = (
                    _move(pair[0], decisions[0], stalled[0]),
                    _move(pair[1], decisions[1], stalled[1]),
                )
                if moved == (resolved.merge, resolved.merge):
                    successors.append(collision)
                else:
                    successors.append(index_of[moved])
            row.append(tuple(successors))
            # the penalty is charged on the transition into the collision state
            entering = math.fsum(
                probability
                for successor, probability in zip(successors, disturbance_probabilities, strict=True)
                if successor == collision
            )
            row_costs.append(delay_cost + penalty * entering)
        dynamics.append(tuple(row))
        costs.append(tuple(row_costs))
    dynamics.append(tuple(tuple(collision for _ in stalls) for _ in joint_decisions))
    # both vehicles stay short of the goal after a crash
    costs.append(tuple(2.0 for _ in joint_decisions))

    observation_labels = tuple(_position_label(resolved, position) for position in positions)

    def _own_position(state: int, member: int) -> int:
        return resolved.merge if state == collision else pairs[state][member]

    def _slipped(position: int) -> int:
        return position + 1 if position < resolved.goal else position - 1

    members: list[TeamMember] = []
    for member, name in enumerate(MEMBER_NAMES):
        noisy = name == "hdv" and resolved.hdv_noise > 0
        if noisy:
            noise_labels: tuple[str, ...] = ("clean", "slip")
            noise_probabilities: tuple[float, ...] = (1.0 - resolved.hdv_noise, resolved.hdv_noise)
        else:
            noise_labels, noise_probabilities = ("clean",), (1.0,)
        table = tuple(
            (
                (_own_position(state, member), _slipped(_own_position(state, member)))
                if noisy
                else (_own_position(state, member),)
            )
            for state in range(len(states))
        )
        members.append(
            TeamMember(
                name=name,
                decisions=DECISIONS,
                observations=observation_labels,
                noise_labels=noise_labels,
                noise_probabilities=noise_probabilities,
                observation_table=table,
                delay=resolved.delay,
            )
        )

    initial = [0.0] * len(states)
    starts = [(0, 0)] if not resolved.start_jitter else list(itertools.product((0, 1), repeat=2))
    for start in starts:
        initial[index_of[start]] = 1.0 / len(starts)

    return TeamModel(
        states=states,
        members=tuple(members),
        horizon=resolved.resolved_horizon,
        disturbance_labels=disturbance_labels,
        disturbance_probabilities=disturbance_probabilities,
        dynamics_table=tuple(dynamics),
        cost_table=tuple(costs),
        initial_distribution=tuple(initial),
        failure_states=frozenset({collision}),
    )
