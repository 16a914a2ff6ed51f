from __future__ import annotations

import itertools
import math
from collections.abc import Callable

import numpy as np
import pytest

from mobility.app.errors import PlanningTooLargeError, TeamModelError
from mobility.app.services.coordination.intersection import IntersectionParams, build_intersection_scenario
from mobility.app.services.coordination.model import TeamMember, TeamModel
from mobility.app.services.coordination.planning import (
    CoordinatorBelief,
    PlanningStrategy,
    belief_value,
    initial_branches,
    open_loop_value,
    solve_planning,
)
from tests.factories import chain_model

History = tuple[int, ...]


def _policy_cost(model: TeamModel, policy: Callable[[History], int]) -> float:
    """Expected total cost of a single-member policy mapping its observation history to a decision."""
    member = model.members[0]
    total = 0.0

    def _walk(t: int, state: int, history: History, weight: float) -> None:
        nonlocal total
        for v, p_noise in enumerate(member.noise_probabilities):
            if p_noise == 0:
                continue
            seen = (*history, member.observation_table[state][v])
            decision = policy(seen)
            total += weight * p_noise * model.cost_table[state][decision]
            if t + 1 == model.horizon:
                continue
            for w, p_dist in enumerate(model.disturbance_probabilities):
                if p_dist == 0:
                    continue
                _walk(t + 1, model.dynamics_table[state][decision][w], seen, weight * p_noise * p_dist)

    for x0, p0 in enumerate(model.initial_distribution):
        if p0 > 0:
            _walk(0, x0, (), p0)
    return total


def _best_policy_cost(model: TeamModel) -> float:
    histories = [
        list(itertools.product(range(len(model.members[0].observations)), repeat=t + 1))
        for t in range(model.horizon)
    ]
    flat = [history for stage in histories for history in stage]
    best = math.inf
    for choices in itertools.product(range(2), repeat=len(flat)):
        table = dict(zip(flat, choices, strict=True))
        best = min(best, _policy_cost(model, table.__getitem__))
    return best


def _pomdp_value(model: TeamModel) -> float:
    """Backward induction on the posterior for a single member with immediate sharing."""
    costs = np.asarray(model.cost_table)
    kernel = model.observation_kernels[0]

    def _value(t: int, belief: np.ndarray) -> float:
        if t == model.horizon:
            return 0.0
        options = []
        for u in range(costs.shape[1]):
            expected = float(belief @ costs[:, u])
            if t + 1 < model.horizon:
                predicted = belief @ model.transition[:, u, :]
                for y in range(kernel.shape[1]):
                    joint = predicted * kernel[:, y]
                    mass = float(joint.sum())
                    if mass > 0:
                        expected += mass * _value(t + 1, joint / mass)
            options.append(expected)
        return min(options)

    prior = np.asarray(model.initial_distribution)
    value = 0.0
    for y in range(kernel.shape[1]):
        joint = prior * kernel[:, y]
        mass = float(joint.sum())
        if mass > 0:
            value += mass * _value(0, joint / mass)
    return value


def test_one_shot_problem_picks_the_best_decision_rule() -> None:
    model = chain_model(horizon=1, delay=0)

    strategy = solve_planning(model)

    assert strategy.value == pytest.approx(_best_policy_cost(model), abs=1e-9)
    assert strategy.value == pytest.approx(0.5 * 2.0 + 0.3 * 1.0, abs=1e-9)


@pytest.mark.parametrize("delay", [0, 1, 2])
def test_uninformative_observations_collapse_to_open_loop(delay: int) -> None:
    model = chain_model(horizon=3, delay=delay, flip=0.5)

    strategy = solve_planning(model)

    assert strategy.value == pytest.approx(open_loop_value(model).value, abs=1e-9)


@pytest.mark.parametrize("delay", [0, 1])
def test_value_matches_exhaustive_policy_search(delay: int) -> None:
    model = chain_model(horizon=3, delay=delay, flip=0.2, stay=0.4)

    strategy = solve_planning(model)

    assert strategy.value == pytest.approx(_best_policy_cost(model), abs=1e-9)


def test_immediate_sharing_matches_posterior_backward_induction() -> None:
    for flip, stay in [(0.1, 0.5), (0.3, 0.2), (0.0, 0.9)]:
        model = chain_model(horizon=4, delay=0, flip=flip, stay=stay)

        assert solve_planning(model).value == pytest.approx(_pomdp_value(model), abs=1e-9)


def test_information_never_hurts_against_open_loop() -> None:
    model = chain_model(horizon=4, delay=1, flip=0.1, stay=0.3)

    assert solve_planning(model).value <= open_loop_value(model).value + 1e-9


def test_value_is_concave_in_the_coordinator_belief() -> None:
    rng = np.random.default_rng(5)
    strategies = [
        solve_planning(chain_model(horizon=4, delay=1, flip=0.15, stay=0.4)),
        solve_planning(build_intersection_scenario(IntersectionParams(hdv_noise=0.1))),
    ]
    pairs: list[tuple[PlanningStrategy, int, CoordinatorBelief, CoordinatorBelief]] = []
    for strategy in strategies:
        pool = [
            (strategy, t, first, second)
            for t in range(max(strategy.model.horizon - 3, 0), strategy.model.horizon)
            for first, second in itertools.combinations(strategy.reached_beliefs(t), 2)
        ]
        pairs.extend(pool[int(index)] for index in rng.choice(len(pool), size=10, replace=False))

    for strategy, t, first, second in pairs:
        for weight in (0.25, 0.5, 0.75):
            lower = weight * strategy.stage_value(t, first) + (1.0 - weight) * strategy.stage_value(
                t, second
            )
            assert strategy.stage_value(t, first.mix(second, weight)) >= lower - 1e-9


def test_stage_values_come_from_the_planner() -> None:
    model = chain_model(horizon=3, delay=1)
    strategy = solve_planning(model)

    value = math.fsum(
        branch.probability * strategy.stage_value(0, branch.belief) for branch in strategy.initial
    )

    assert value == pytest.approx(strategy.value, abs=1e-12)
    assert sum(branch.probability for branch in initial_branches(model)) == pytest.approx(1.0)
    for state in strategy.information_states(1):
        assert sum(state.probabilities) == pytest.approx(1.0)
    for belief in strategy.reached_beliefs(1):
        assert belief_value(model, 1, belief) == pytest.approx(strategy.stage_value(1, belief), abs=1e-12)


def test_prescriptions_are_total_on_the_private_domain() -> None:
    model = chain_model(horizon=3, delay=2)
    strategy = solve_planning(model)

    for t in range(model.horizon):
        for belief in strategy.reached_beliefs(t):
            (prescription,) = strategy.prescribe(t, belief)
            for private in belief.private_domain(0, model.delay):
                assert prescription.decide(private) in (0, 1)


def test_oversized_planning_is_refused() -> None:
    model = chain_model(horizon=3, delay=1)

    with pytest.raises(PlanningTooLargeError) as excinfo:
        solve_planning(model, profile_limit=1)
    assert excinfo.value.bound == 1

    with pytest.raises(PlanningTooLargeError):
        open_loop_value(model, limit=3)


def test_planning_requires_uniform_delay() -> None:
    base = chain_model(horizon=3, delay=1)
    member = base.members[0]
    other = TeamMember(
        name="second",
        decisions=member.decisions,
        observations=member.observations,
        noise_labels=member.noise_labels,
        noise_probabilities=member.noise_probabilities,
        observation_table=member.observation_table,
        delay=2,
    )
    model = TeamModel(
        states=base.states,
        members=(member, other),
        horizon=base.horizon,
        disturbance_labels=base.disturbance_labels,
        disturbance_probabilities=base.disturbance_probabilities,
        dynamics_table=tuple(
            tuple(row[a] for a, _ in itertools.product(range(2), repeat=2)) for row in base.dynamics_table
        ),
        cost_table=tuple(
            tuple(row[a] for a, _ in itertools.product(range(2), repeat=2)) for row in base.cost_table
        ),
        initial_distribution=base.initial_distribution,
    )

    with pytest.raises(TeamModelError, match="uniform delay"):
        solve_planning(model)
