from __future__ import annotations

from typing import Any

import numpy as np
import pytest

from mobility.app.errors import CoordinationError, TeamModelError
from mobility.app.services.coordination.information import CommonInfo, PrivateInfo
from mobility.app.services.coordination.intersection import (
    COLLISION,
    IntersectionParams,
    build_intersection_scenario,
)
from mobility.app.services.coordination.model import observe, step
from mobility.app.services.coordination.planning import (
    Prescription,
    open_loop_value,
    solve_planning,
)
from mobility.app.services.coordination.simulation import run_episode, simulate_team

WAIT, GO = 0, 1


def _drive(plan: list[tuple[int, int]]) -> tuple[float, bool]:
    model = build_intersection_scenario()
    state = model.state_index("c0|c0")
    total = 0.0
    for decisions in plan:
        state, cost = step(model, state, decisions, 0)
        total += cost
    return total, state == model.state_index(COLLISION)


def test_default_scenario_layout() -> None:
    model = build_intersection_scenario()

    # four positions per vehicle, minus the shared merging cell, plus the collision sink
    assert len(model.states) == 16
    assert model.horizon == 5
    assert model.delay == 1
    both_go = model.joint_index((GO, GO))
    assert model.cost_table[model.state_index("c1|c1")][both_go] == pytest.approx(2.0 + 5000.0)
    assert model.cost_table[model.state_index("c1|c1")][model.joint_index((GO, WAIT))] == 2.0
    assert set(model.cost_table[model.state_index(COLLISION)]) == {2.0}
    assert [member.name for member in model.members] == ["cav", "hdv"]


def test_one_vehicle_yielding_once_avoids_collision() -> None:
    total, collided = _drive([(GO, GO), (GO, WAIT), (GO, GO), (GO, GO), (WAIT, WAIT)])

    assert not collided
    assert total == pytest.approx(7.0)


def test_entering_the_merge_together_collides() -> None:
    total, collided = _drive([(GO, GO), (GO, GO), (WAIT, WAIT)])

    assert collided
    # penalty on entry, then both vehicles sit short of the goal
    assert total == pytest.approx(2.0 + (2.0 + 5000.0) + 2.0)


def test_collision_on_the_last_decision_is_charged() -> None:
    model = build_intersection_scenario(IntersectionParams(horizon=2))

    total, collided = _drive([(GO, GO), (GO, GO)])

    assert collided
    assert total == pytest.approx(2.0 + 2.0 + 5000.0)
    # with two decisions the crash can only happen on the final one
    both_go = model.joint_index((GO, GO))
    assert model.cost_table[model.state_index("c1|c1")][both_go] == pytest.approx(2.0 + 2000.0)
    strategy = solve_planning(model)
    assert strategy.value == pytest.approx(4.0)
    assert simulate_team(model, strategy, 50, seed=0).failure_episodes == 0


def test_stalls_scale_the_expected_collision_charge() -> None:
    model = build_intersection_scenario(IntersectionParams(stall_probability=0.1))
    both_go = model.joint_index((GO, GO))

    # only the outcome where neither vehicle stalls puts both in the merge cell
    assert model.cost_table[model.state_index("c1|c1")][both_go] == pytest.approx(
        2.0 + 0.81 * 5000.0
    )


def test_planner_value_matches_best_joint_sequence() -> None:
    model = build_intersection_scenario()

    strategy = solve_planning(model)

    # deterministic dynamics from a known start: every policy is one joint sequence
    assert strategy.value == pytest.approx(open_loop_value(model).value, abs=1e-9)
    assert strategy.value == pytest.approx(7.0, abs=1e-9)


def test_optimal_strategy_never_collides() -> None:
    model = build_intersection_scenario()
    strategy = solve_planning(model)

    result = simulate_team(model, strategy, 10_000, seed=7)

    assert result.failure_episodes == 0
    assert result.mean_cost == pytest.approx(strategy.value, abs=1e-9)
    assert result.stderr == pytest.approx(0.0, abs=1e-9)


def test_jittered_starts_never_collide() -> None:
    model = build_intersection_scenario(IntersectionParams(start_jitter=True))
    strategy = solve_planning(model)

    result = simulate_team(model, strategy, 10_000, seed=11)

    assert result.failure_episodes == 0
    assert result.mean_cost == pytest.approx(strategy.value, abs=5 * result.stderr + 1e-9)


def test_hdv_noise_flips_at_the_configured_rate() -> None:
    model = build_intersection_scenario(IntersectionParams(hdv_noise=0.1))
    state = model.state_index("c0|c1")
    rng = np.random.default_rng(3)

    readings = np.asarray([observe(model, state, 1, rng) for _ in range(100_000)])
    cav = {observe(model, state, 0, rng) for _ in range(100)}

    assert float(np.mean(readings != 1)) == pytest.approx(0.1, abs=0.01)
    assert set(readings.tolist()) == {1, 2}
    assert cav == {0}


def test_noisy_scenario_still_avoids_collisions() -> None:
    model = build_intersection_scenario(IntersectionParams(hdv_noise=0.1))
    strategy = solve_planning(model)

    result = simulate_team(model, strategy, 2_000, seed=5, workers=4)

    assert result.failure_episodes == 0


def test_members_agree_on_beliefs_every_step() -> None:
    model = build_intersection_scenario(IntersectionParams(hdv_noise=0.2, stall_probability=0.1))
    strategy = solve_planning(model)

    for index in range(200):
        # raises on disagreement or on data outside a member's window
        record = run_episode(model, strategy, index, 13, debug_checks=True, keep_steps=True)
        assert len(record.steps) == model.horizon


def test_simulation_is_reproducible_across_workers() -> None:
    model = build_intersection_scenario(IntersectionParams(stall_probability=0.2))
    strategy = solve_planning(model)

    serial = simulate_team(model, strategy, 300, seed=21)
    threaded = simulate_team(model, strategy, 300, seed=21, workers=4)

    assert threaded.costs == serial.costs
    assert threaded.mean_cost == serial.mean_cost


def test_recorded_trajectories_cover_every_step() -> None:
    model = build_intersection_scenario()
    strategy = solve_planning(model)

    result = simulate_team(model, strategy, 3, seed=1, record_trajectories=True)

    assert [episode.index for episode in result.trajectories] == [0, 1, 2]
    steps = result.trajectories[0].steps
    assert [entry.t for entry in steps] == list(range(model.horizon))
    assert sum(entry.cost for entry in steps) == pytest.approx(result.costs[0])


def test_simulation_rejects_foreign_strategy() -> None:
    model = build_intersection_scenario()
    strategy = solve_planning(build_intersection_scenario(IntersectionParams(delay=0)))

    with pytest.raises(CoordinationError, match="different team model"):
        simulate_team(model, strategy, 1, seed=0)
    with pytest.raises(CoordinationError):
        simulate_team(model, solve_planning(model), 0, seed=0)


@pytest.mark.parametrize(
    "params",
    [
        {"lanes": 3},
        {"cells": 1},
        {"hdv_noise": 0.7},
        {"delay": 5},
        {"stall_probability": 1.0},
    ],
)
def test_invalid_intersection_parameters(params: dict[str, Any]) -> None:
    with pytest.raises(TeamModelError):
        IntersectionParams(**params)


class _RecordingRefiner:
    def __init__(self) -> None:
        self.calls: list[tuple[int, int]] = []
        self.window_sizes: set[tuple[int, int]] = set()

    def refine(
        self,
        common: CommonInfo,
        prescription: Prescription,
        private: PrivateInfo,
    ) -> Prescription:
        self.calls.append((common.steps, prescription.member))
        self.window_sizes.add((len(private.observations), len(private.decisions)))
        return prescription


def test_learning_hook_sees_every_decision_and_identity_keeps_costs() -> None:
    model = build_intersection_scenario(IntersectionParams(hdv_noise=0.1, stall_probability=0.1))
    strategy = solve_planning(model)
    refiner = _RecordingRefiner()

    baseline = simulate_team(model, strategy, 40, seed=9)
    refined = simulate_team(model, strategy, 40, seed=9, learning=refiner)

    assert refined.costs == baseline.costs
    assert len(refiner.calls) == 40 * model.horizon * model.member_count
    assert {member for _, member in refiner.calls} == {0, 1}
    # one packet per step, received before deciding
    assert sorted({steps for steps, _ in refiner.calls}) == list(range(1, model.horizon + 1))
    # delay 1: only the current observation is private, no decisions are held back
    assert refiner.window_sizes == {(1, 0)}
