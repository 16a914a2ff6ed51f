from __future__ import annotations

import dataclasses

import pytest

from mobility.app.errors import InstanceTooLargeError
from mobility.app.services.market import PlannerConfig
from mobility.app.services.network import Scenario, partition_subclasses
from mobility.app.services.solver import (
    assignment_lower_bound,
    brute_force_problem,
    brute_force_solve,
    build_subclass_problem,
    solve_all,
    solve_problem,
    solve_subclass,
)
from tests.factories import line_network, make_traveler, random_scenario


@pytest.mark.parametrize("block", range(4))
def test_branch_and_bound_matches_exhaustive_search(block: int) -> None:
    for seed in range(block * 50, (block + 1) * 50):
        equity = 0.35 if seed % 4 == 0 else None
        scenario = random_scenario(seed, equity_bound=equity)
        ids = tuple(traveler.traveler_id for traveler in scenario.travelers)

        searched = solve_subclass(ids, scenario)
        oracle = brute_force_solve(ids, scenario)

        assert searched.status == oracle.status, seed
        if oracle.status == "optimal":
            assert searched.objective is not None and oracle.objective is not None
            assert searched.objective == pytest.approx(oracle.objective, abs=1e-9), seed
            assert searched.assignment == oracle.assignment, seed


def test_lower_bound_is_admissible_along_the_optimum() -> None:
    for seed in range(30):
        scenario = random_scenario(seed)
        problem = build_subclass_problem([t.traveler_id for t in scenario.travelers], scenario)
        result = solve_problem(problem)
        assert result.assignment is not None and result.objective is not None
        assert result.statistics.expanded_bounds == ()
        choices = result.assignment.choices
        for depth in range(len(choices) + 1):
            assert assignment_lower_bound(problem, choices[:depth]) <= result.objective + 1e-9
        assert result.statistics.root_lower_bound <= result.objective + 1e-9


def test_every_expanded_node_is_bounded_by_the_optimum() -> None:
    for seed in range(60):
        equity = 0.35 if seed % 3 == 0 else None
        scenario = random_scenario(seed, equity_bound=equity)
        problem = build_subclass_problem([t.traveler_id for t in scenario.travelers], scenario)
        result = solve_problem(problem, record_bounds=True)
        if result.objective is None:
            continue
        bounds = result.statistics.expanded_bounds
        assert len(bounds) == result.statistics.nodes_expanded > 0, seed
        assert bounds[0] == result.statistics.root_lower_bound
        assert max(bounds) <= result.objective + 1e-9, seed


def test_single_traveler_takes_cheapest_option() -> None:
    network = line_network([(1, 10.0, 2, 6.0, 0.0)], fallback_time=10.0, fallback_cost=4.0)
    scenario = Scenario(
        network=network,
        travelers=(make_traveler(1, preferred=10.0),),
        planner=PlannerConfig(),
    )

    result = solve_subclass((1,), scenario)
    oracle = brute_force_solve((1,), scenario)

    assert result.status == "optimal"
    assert result.assignment is not None
    assert result.assignment.choices == (0,)
    assert result.objective == pytest.approx(4.0)
    assert oracle.statistics.leaves_evaluated == 2


def test_capacity_one_tie_goes_to_lexicographically_smallest_assignment() -> None:
    network = line_network([(1, 10.0, 1, 3.0, 0.0)], fallback_time=10.0, fallback_cost=10.0)
    scenario = Scenario(
        network=network,
        travelers=(make_traveler(1), make_traveler(2)),
        planner=PlannerConfig(),
    )

    result = solve_subclass((1, 2), scenario)

    assert result.assignment is not None
    assert result.assignment.choices == (0, 1)
    assert result.objective == pytest.approx(13.0)
    assert brute_force_solve((1, 2), scenario).assignment == result.assignment


def test_zero_equity_bound_with_unequal_inconvenience_is_infeasible() -> None:
    network = line_network([], fallback_time=20.0)
    scenario = Scenario(
        network=network,
        travelers=(
            make_traveler(1, preferred=5.0, weights={0: 1.0}),
            make_traveler(2, preferred=30.0, weights={0: 1.0}),
        ),
        planner=PlannerConfig(equity_bound=0.0),
    )

    result = solve_subclass((1, 2), scenario)

    assert result.status == "infeasible"
    assert result.assignment is None
    assert brute_force_solve((1, 2), scenario).status == "infeasible"


def test_brute_force_refuses_oversized_instances() -> None:
    scenario = random_scenario(3)
    problem = build_subclass_problem([t.traveler_id for t in scenario.travelers], scenario)

    with pytest.raises(InstanceTooLargeError) as excinfo:
        brute_force_problem(problem, limit=1)

    assert excinfo.value.bound == 1
    assert excinfo.value.size == problem.size


def test_solve_all_returns_one_result_per_subclass_in_order() -> None:
    network = line_network([(1, 10.0, 2, 3.0, 0.2)])
    travelers = (
        make_traveler(1),
        make_traveler(2, origin="B", destination="A"),
        make_traveler(3),
    )
    scenario = Scenario(network=network, travelers=travelers, planner=PlannerConfig())

    results = solve_all(scenario)
    threaded = solve_all(scenario, workers=3)

    assert [result.subclass_index for result in results] == [0, 1]
    assert results[0].traveler_ids == (1, 3)
    assert results[1].traveler_ids == (2,)
    assert threaded == results


def test_single_subclass_solve_all_equals_solve_subclass() -> None:
    scenario = random_scenario(11)
    (subclass,) = partition_subclasses(scenario.travelers).subclasses

    assert solve_all(scenario) == (solve_subclass(subclass, scenario),)


def test_relabeling_travelers_keeps_the_objective() -> None:
    scenario = random_scenario(21, max_travelers=5)
    relabeled = Scenario(
        network=scenario.network,
        travelers=tuple(
            dataclasses.replace(traveler, traveler_id=100 - traveler.traveler_id)
            for traveler in scenario.travelers
        ),
        planner=scenario.planner,
    )

    original = solve_all(scenario)[0]
    permuted = solve_all(relabeled)[0]

    assert original.objective is not None and permuted.objective is not None
    assert permuted.objective == pytest.approx(original.objective, abs=1e-9)
