from __future__ import annotations

import heapq
import itertools
import logging
import math
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

from mobility.app.errors import (
    InstanceTooLargeError,
    ScenarioValidationError,
    SubclassSolveError,
)
from mobility.app.services.market import (
    MONEY_TOLERANCE,
    Assignment,
    PlannerConfig,
    congested_travel_time,
    inconvenience,
    planner_objective,
    satisfies_equity,
)
from mobility.app.services.network import (
    Preferences,
    Scenario,
    Subclass,
    base_travel_time,
    feasible_services,
    partition_subclasses,
)
from mobility.app.telemetry import TelemetryClient

LOGGER = logging.getLogger("mobility.solver")

SolveStatus = Literal["optimal", "infeasible"]


@dataclass(frozen=True)
class TravelerOption:
    service_id: int
    base_time: float
    slope: float
    capacity: int
    operating_cost: float
    shared: bool


@dataclass(frozen=True)
class TravelerProfile:
    traveler_id: int
    preferences: Preferences
    max_willingness_to_pay: float
    options: tuple[TravelerOption, ...]


@dataclass(frozen=True)
class AssignmentEvaluation:
    choices: tuple[int, ...]
    objective: float
    inconveniences: tuple[float, ...]
    operating_costs: tuple[float, ...]


@dataclass(frozen=True)
class SubclassProblem:
    """Everything the search needs about one subclass, precomputed once.

    Options per traveler are ordered by service id, and travelers by id, so the
    enumeration order is the lexicographic assignment order.
    """

    subclass_index: int
    travelers: tuple[TravelerProfile, ...]
    service_ids: tuple[int, ...]
    fallback_service_id: int
    capacities: tuple[tuple[int, int], ...]
    config: PlannerConfig

    @property
    def traveler_ids(self) -> tuple[int, ...]:
        return tuple(profile.traveler_id for profile in self.travelers)

    @property
    def size(self) -> int:
        return math.prod(len(profile.options) for profile in self.travelers)

    @cached_property
    def _capacity_map(self) -> dict[int, int]:
        return dict(self.capacities)

    @cached_property
    def alone_costs(self) -> tuple[float, ...]:
        return tuple(
            min(self._weighted_cost(position, option, 0) for option in profile.options)
            for position, profile in enumerate(self.travelers)
        )

    def position_of(self, traveler_id: int) -> int:
        return self.traveler_ids.index(traveler_id)

    def option(self, position: int, service_id: int) -> TravelerOption:
        for option in self.travelers[position].options:
            if option.service_id == service_id:
                return option
        raise ScenarioValidationError(
            f"service {service_id} is infeasible for traveler "
            f"{self.travelers[position].traveler_id}"
        )

    def terms(self, position: int, option: TravelerOption, psi: int) -> tuple[float, float]:
        """(φ, r) for one traveler on one option with `psi` co-travelers."""
        profile = self.travelers[position]
        effective_psi = psi if option.shared else 0
        theta_tilde = congested_travel_time(
            option.base_time, option.slope, option.capacity, effective_psi
        )
        phi = inconvenience(
            profile.preferences,
            profile.max_willingness_to_pay,
            theta_tilde,
            effective_psi,
            option.service_id,
            co_traveler_penalty=self.config.co_traveler_penalty,
        )
        return phi, option.operating_cost

    def _weighted_cost(self, position: int, option: TravelerOption, psi: int) -> float:
        phi, cost = self.terms(position, option, psi)
        return self.config.omega1 * phi + self.config.omega2 * cost

    def _loads(self, choices: Sequence[int]) -> dict[int, int]:
        loads: dict[int, int] = {}
        for service_id in choices:
            loads[service_id] = loads.get(service_id, 0) + 1
        return loads

    def within_capacity(self, choices: Sequence[int]) -> bool:
        return all(
            load <= self._capacity_map[service_id]
            for service_id, load in self._loads(choices).items()
        )

    def evaluate(self, choices: Sequence[int]) -> AssignmentEvaluation | None:
        """Full objective of a complete assignment, or None when a capacity is exceeded."""
        if len(choices) != len(self.travelers) or not self.within_capacity(choices):
            return None
        loads = self._loads(choices)
        phis: list[float] = []
        costs: list[float] = []
        for position, service_id in enumerate(choices):
            phi, cost = self.terms(position, self.option(position, service_id), loads[service_id] - 1)
            phis.append(phi)
            costs.append(cost)
        return AssignmentEvaluation(
            choices=tuple(choices),
            objective=planner_objective(phis, costs, self.config),
            inconveniences=tuple(phis),
            operating_costs=tuple(costs),
        )

    def lower_bound(self, prefix: Sequence[int]) -> float:
        loads = self._loads(prefix)
        fixed = sum(
            self._weighted_cost(position, self.option(position, service_id), loads[service_id] - 1)
            for position, service_id in enumerate(prefix)
        )
        return fixed + sum(self.alone_costs[len(prefix) :])

    def with_preferences(self, traveler_id: int, preferences: Preferences) -> SubclassProblem:
        position = self.position_of(traveler_id)
        profiles = list(self.travelers)
        profiles[position] = TravelerProfile(
            traveler_id=traveler_id,
            preferences=preferences,
            max_willingness_to_pay=profiles[position].max_willingness_to_pay,
            options=profiles[position].options,
        )
        return SubclassProblem(
            subclass_index=self.subclass_index,
            travelers=tuple(profiles),
            service_ids=self.service_ids,
            fallback_service_id=self.fallback_service_id,
            capacities=self.capacities,
            config=self.config,
        )

    def without(self, traveler_id: int) -> SubclassProblem:
        return SubclassProblem(
            subclass_index=self.subclass_index,
            travelers=tuple(p for p in self.travelers if p.traveler_id != traveler_id),
            service_ids=self.service_ids,
            fallback_service_id=self.fallback_service_id,
            capacities=self.capacities,
            config=self.config,
        )

    def assignment(self, choices: Sequence[int]) -> Assignment:
        return Assignment(
            traveler_ids=self.traveler_ids,
            service_ids=self.service_ids,
            choices=tuple(choices),
            fallback_service_id=self.fallback_service_id,
        )


def build_subclass_problem(
    traveler_ids: Sequence[int] | Subclass,
    scenario: Scenario,
    config: PlannerConfig | None = None,
    *,
    subclass_index: int | None = None,
    preferences: Mapping[int, Preferences] | None = None,
) -> SubclassProblem:
    if isinstance(traveler_ids, Subclass):
        index = traveler_ids.index if subclass_index is None else subclass_index
        ids = traveler_ids.traveler_ids
    else:
        index = subclass_index or 0
        ids = tuple(traveler_ids)
    if not ids:
        raise ScenarioValidationError("subclass must contain at least one traveler")
    resolved = config or scenario.planner
    network = scenario.network
    overrides = preferences or {}
    travelers = [scenario.traveler(traveler_id) for traveler_id in sorted(ids)]
    od_pairs = {(traveler.origin, traveler.destination) for traveler in travelers}
    if len(od_pairs) != 1:
        raise ScenarioValidationError(
            f"subclass {index}: travelers must share one origin-destination pair"
        )
    profiles: list[TravelerProfile] = []
    for traveler in travelers:
        options = tuple(
            TravelerOption(
                service_id=service_id,
                base_time=base_travel_time(traveler, network, service_id),
                slope=resolved.slope_for(network.service(service_id)),
                capacity=network.service(service_id).capacity,
                operating_cost=traveler.operating_cost(network.service(service_id)),
                shared=not network.service(service_id).is_fallback,
            )
            for service_id in feasible_services(traveler, network)
        )
        profiles.append(
            TravelerProfile(
                traveler_id=traveler.traveler_id,
                preferences=overrides.get(traveler.traveler_id, traveler.preferences),
                max_willingness_to_pay=traveler.max_willingness_to_pay,
                options=options,
            )
        )
    return SubclassProblem(
        subclass_index=index,
        travelers=tuple(profiles),
        service_ids=network.service_ids,
        fallback_service_id=network.fallback.service_id,
        capacities=tuple((service.service_id, service.capacity) for service in network.services),
        config=resolved,
    )


@dataclass(frozen=True)
class SearchStatistics:
    nodes_expanded: int = 0
    nodes_pruned: int = 0
    leaves_evaluated: int = 0
    root_lower_bound: float = 0.0
    # filled only when the search runs with record_bounds
    expanded_bounds: tuple[float, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class SolveResult:
    subclass_index: int
    traveler_ids: tuple[int, ...]
    status: SolveStatus
    assignment: Assignment | None
    objective: float | None
    evaluation: AssignmentEvaluation | None = field(default=None, compare=False)
    statistics: SearchStatistics = field(default_factory=SearchStatistics)


def assignment_lower_bound(problem: SubclassProblem, prefix: Sequence[int]) -> float:
    return problem.lower_bound(prefix)


def _select_optimum(
    problem: SubclassProblem,
    candidates: list[AssignmentEvaluation],
    statistics: SearchStatistics,
) -> SolveResult:
    if not candidates:
        return SolveResult(
            subclass_index=problem.subclass_index,
            traveler_ids=problem.traveler_ids,
            status="infeasible",
            assignment=None,
            objective=None,
            statistics=statistics,
        )
    minimum = min(candidate.objective for candidate in candidates)
    best = min(
        (c for c in candidates if c.objective <= minimum + MONEY_TOLERANCE),
        key=lambda candidate: candidate.choices,
    )
    return SolveResult(
        subclass_index=problem.subclass_index,
        traveler_ids=problem.traveler_ids,
        status="optimal",
        assignment=problem.assignment(best.choices),
        objective=best.objective,
        evaluation=best,
        statistics=statistics,
    )


def solve_problem(problem: SubclassProblem, *, record_bounds: bool = False) -> SolveResult:
    """Best-first branch and bound over traveler-order prefixes.

    With `record_bounds` the lower bound of every expanded node is kept in the statistics.
    """
    count = len(problem.travelers)
    root_bound = problem.lower_bound(())
    queue: list[tuple[float, tuple[int, ...]]] = [(root_bound, ())]
    incumbent = math.inf
    candidates: list[AssignmentEvaluation] = []
    expanded = pruned = leaves = 0
    expanded_bounds: list[float] = []

    while queue:
        bound, prefix = heapq.heappop(queue)
        if bound > incumbent + MONEY_TOLERANCE:
            pruned += 1 + len(queue)
            break
        expanded += 1
        if record_bounds:
            expanded_bounds.append(bound)
        position = len(prefix)
        for option in problem.travelers[position].options:
            child = (*prefix, option.service_id)
            if not problem.within_capacity(child):
                pruned += 1
                continue
            if len(child) == count:
                leaves += 1
                evaluation = problem.evaluate(child)
                if evaluation is None or not satisfies_equity(
                    evaluation.inconveniences, problem.config
                ):
                    continue
                if evaluation.objective <= incumbent + MONEY_TOLERANCE:
                    candidates.append(evaluation)
                    incumbent = min(incumbent, evaluation.objective)
                continue
            child_bound = problem.lower_bound(child)
            if child_bound > incumbent + MONEY_TOLERANCE:
                pruned += 1
                continue
            heapq.heappush(queue, (child_bound, child))

    return _select_optimum(
        problem,
        candidates,
        SearchStatistics(
            nodes_expanded=expanded,
            nodes_pruned=pruned,
            leaves_evaluated=leaves,
            root_lower_bound=root_bound,
            expanded_bounds=tuple(expanded_bounds),
        ),
    )


def brute_force_problem(problem: SubclassProblem, *, limit: int = 1_000_000) -> SolveResult:
    size = problem.size
    if size > limit:
        raise InstanceTooLargeError(
            f"subclass {problem.subclass_index} has too many candidate assignments",
            size=size,
            bound=limit,
        )
    candidates: list[AssignmentEvaluation] = []
    leaves = 0
    for choices in itertools.product(
        *[[option.service_id for option in profile.options] for profile in problem.travelers]
    ):
        leaves += 1
        evaluation = problem.evaluate(choices)
        if evaluation is None or not satisfies_equity(evaluation.inconveniences, problem.config):
            continue
        candidates.append(evaluation)
    return _select_optimum(
        problem,
        candidates,
        SearchStatistics(leaves_evaluated=leaves, root_lower_bound=problem.lower_bound(())),
    )


def solve_subclass(
    subclass: Sequence[int] | Subclass,
    scenario: Scenario,
    config: PlannerConfig | None = None,
    *,
    telemetry: TelemetryClient | None = None,
) -> SolveResult:
    problem = build_subclass_problem(subclass, scenario, config)
    with (telemetry or TelemetryClient.disabled()).timed("solver.subclass.finish") as event:
        result = solve_problem(problem)
        event.update(
            subclass_index=result.subclass_index,
            status=result.status,
            travelers=len(result.traveler_ids),
            nodes_expanded=result.statistics.nodes_expanded,
        )
    LOGGER.debug(
        "subclass solved index=%s status=%s objective=%s nodes=%s pruned=%s",
        result.subclass_index,
        result.status,
        result.objective,
        result.statistics.nodes_expanded,
        result.statistics.nodes_pruned,
    )
    return result


def brute_force_solve(
    subclass: Sequence[int] | Subclass,
    scenario: Scenario,
    config: PlannerConfig | None = None,
    *,
    limit: int = 1_000_000,
) -> SolveResult:
    return brute_force_problem(build_subclass_problem(subclass, scenario, config), limit=limit)


def solve_all(
    scenario: Scenario,
    config: PlannerConfig | None = None,
    *,
    workers: int = 1,
    telemetry: TelemetryClient | None = None,
) -> tuple[SolveResult, ...]:
    partition = partition_subclasses(scenario.travelers)

    def _solve(subclass: Subclass) -> SolveResult | Exception:
        try:
            return solve_subclass(subclass, scenario, config, telemetry=telemetry)
        except Exception as exc:
            return exc

    if workers > 1 and partition.count > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(_solve, partition.subclasses))
    else:
        outcomes = [_solve(subclass) for subclass in partition.subclasses]

    failures = [
        (subclass.index, subclass.origin, subclass.destination, outcome)
        for subclass, outcome in zip(partition.subclasses, outcomes, strict=True)
        if isinstance(outcome, Exception)
    ]
    if failures:
        raise SubclassSolveError(failures)
    results = tuple(outcome for outcome in outcomes if isinstance(outcome, SolveResult))
    LOGGER.info(
        "scenario solved subclasses=%s infeasible=%s workers=%s",
        len(results),
        sum(1 for result in results if result.status == "infeasible"),
        workers,
    )
    return results
