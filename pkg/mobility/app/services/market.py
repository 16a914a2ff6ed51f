from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from mobility.app.errors import InfeasibleServiceError, ScenarioValidationError
from mobility.app.services.network import (
    MobilityService,
    Preferences,
    Scenario,
    Traveler,
    base_travel_time,
    feasible_services,
)

MONEY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PlannerConfig:
    omega1: float = 1.0
    omega2: float = 1.0
    equity_bound: float | None = None
    co_traveler_penalty: float = 1.0
    congestion_slopes: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.omega1 < 0 or self.omega2 < 0:
            raise ScenarioValidationError("planner weights omega1, omega2 must be >= 0")
        if not self.omega1 + self.omega2 > 0:
            raise ScenarioValidationError("planner weights must satisfy omega1 + omega2 > 0")
        if self.equity_bound is not None and not 0.0 <= self.equity_bound <= 1.0:
            raise ScenarioValidationError("equity_bound must lie in [0, 1] or be disabled")
        if self.co_traveler_penalty < 0:
            raise ScenarioValidationError("co_traveler_penalty must be >= 0")
        for service_id, slope in self.congestion_slopes:
            if slope < 0:
                raise ScenarioValidationError(
                    f"congestion slope override for service {service_id} must be >= 0"
                )

    def slope_for(self, service: MobilityService) -> float:
        return dict(self.congestion_slopes).get(service.service_id, service.congestion_slope)


@dataclass(frozen=True)
class Assignment:
    """Exactly one service per traveler of a subclass, stored as the chosen service ids.

    `entries` exposes the equivalent binary traveler x service matrix.
    """

    traveler_ids: tuple[int, ...]
    service_ids: tuple[int, ...]
    choices: tuple[int, ...]
    fallback_service_id: int | None = None

    def __post_init__(self) -> None:
        if len(self.choices) != len(self.traveler_ids):
            raise ScenarioValidationError("assignment needs exactly one service per traveler")
        if len(set(self.traveler_ids)) != len(self.traveler_ids):
            raise ScenarioValidationError("assignment traveler ids must be unique")
        known = set(self.service_ids)
        for traveler_id, service_id in zip(self.traveler_ids, self.choices, strict=True):
            if service_id not in known:
                raise ScenarioValidationError(
                    f"traveler {traveler_id} assigned to unknown service {service_id}"
                )

    @classmethod
    def from_entries(
        cls,
        traveler_ids: Sequence[int],
        service_ids: Sequence[int],
        entries: Sequence[Sequence[int]],
        *,
        fallback_service_id: int | None = None,
    ) -> Assignment:
        choices: list[int] = []
        for traveler_id, row in zip(traveler_ids, entries, strict=True):
            if len(row) != len(service_ids) or any(value not in (0, 1) for value in row):
                raise ScenarioValidationError(f"traveler {traveler_id}: row must be binary")
            if sum(row) != 1:
                raise ScenarioValidationError(
                    f"traveler {traveler_id}: row sum must be exactly 1, got {sum(row)}"
                )
            choices.append(service_ids[list(row).index(1)])
        return cls(
            traveler_ids=tuple(traveler_ids),
            service_ids=tuple(service_ids),
            choices=tuple(choices),
            fallback_service_id=fallback_service_id,
        )

    @property
    def entries(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(1 if service_id == choice else 0 for service_id in self.service_ids)
            for choice in self.choices
        )

    def service_of(self, traveler_id: int) -> int:
        try:
            return self.choices[self.traveler_ids.index(traveler_id)]
        except ValueError as exc:
            raise ScenarioValidationError(
                f"traveler {traveler_id} is not part of this assignment"
            ) from exc

    def load(self, service_id: int) -> int:
        return sum(1 for choice in self.choices if choice == service_id)


def build_assignment(
    traveler_ids: Sequence[int],
    choices: Sequence[int],
    scenario: Scenario,
) -> Assignment:
    return Assignment(
        traveler_ids=tuple(traveler_ids),
        service_ids=scenario.network.service_ids,
        choices=tuple(choices),
        fallback_service_id=scenario.network.fallback.service_id,
    )


@dataclass(frozen=True)
class TravelerOutcome:
    traveler_id: int
    service_id: int
    co_travelers: int
    experienced_travel_time: float
    inconvenience: float
    valuation: float
    operating_cost: float
    payment: float
    utility: float


@dataclass(frozen=True)
class MarketOutcome:
    assignment: Assignment
    travelers: tuple[TravelerOutcome, ...]
    service_costs: tuple[tuple[int, float], ...]
    objective: float
    welfare: float

    def traveler(self, traveler_id: int) -> TravelerOutcome:
        for outcome in self.travelers:
            if outcome.traveler_id == traveler_id:
                return outcome
        raise ScenarioValidationError(f"traveler {traveler_id} is not part of this outcome")

    @property
    def inconveniences(self) -> tuple[float, ...]:
        return tuple(outcome.inconvenience for outcome in self.travelers)


def co_travelers(assignment: Assignment, traveler_id: int) -> int:
    service_id = assignment.service_of(traveler_id)
    if service_id == assignment.fallback_service_id:
        return 0
    return assignment.load(service_id) - 1


def congested_travel_time(base: float, slope: float, capacity: int, psi: int) -> float:
    return base * (1.0 + slope * psi / capacity)


def experienced_travel_time(
    assignment: Assignment,
    traveler_id: int,
    scenario: Scenario,
) -> float:
    traveler = scenario.traveler(traveler_id)
    service_id = assignment.service_of(traveler_id)
    if service_id not in feasible_services(traveler, scenario.network):
        raise InfeasibleServiceError(
            f"service {service_id} is infeasible for traveler {traveler_id}"
        )
    service = scenario.network.service(service_id)
    base = base_travel_time(traveler, scenario.network, service_id)
    return congested_travel_time(
        base,
        scenario.planner.slope_for(service),
        service.capacity,
        co_travelers(assignment, traveler_id),
    )


def inconvenience(
    preferences: Preferences,
    v_bar: float,
    theta_tilde: float,
    psi: int,
    service_id: int,
    *,
    co_traveler_penalty: float,
) -> float:
    delay = preferences.time_weight(service_id) * max(
        0.0, theta_tilde - preferences.preferred_travel_time
    )
    crowding = co_traveler_penalty * max(0, psi - preferences.co_traveler_limit(service_id))
    return min(v_bar, delay + crowding)


def valuation(traveler: Traveler, phi: float) -> float:
    v_bar = traveler.max_willingness_to_pay
    if phi < -MONEY_TOLERANCE or phi > v_bar + MONEY_TOLERANCE:
        raise ScenarioValidationError(
            f"traveler {traveler.traveler_id}: inconvenience {phi} outside [0, {v_bar}]"
        )
    return v_bar - min(max(phi, 0.0), v_bar)


def discount_valuation(traveler: Traveler) -> float:
    return traveler.discount_rate * traveler.max_willingness_to_pay


def operating_cost(service_id: int, assignment: Assignment, scenario: Scenario) -> float:
    service = scenario.network.service(service_id)
    return math.fsum(
        scenario.traveler(traveler_id).operating_cost(service)
        for traveler_id, choice in zip(assignment.traveler_ids, assignment.choices, strict=True)
        if choice == service_id
    )


def planner_objective(
    inconveniences: Sequence[float],
    traveler_costs: Sequence[float],
    config: PlannerConfig,
) -> float:
    """J_1 = ω₁Σφ + ω₂Σr; exactly-rounded sums keep it independent of traveler order."""
    return config.omega1 * math.fsum(inconveniences) + config.omega2 * math.fsum(traveler_costs)


def gini_coefficient(values: Sequence[float]) -> float:
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        return 0.0
    total = float(array.sum())
    if total <= 0.0:
        return 0.0
    differences = float(np.abs(array[:, None] - array[None, :]).sum())
    return differences / (2.0 * array.size * total)


def equity_gini(outcome: MarketOutcome) -> float:
    return gini_coefficient(outcome.inconveniences)


def satisfies_equity(inconveniences: Sequence[float], config: PlannerConfig) -> bool:
    if config.equity_bound is None:
        return True
    return gini_coefficient(inconveniences) <= config.equity_bound + MONEY_TOLERANCE


def evaluate_outcome(
    assignment: Assignment,
    payments: Mapping[int, float],
    scenario: Scenario,
) -> MarketOutcome:
    config = scenario.planner
    rows: list[TravelerOutcome] = []
    for traveler_id, service_id in zip(
        assignment.traveler_ids, assignment.choices, strict=True
    ):
        traveler = scenario.traveler(traveler_id)
        service = scenario.network.service(service_id)
        psi = co_travelers(assignment, traveler_id)
        theta_tilde = experienced_travel_time(assignment, traveler_id, scenario)
        phi = inconvenience(
            traveler.preferences,
            traveler.max_willingness_to_pay,
            theta_tilde,
            psi,
            service_id,
            co_traveler_penalty=config.co_traveler_penalty,
        )
        value = valuation(traveler, phi)
        payment = float(payments.get(traveler_id, 0.0))
        rows.append(
            TravelerOutcome(
                traveler_id=traveler_id,
                service_id=service_id,
                co_travelers=psi,
                experienced_travel_time=theta_tilde,
                inconvenience=phi,
                valuation=value,
                operating_cost=traveler.operating_cost(service),
                payment=payment,
                utility=value - payment,
            )
        )
    service_costs = tuple(
        (service_id, operating_cost(service_id, assignment, scenario))
        for service_id in assignment.service_ids
    )
    objective = planner_objective(
        [row.inconvenience for row in rows],
        [row.operating_cost for row in rows],
        config,
    )
    welfare = math.fsum(row.valuation for row in rows) - math.fsum(
        cost for _, cost in service_costs
    )
    return MarketOutcome(
        assignment=assignment,
        travelers=tuple(rows),
        service_costs=service_costs,
        objective=objective,
        welfare=welfare,
    )
