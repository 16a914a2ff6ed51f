from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, TypeVar

from pydantic import ValidationError

from mobility.app.errors import ScenarioParseError, ScenarioValidationError
from mobility.app.models.scenario_contracts import (
    LinkDocument,
    PlannerDocument,
    ScenarioDocument,
    ServiceDocument,
    TravelerDocument,
)
from mobility.app.repositories.common import atomic_write_text, canonical_json
from mobility.app.services.market import PlannerConfig
from mobility.app.services.network import (
    Link,
    MobilityService,
    Network,
    Preferences,
    Scenario,
    Traveler,
)

LOGGER = logging.getLogger("mobility.repositories.scenario")


def _service_key(raw: str, *, context: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ScenarioParseError(f"{context}: service key {raw!r} is not an integer id") from exc


V = TypeVar("V", int, float)


def _keyed(values: dict[str, V], *, context: str) -> dict[int, V]:
    return {_service_key(key, context=context): value for key, value in values.items()}


def scenario_from_document(document: ScenarioDocument) -> Scenario:
    network = Network(
        nodes=frozenset(document.nodes),
        links=tuple(
            Link(
                source=link.source,
                target=link.target,
                service_id=link.service,
                travel_time=link.travel_time,
            )
            for link in document.links
        ),
        services=tuple(
            MobilityService(
                service_id=service.id,
                name=service.name,
                capacity=service.capacity,
                per_traveler_cost=service.per_traveler_cost,
                congestion_slope=service.congestion_slope,
                is_fallback=service.is_fallback,
                default_travel_time=service.default_travel_time,
            )
            for service in document.services
        ),
    )
    travelers: list[Traveler] = []
    for raw in document.travelers:
        context = f"traveler {raw.id}"
        travelers.append(
            Traveler(
                traveler_id=raw.id,
                origin=raw.origin,
                destination=raw.destination,
                preferences=Preferences.build(
                    preferred_travel_time=raw.preferred_travel_time,
                    max_co_travelers=_keyed(raw.max_co_travelers, context=context),
                    value_of_time=_keyed(raw.value_of_time, context=context),
                ),
                max_willingness_to_pay=raw.max_willingness_to_pay,
                discount_rate=raw.discount_rate,
                operating_costs=tuple(
                    sorted(_keyed(raw.operating_costs or {}, context=context).items())
                ),
            )
        )
    planner = PlannerConfig(
        omega1=document.planner.omega1,
        omega2=document.planner.omega2,
        equity_bound=document.planner.equity_bound,
        co_traveler_penalty=document.planner.co_traveler_penalty,
        congestion_slopes=tuple(
            sorted(
                _keyed(document.planner.congestion_slopes or {}, context="planner").items()
            )
        ),
    )
    return Scenario(network=network, travelers=tuple(travelers), planner=planner)


def scenario_to_document(scenario: Scenario) -> ScenarioDocument:
    network = scenario.network
    planner = scenario.planner
    return ScenarioDocument(
        nodes=sorted(network.nodes),
        links=[
            LinkDocument(
                source=link.source,
                target=link.target,
                service=link.service_id,
                travel_time=link.travel_time,
            )
            for link in network.links
        ],
        services=[
            ServiceDocument(
                id=service.service_id,
                name=service.name,
                capacity=service.capacity,
                per_traveler_cost=service.per_traveler_cost,
                congestion_slope=service.congestion_slope,
                is_fallback=service.is_fallback,
                default_travel_time=service.default_travel_time,
            )
            for service in network.services
        ],
        travelers=[
            TravelerDocument(
                id=traveler.traveler_id,
                origin=traveler.origin,
                destination=traveler.destination,
                max_willingness_to_pay=traveler.max_willingness_to_pay,
                discount_rate=traveler.discount_rate,
                preferred_travel_time=traveler.preferences.preferred_travel_time,
                max_co_travelers={
                    str(key): value for key, value in traveler.preferences.max_co_travelers
                },
                value_of_time={
                    str(key): value for key, value in traveler.preferences.value_of_time
                },
                operating_costs=(
                    {str(key): value for key, value in traveler.operating_costs}
                    if traveler.operating_costs
                    else None
                ),
            )
            for traveler in scenario.travelers
        ],
        planner=PlannerDocument(
            omega1=planner.omega1,
            omega2=planner.omega2,
            equity_bound=planner.equity_bound,
            co_traveler_penalty=planner.co_traveler_penalty,
            congestion_slopes=(
                {str(key): value for key, value in planner.congestion_slopes}
                if planner.congestion_slopes
                else None
            ),
        ),
    )


def parse_scenario(raw: Any, *, source: str = "<memory>") -> Scenario:
    try:
        document = ScenarioDocument.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioParseError(f"{source}: invalid scenario document: {exc}") from exc
    return scenario_from_document(document)


def load_scenario(path: Path) -> Scenario:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: malformed JSON: {exc}") from exc
    try:
        scenario = parse_scenario(raw, source=str(path))
    except ScenarioValidationError as exc:
        raise ScenarioValidationError(f"{path}: {exc}") from exc
    LOGGER.debug(
        "scenario loaded path=%s travelers=%s services=%s",
        path,
        len(scenario.travelers),
        len(scenario.network.services),
    )
    return scenario


def dump_scenario(scenario: Scenario, path: Path) -> Path:
    document = scenario_to_document(scenario).model_dump(mode="json", exclude_none=True)
    return atomic_write_text(path, canonical_json(document))
