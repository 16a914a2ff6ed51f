from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, TypeVar

import networkx as nx

from mobility.app.errors import InfeasibleServiceError, ScenarioValidationError

if TYPE_CHECKING:
    from mobility.app.services.market import PlannerConfig

LOGGER = logging.getLogger("mobility.network")


V = TypeVar("V", int, float)


def _frozen_map(values: Mapping[int, V]) -> tuple[tuple[int, V], ...]:
    return tuple(sorted(values.items()))


@dataclass(frozen=True)
class Link:
    source: str
    target: str
    service_id: int
    travel_time: float


@dataclass(frozen=True)
class MobilityService:
    service_id: int
    name: str
    capacity: int
    per_traveler_cost: float
    congestion_slope: float
    is_fallback: bool = False
    default_travel_time: float | None = None

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ScenarioValidationError(
                f"service {self.service_id}: capacity must be a positive integer"
            )
        if not self.per_traveler_cost > 0:
            raise ScenarioValidationError(
                f"service {self.service_id}: per_traveler_cost must be > 0"
            )
        if self.congestion_slope < 0:
            raise ScenarioValidationError(
                f"service {self.service_id}: congestion_slope must be >= 0"
            )
        if self.default_travel_time is not None and not self.default_travel_time > 0:
            raise ScenarioValidationError(
                f"service {self.service_id}: default_travel_time must be > 0"
            )


@dataclass(frozen=True)
class Preferences:
    """Reported travel preferences: preferred time, co-traveler tolerance and value of time.

    Per-service maps are stored as sorted (service_id, value) pairs; services that are
    not listed tolerate zero co-travelers and carry zero value of time.
    """

    preferred_travel_time: float
    max_co_travelers: tuple[tuple[int, int], ...] = ()
    value_of_time: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.preferred_travel_time < 0 or math.isnan(self.preferred_travel_time):
            raise ScenarioValidationError("preferred_travel_time must be >= 0")
        for service_id, limit in self.max_co_travelers:
            if limit < 0:
                raise ScenarioValidationError(
                    f"max_co_travelers for service {service_id} must be >= 0"
                )
        for service_id, weight in self.value_of_time:
            if not 0.0 <= weight <= 1.0:
                raise ScenarioValidationError(
                    f"value_of_time for service {service_id} must lie in [0, 1]"
                )

    @classmethod
    def build(
        cls,
        preferred_travel_time: float,
        max_co_travelers: Mapping[int, int] | None = None,
        value_of_time: Mapping[int, float] | None = None,
    ) -> Preferences:
        return cls(
            preferred_travel_time=float(preferred_travel_time),
            max_co_travelers=_frozen_map(max_co_travelers or {}),
            value_of_time=_frozen_map(
                {key: float(value) for key, value in (value_of_time or {}).items()}
            ),
        )

    def co_traveler_limit(self, service_id: int) -> int:
        return dict(self.max_co_travelers).get(service_id, 0)

    def time_weight(self, service_id: int) -> float:
        return dict(self.value_of_time).get(service_id, 0.0)


@dataclass(frozen=True)
class Traveler:
    traveler_id: int
    origin: str
    destination: str
    preferences: Preferences
    max_willingness_to_pay: float
    discount_rate: float
    operating_costs: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.origin == self.destination:
            raise ScenarioValidationError(
                f"traveler {self.traveler_id}: origin must differ from destination"
            )
        if not self.max_willingness_to_pay > 0:
            raise ScenarioValidationError(
                f"traveler {self.traveler_id}: max_willingness_to_pay must be > 0"
            )
        if not 0.0 < self.discount_rate < 1.0:
            raise ScenarioValidationError(
                f"traveler {self.traveler_id}: discount_rate must lie strictly inside (0, 1)"
            )
        for service_id, cost in self.operating_costs:
            if not cost > 0:
                raise ScenarioValidationError(
                    f"traveler {self.traveler_id}: operating cost for service "
                    f"{service_id} must be > 0"
                )

    def operating_cost(self, service: MobilityService) -> float:
        """r_ij: the traveler's override when present, else the service's base cost."""
        return dict(self.operating_costs).get(service.service_id, service.per_traveler_cost)

    def with_preferences(self, preferences: Preferences) -> Traveler:
        return dataclasses.replace(self, preferences=preferences)


@dataclass(frozen=True)
class Network:
    nodes: frozenset[str]
    links: tuple[Link, ...]
    services: tuple[MobilityService, ...]

    def __post_init__(self) -> None:
        service_ids = [service.service_id for service in self.services]
        if len(set(service_ids)) != len(service_ids):
            raise ScenarioValidationError("service ids must be unique")
        if list(service_ids) != sorted(service_ids):
            object.__setattr__(
                self, "services", tuple(sorted(self.services, key=lambda s: s.service_id))
            )
        fallbacks = [service for service in self.services if service.is_fallback]
        if len(fallbacks) != 1:
            raise ScenarioValidationError(
                f"exactly one fallback service is required, found {len(fallbacks)}"
            )
        known_services = set(service_ids)
        for index, link in enumerate(self.links):
            for endpoint in (link.source, link.target):
                if endpoint not in self.nodes:
                    raise ScenarioValidationError(
                        f"link {index}: endpoint {endpoint!r} is not a declared node"
                    )
            if link.service_id not in known_services:
                raise ScenarioValidationError(
                    f"link {index}: service {link.service_id} is not declared"
                )
            if not link.travel_time > 0:
                raise ScenarioValidationError(f"link {index}: travel_time must be > 0")

    @property
    def service_ids(self) -> tuple[int, ...]:
        return tuple(service.service_id for service in self.services)

    @property
    def fallback(self) -> MobilityService:
        return next(service for service in self.services if service.is_fallback)

    def service(self, service_id: int) -> MobilityService:
        for service in self.services:
            if service.service_id == service_id:
                return service
        raise InfeasibleServiceError(f"unknown service id {service_id}")

    @cached_property
    def _service_graphs(self) -> dict[int, nx.MultiGraph]:
        graphs: dict[int, nx.MultiGraph] = {}
        for service in self.services:
            graphs[service.service_id] = nx.MultiGraph()
        for link in self.links:
            graphs[link.service_id].add_edge(
                link.source, link.target, travel_time=link.travel_time
            )
        return graphs

    def service_graph(self, service_id: int) -> nx.MultiGraph:
        return self._service_graphs[service_id]


@dataclass(frozen=True)
class Scenario:
    network: Network
    travelers: tuple[Traveler, ...]
    planner: PlannerConfig
    _by_id: dict[int, Traveler] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.travelers, key=lambda traveler: traveler.traveler_id))
        object.__setattr__(self, "travelers", ordered)
        by_id = {traveler.traveler_id: traveler for traveler in ordered}
        if len(by_id) != len(ordered):
            raise ScenarioValidationError("traveler ids must be unique")
        object.__setattr__(self, "_by_id", by_id)
        if not ordered:
            raise ScenarioValidationError("scenario must declare at least one traveler")

        fallback = self.network.fallback
        if fallback.capacity < len(ordered):
            raise ScenarioValidationError(
                f"fallback service {fallback.service_id}: capacity {fallback.capacity} "
                f"must cover all {len(ordered)} travelers"
            )
        for traveler in ordered:
            for endpoint in (traveler.origin, traveler.destination):
                if endpoint not in self.network.nodes:
                    raise ScenarioValidationError(
                        f"traveler {traveler.traveler_id}: node {endpoint!r} is not declared"
                    )
            try:
                feasible = feasible_services(traveler, self.network)
            except InfeasibleServiceError as exc:
                raise ScenarioValidationError(
                    f"traveler {traveler.traveler_id}: {exc}"
                ) from exc
            for service_id in feasible:
                cost = traveler.operating_cost(self.network.service(service_id))
                if not traveler.max_willingness_to_pay > cost:
                    raise ScenarioValidationError(
                        f"Assumption 2 violated: traveler {traveler.traveler_id} "
                        f"max_willingness_to_pay {traveler.max_willingness_to_pay} must exceed "
                        f"operating cost {cost} of feasible service {service_id}"
                    )

    def traveler(self, traveler_id: int) -> Traveler:
        try:
            return self._by_id[traveler_id]
        except KeyError as exc:
            raise ScenarioValidationError(f"unknown traveler id {traveler_id}") from exc

    def with_preferences(self, traveler_id: int, preferences: Preferences) -> Scenario:
        replaced = tuple(
            traveler.with_preferences(preferences)
            if traveler.traveler_id == traveler_id
            else traveler
            for traveler in self.travelers
        )
        return Scenario(network=self.network, travelers=replaced, planner=self.planner)

    def with_planner(self, planner: PlannerConfig) -> Scenario:
        return Scenario(network=self.network, travelers=self.travelers, planner=planner)


@dataclass(frozen=True)
class Subclass:
    index: int
    origin: str
    destination: str
    traveler_ids: tuple[int, ...]


@dataclass(frozen=True)
class SubclassPartition:
    subclasses: tuple[Subclass, ...]

    @property
    def count(self) -> int:
        return len(self.subclasses)


def partition_subclasses(travelers: Sequence[Traveler]) -> SubclassPartition:
    """Group travelers by exact (origin, destination); subclasses ordered by smallest id."""
    if not travelers:
        raise ScenarioValidationError("cannot partition an empty traveler list")
    groups: dict[tuple[str, str], list[int]] = {}
    for traveler in travelers:
        groups.setdefault((traveler.origin, traveler.destination), []).append(
            traveler.traveler_id
        )
    ordered = sorted(
        ((pair, sorted(ids)) for pair, ids in groups.items()),
        key=lambda item: item[1][0],
    )
    return SubclassPartition(
        subclasses=tuple(
            Subclass(index=index, origin=origin, destination=destination, traveler_ids=tuple(ids))
            for index, ((origin, destination), ids) in enumerate(ordered)
        )
    )


def shortest_travel_time(
    network: Network,
    service_id: int,
    origin: str,
    destination: str,
) -> float | None:
    """Shortest path length using only the service's links; fallback may use its default."""
    service = network.service(service_id)
    graph = network.service_graph(service_id)
    length: float | None = None
    if graph.has_node(origin) and graph.has_node(destination):
        try:
            length = float(
                nx.shortest_path_length(graph, origin, destination, weight="travel_time")
            )
        except nx.NetworkXNoPath:
            length = None
    if length is None and service.is_fallback:
        return service.default_travel_time
    return length


def feasible_services(traveler: Traveler, network: Network) -> tuple[int, ...]:
    """Services whose own links connect the traveler's origin to destination, plus fallback."""
    feasible = tuple(
        service.service_id
        for service in network.services
        if shortest_travel_time(network, service.service_id, traveler.origin, traveler.destination)
        is not None
    )
    if network.fallback.service_id not in feasible:
        raise InfeasibleServiceError(
            f"fallback service {network.fallback.service_id} cannot serve "
            f"{traveler.origin}->{traveler.destination} and declares no default_travel_time"
        )
    LOGGER.debug(
        "feasible services traveler=%s services=%s", traveler.traveler_id, list(feasible)
    )
    return feasible


def base_travel_time(traveler: Traveler, network: Network, service_id: int) -> float:
    """τ_j for the traveler's OD pair."""
    travel_time = shortest_travel_time(
        network, service_id, traveler.origin, traveler.destination
    )
    if travel_time is None:
        raise InfeasibleServiceError(
            f"service {service_id} cannot serve traveler {traveler.traveler_id} "
            f"({traveler.origin}->{traveler.destination})"
        )
    return travel_time
