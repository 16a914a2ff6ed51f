from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class LinkDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: str
    target: str
    service: int
    travel_time: float


class ServiceDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    name: str
    capacity: int
    per_traveler_cost: float
    congestion_slope: float = 0.0
    is_fallback: bool = False
    default_travel_time: float | None = None


class TravelerDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: int
    origin: str
    destination: str
    max_willingness_to_pay: float
    discount_rate: float
    preferred_travel_time: float
    max_co_travelers: dict[str, int] = Field(default_factory=dict[str, int])
    value_of_time: dict[str, float] = Field(default_factory=dict[str, float])
    operating_costs: dict[str, float] | None = None


class PlannerDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    omega1: float = 1.0
    omega2: float = 1.0
    equity_bound: float | None = None
    co_traveler_penalty: float = 1.0
    congestion_slopes: dict[str, float] | None = None


class ScenarioDocument(BaseModel):
    """Scenario file: service ids in per-service maps are written as JSON object keys."""

    model_config = ConfigDict(extra="forbid")

    nodes: list[str]
    links: list[LinkDocument] = Field(default_factory=list[LinkDocument])
    services: list[ServiceDocument]
    travelers: list[TravelerDocument]
    planner: PlannerDocument = Field(default_factory=PlannerDocument)
