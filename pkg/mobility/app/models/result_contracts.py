from __future__ import annotations

from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field

SCHEMA_VERSION = 1

OverrideValue = float | int | str | bool | None


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario_path: str | None
    command: Literal["solve", "verify", "coordinate"]
    master_seed: int
    config_overrides: dict[str, OverrideValue] = Field(default_factory=dict[str, OverrideValue])
    tool_version: str
    input_hash: str


class SearchStatisticsRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nodes_expanded: int
    nodes_pruned: int
    leaves_evaluated: int
    root_lower_bound: float


class TravelerRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    traveler_id: int
    service_id: int
    service_name: str
    co_travelers: int
    experienced_travel_time: float
    inconvenience: float
    valuation: float
    operating_cost: float
    payment: float | None
    externality: float | None
    utility: float | None
    discount_satisfied: bool


class SubclassRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int
    origin: str
    destination: str
    traveler_ids: list[int]
    status: Literal["optimal", "infeasible"]
    objective: float | None = None
    welfare: float | None = None
    gini: float | None = None
    travelers: list[TravelerRow] = Field(default_factory=list[TravelerRow])
    statistics: SearchStatisticsRow


class SolveResults(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["solve"] = "solve"
    payment_mode: str
    subclasses: list[SubclassRow]
    total_objective: float
    total_welfare: float
    notes: list[str] = Field(default_factory=list[str])


class WitnessRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    traveler_id: int
    subclass_index: int
    utility_gain: float
    misreport: str
    grid_index: int | None = None


class VerifyResults(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["verify"] = "verify"
    property: Literal["IC", "IR", "WBB"]
    payment_mode: str
    verdict: Literal["holds-on-tested-grid", "violated"]
    instances_tested: int
    witnesses: list[WitnessRow] = Field(default_factory=list[WitnessRow])
    aggregate_surplus: float | None = None
    findings: list[str] = Field(default_factory=list[str])


class CoordinateResults(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["coordinate"] = "coordinate"
    horizon: int
    members: list[str]
    delay: int
    value: float
    open_loop_value: float | None = None
    episodes: int
    empirical_mean_cost: float
    stderr: float
    collisions: int
    beliefs_evaluated: int
    trajectory_log: str | None = None


ResultsPayload = Annotated[
    SolveResults | VerifyResults | CoordinateResults,
    Field(discriminator="kind"),
]


class ResultsEnvelope(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    manifest: RunManifest
    results: ResultsPayload
