from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class WeightedLabel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str
    probability: float


class TeamMemberDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    decisions: list[str]
    observations: list[str]
    delay: int = 0
    noise: list[WeightedLabel]
    # observation_table[state][noise] -> observation label
    observation_table: list[list[str]]


class TeamModelDocument(BaseModel):
    """Team model file. Joint decisions are ordered with the first member most significant."""

    model_config = ConfigDict(extra="forbid")

    horizon: int
    states: list[str]
    initial_distribution: list[float]
    disturbances: list[WeightedLabel]
    members: list[TeamMemberDocument]
    # dynamics[state][joint decision][disturbance] -> next state label
    dynamics: list[list[list[str]]]
    # costs[state][joint decision]
    costs: list[list[float]]
    failure_states: list[str] = Field(default_factory=list[str])
