from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

from pydantic import ValidationError

from mobility.app.errors import TeamModelError
from mobility.app.models.team_contracts import (
    TeamMemberDocument,
    TeamModelDocument,
    WeightedLabel,
)
from mobility.app.repositories.common import atomic_write_text, canonical_json
from mobility.app.services.coordination.model import TeamMember, TeamModel

LOGGER = logging.getLogger("mobility.repositories.team_model")


def _indexer(labels: Sequence[str], *, kind: str) -> dict[str, int]:
    index = {label: position for position, label in enumerate(labels)}
    if len(index) != len(labels):
        raise TeamModelError(f"duplicate {kind} labels")
    return index


def _lookup(index: dict[str, int], label: str, *, kind: str) -> int:
    try:
        return index[label]
    except KeyError:
        raise TeamModelError(f"unknown {kind} label {label!r}") from None


def _member_from_document(document: TeamMemberDocument, states: dict[str, int]) -> TeamMember:
    observations = _indexer(document.observations, kind=f"{document.name} observation")
    if len(document.observation_table) != len(states):
        raise TeamModelError(f"member {document.name}: observation table needs one row per state")
    return TeamMember(
        name=document.name,
        decisions=tuple(document.decisions),
        observations=tuple(document.observations),
        noise_labels=tuple(entry.label for entry in document.noise),
        noise_probabilities=tuple(entry.probability for entry in document.noise),
        observation_table=tuple(
            tuple(
                _lookup(observations, label, kind=f"{document.name} observation") for label in row
            )
            for row in document.observation_table
        ),
        delay=document.delay,
    )


def team_model_from_document(document: TeamModelDocument) -> TeamModel:
    states = _indexer(document.states, kind="state")
    members = tuple(_member_from_document(member, states) for member in document.members)
    return TeamModel(
        states=tuple(document.states),
        members=members,
        horizon=document.horizon,
        disturbance_labels=tuple(entry.label for entry in document.disturbances),
        disturbance_probabilities=tuple(entry.probability for entry in document.disturbances),
        dynamics_table=tuple(
            tuple(
                tuple(_lookup(states, label, kind="state") for label in successors)
                for successors in row
            )
            for row in document.dynamics
        ),
        cost_table=tuple(tuple(row) for row in document.costs),
        initial_distribution=tuple(document.initial_distribution),
        failure_states=frozenset(
            _lookup(states, label, kind="state") for label in document.failure_states
        ),
    )


def team_model_to_document(model: TeamModel) -> TeamModelDocument:
    return TeamModelDocument(
        horizon=model.horizon,
        states=list(model.states),
        initial_distribution=list(model.initial_distribution),
        disturbances=[
            WeightedLabel(label=label, probability=probability)
            for label, probability in zip(
                model.disturbance_labels, model.disturbance_probabilities, strict=True
            )
        ],
        members=[
            TeamMemberDocument(
                name=member.name,
                decisions=list(member.decisions),
                observations=list(member.observations),
                delay=member.delay,
                noise=[
                    WeightedLabel(label=label, probability=probability)
                    for label, probability in zip(
                        member.noise_labels, member.noise_probabilities, strict=True
                    )
                ],
                observation_table=[
                    [member.observations[y] for y in row] for row in member.observation_table
                ],
            )
            for member in model.members
        ],
        dynamics=[
            [[model.states[successor] for successor in successors] for successors in row]
            for row in model.dynamics_table
        ],
        costs=[list(row) for row in model.cost_table],
        failure_states=sorted(model.states[x] for x in model.failure_states),
    )


def load_team_model(path: Path) -> TeamModel:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise TeamModelError(f"cannot read team model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise TeamModelError(f"{path}: malformed JSON: {exc}") from exc
    try:
        document = TeamModelDocument.model_validate(raw)
    except ValidationError as exc:
        raise TeamModelError(f"{path}: invalid team model document: {exc}") from exc
    model = team_model_from_document(document)
    LOGGER.debug(
        "team model loaded path=%s states=%s members=%s horizon=%s",
        path,
        len(model.states),
        model.member_count,
        model.horizon,
    )
    return model


def dump_team_model(model: TeamModel, path: Path) -> Path:
    document = team_model_to_document(model).model_dump(mode="json")
    return atomic_write_text(path, canonical_json(document))
