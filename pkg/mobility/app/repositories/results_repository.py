from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from pathlib import Path

from pydantic import ValidationError

from mobility.app.errors import ScenarioParseError
from mobility.app.models.result_contracts import ResultsEnvelope
from mobility.app.repositories.common import atomic_write_text, canonical_json
from mobility.app.services.coordination.model import TeamModel
from mobility.app.services.coordination.simulation import EpisodeRecord

LOGGER = logging.getLogger("mobility.repositories.results")


def render_envelope(envelope: ResultsEnvelope) -> str:
    return canonical_json(envelope.model_dump(mode="json"))


def write_results(envelope: ResultsEnvelope, path: Path) -> Path:
    written = atomic_write_text(path, render_envelope(envelope))
    LOGGER.info(
        "results written path=%s command=%s kind=%s",
        written,
        envelope.manifest.command,
        envelope.results.kind,
    )
    return written


def read_results(path: Path) -> ResultsEnvelope:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioParseError(f"cannot read results file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: malformed JSON: {exc}") from exc
    try:
        return ResultsEnvelope.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioParseError(f"{path}: not a results file: {exc}") from exc


def trajectory_lines(model: TeamModel, episodes: Iterable[EpisodeRecord]) -> str:
    """One JSON object per step: episode, t, state, decisions, observations, cost."""
    lines: list[str] = []
    for episode in episodes:
        for step in episode.steps:
            record = {
                "episode": step.episode,
                "t": step.t,
                "state": model.states[step.state],
                "decisions": [
                    model.members[k].decisions[u] for k, u in enumerate(step.decisions)
                ],
                "observations": [
                    model.members[k].observations[y] for k, y in enumerate(step.observations)
                ],
                "cost": step.cost,
            }
            lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    return "".join(f"{line}\n" for line in lines)


def write_trajectory_log(
    model: TeamModel, episodes: Iterable[EpisodeRecord], path: Path
) -> Path:
    return atomic_write_text(path, trajectory_lines(model, episodes))
