from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from mobility.app.errors import InconsistentInformationError, ProtocolViolationError, TeamModelError
from mobility.app.services.coordination.model import PROBABILITY_TOLERANCE, FloatArray, TeamModel

LOGGER = logging.getLogger("mobility.coordination.information")


@dataclass(frozen=True, order=True)
class SharedPacket:
    """Data released to every member at one step.

    `observations` is the profile Y_{t-n} and `decisions` the profile U_{t-n-1};
    an empty tuple means nothing of that kind was released. Under asymmetric delays
    individual entries may be None.
    """

    observations: tuple[int | None, ...] = ()
    decisions: tuple[int | None, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.observations and not self.decisions


@dataclass(frozen=True)
class CommonInfo:
    packets: tuple[SharedPacket, ...] = ()

    def extend(self, packet: SharedPacket) -> CommonInfo:
        return CommonInfo(packets=(*self.packets, packet))

    @property
    def steps(self) -> int:
        return len(self.packets)


@dataclass(frozen=True, order=True)
class PrivateInfo:
    """Λ: own observations not yet shared and the last n-1 own decisions."""

    observations: tuple[int, ...] = ()
    decisions: tuple[int, ...] = ()


def private_view(observations: Sequence[int], decisions: Sequence[int], delay: int) -> PrivateInfo:
    kept = min(len(decisions), max(delay - 1, 0))
    return PrivateInfo(
        observations=tuple(observations),
        decisions=tuple(decisions[len(decisions) - kept :]) if kept else (),
    )


@dataclass(frozen=True)
class InformationState:
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(p < 0 for p in self.probabilities):
            raise InconsistentInformationError("information state has negative mass")
        if abs(sum(self.probabilities) - 1.0) > PROBABILITY_TOLERANCE * max(
            1, len(self.probabilities)
        ):
            raise InconsistentInformationError("information state does not sum to 1")

    @classmethod
    def from_array(cls, values: FloatArray) -> InformationState:
        total = float(values.sum())
        if not total > 0:
            raise InconsistentInformationError("shared data has zero probability")
        return cls(probabilities=tuple(float(v) for v in values / total))

    def as_array(self) -> FloatArray:
        return np.asarray(self.probabilities, dtype=np.float64)


def initial_information_state(model: TeamModel) -> InformationState:
    return InformationState.from_array(np.asarray(model.initial_distribution, dtype=np.float64))


def update_information_state(
    pi: InformationState,
    packet: SharedPacket,
    model: TeamModel,
) -> InformationState:
    """Exact Bayes step on newly shared data: predict with U_{t-n-1}, correct with Y_{t-n}.

    Depends only on the realized packet, never on any strategy.
    """
    if packet.is_empty:
        return pi
    if not packet.observations or any(y is None for y in packet.observations):
        raise ProtocolViolationError("filter needs a complete shared observation profile")
    belief = pi.as_array()
    if packet.decisions:
        if any(u is None for u in packet.decisions):
            raise ProtocolViolationError("filter needs a complete shared decision profile")
        joint = model.joint_index([int(u) for u in packet.decisions if u is not None])
        belief = belief @ model.transition[:, joint, :]
    for kernel, y in zip(model.observation_kernels, packet.observations, strict=True):
        if y is None or not 0 <= y < kernel.shape[1]:
            raise TeamModelError(f"undefined shared observation {y}")
        belief = belief * kernel[:, y]
    if not float(belief.sum()) > 0:
        raise InconsistentInformationError(
            f"shared data {packet} has zero probability under the current information state"
        )
    return InformationState.from_array(belief)


def information_state_sequence(
    model: TeamModel,
    packets: Sequence[SharedPacket],
) -> tuple[InformationState, ...]:
    """Π_0..Π_t for a transcript of shared packets, one per step."""
    states: list[InformationState] = []
    current = initial_information_state(model)
    for packet in packets:
        current = update_information_state(current, packet, model)
        states.append(current)
    return tuple(states)


@dataclass
class SharingProtocol:
    """Releases each member's observation after its delay and its decision one step later.

    Delays may differ per member; a packet then carries None for members whose data is
    not yet due.
    """

    delays: tuple[int, ...]
    _observations: dict[tuple[int, int], int] = field(default_factory=dict[tuple[int, int], int])
    _decisions: dict[tuple[int, int], int] = field(default_factory=dict[tuple[int, int], int])

    def __post_init__(self) -> None:
        if any(delay < 0 for delay in self.delays):
            raise TeamModelError("sharing delays must be >= 0")

    def publish_observations(self, t: int, profile: Sequence[int]) -> None:
        for member, y in enumerate(profile):
            self._observations[(member, t)] = y

    def publish_decisions(self, t: int, profile: Sequence[int]) -> None:
        for member, u in enumerate(profile):
            self._decisions[(member, t)] = u

    def release(self, t: int) -> SharedPacket:
        observations = tuple(
            self._observations.get((member, t - delay)) if t - delay >= 0 else None
            for member, delay in enumerate(self.delays)
        )
        decisions = tuple(
            self._decisions.get((member, t - delay - 1)) if t - delay - 1 >= 0 else None
            for member, delay in enumerate(self.delays)
        )
        packet = SharedPacket(
            observations=() if all(y is None for y in observations) else observations,
            decisions=() if all(u is None for u in decisions) else decisions,
        )
        LOGGER.debug("shared packet released t=%s packet=%s", t, packet)
        return packet
