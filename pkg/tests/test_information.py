from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from mobility.app.errors import InconsistentInformationError, ProtocolViolationError
from mobility.app.services.coordination.information import (
    InformationState,
    SharedPacket,
    SharingProtocol,
    initial_information_state,
    information_state_sequence,
    private_view,
    update_information_state,
)
from mobility.app.services.coordination.model import TeamModel, observe, sample_initial_state, step
from mobility.app.services.coordination.planning import solve_planning
from mobility.app.services.coordination.simulation import MemberAgent
from tests.factories import chain_model


def _random_transcript(
    model: TeamModel, seed: int
) -> tuple[list[int], list[int], list[SharedPacket]]:
    """Observations, decisions and released packets of one episode with uniformly random decisions."""
    rng = np.random.default_rng(seed)
    protocol = SharingProtocol(delays=(model.members[0].delay,))
    state = sample_initial_state(model, rng)
    observations = [observe(model, state, 0, rng)]
    protocol.publish_observations(0, observations[-1:])
    decisions: list[int] = []
    packets: list[SharedPacket] = []
    for t in range(model.horizon):
        packets.append(protocol.release(t))
        decisions.append(int(rng.integers(2)))
        protocol.publish_decisions(t, decisions[-1:])
        state, _ = step(model, state, decisions[-1:], rng)
        observations.append(observe(model, state, 0, rng))
        protocol.publish_observations(t + 1, observations[-1:])
    return observations, decisions, packets


def _enumerated_posterior(
    model: TeamModel, observations: list[int], decisions: list[int], last: int
) -> np.ndarray:
    """P(X_last | Y_0..Y_last, U_0..U_last-1) by summing over every primitive random variable."""
    member = model.members[0]
    posterior = np.zeros(len(model.states))
    for x0, p0 in enumerate(model.initial_distribution):
        for disturbances in itertools.product(range(len(model.disturbance_labels)), repeat=last):
            for noises in itertools.product(range(len(member.noise_labels)), repeat=last + 1):
                trail = [x0]
                for s, w in enumerate(disturbances):
                    trail.append(model.dynamics_table[trail[-1]][decisions[s]][w])
                if any(
                    member.observation_table[trail[s]][v] != observations[s]
                    for s, v in enumerate(noises)
                ):
                    continue
                weight = p0
                weight *= math.prod(model.disturbance_probabilities[w] for w in disturbances)
                weight *= math.prod(member.noise_probabilities[v] for v in noises)
                posterior[trail[-1]] += weight
    return posterior / posterior.sum()


@pytest.mark.parametrize("block", range(4))
def test_filter_matches_enumerated_posterior(block: int) -> None:
    model = chain_model(horizon=4, delay=1)
    for seed in range(block * 25, (block + 1) * 25):
        observations, decisions, packets = _random_transcript(model, seed)

        states = information_state_sequence(model, packets)

        assert states[0] == initial_information_state(model)
        for t in range(1, model.horizon):
            expected = _enumerated_posterior(model, observations, decisions, t - 1)
            np.testing.assert_allclose(states[t].as_array(), expected, atol=1e-9, rtol=0.0)


def test_information_state_stays_normalized() -> None:
    model = chain_model(horizon=4, delay=1)
    for seed in range(20):
        _, _, packets = _random_transcript(model, seed)
        for state in information_state_sequence(model, packets):
            assert sum(state.probabilities) == pytest.approx(1.0, abs=1e-12)
            assert min(state.probabilities) >= 0.0


def test_empty_packet_leaves_the_state_unchanged() -> None:
    model = chain_model()
    prior = initial_information_state(model)

    assert update_information_state(prior, SharedPacket(), model) is prior


def test_noiseless_observation_pins_the_state() -> None:
    model = chain_model(flip=0.0)

    pinned = update_information_state(
        initial_information_state(model), SharedPacket(observations=(1,)), model
    )

    assert pinned.probabilities == pytest.approx((0.0, 0.0, 1.0))


def test_zero_probability_shared_data_is_rejected() -> None:
    model = chain_model(flip=0.0)
    pinned = update_information_state(
        initial_information_state(model), SharedPacket(observations=(1,)), model
    )

    # the right end never moves left, so "low" after "hold" is impossible
    with pytest.raises(InconsistentInformationError):
        update_information_state(pinned, SharedPacket(observations=(0,), decisions=(0,)), model)


def test_information_state_rejects_invalid_vectors() -> None:
    with pytest.raises(InconsistentInformationError):
        InformationState(probabilities=(0.7, 0.7))
    with pytest.raises(InconsistentInformationError):
        InformationState.from_array(np.zeros(3))


def test_filter_refuses_partial_profiles() -> None:
    model = chain_model()

    with pytest.raises(ProtocolViolationError):
        update_information_state(
            initial_information_state(model), SharedPacket(observations=(None,)), model
        )


def _agent_transcript(model: TeamModel, seed: int) -> tuple[list[SharedPacket], list[InformationState]]:
    rng = np.random.default_rng(seed)
    strategy = solve_planning(model)
    agent = MemberAgent(0, model, strategy)
    protocol = SharingProtocol(delays=(model.members[0].delay,))
    state = sample_initial_state(model, rng)
    observation = observe(model, state, 0, rng)
    protocol.publish_observations(0, (observation,))
    packets: list[SharedPacket] = []
    seen: list[InformationState] = []
    for t in range(model.horizon):
        packet = protocol.release(t)
        agent.observe(observation)
        agent.receive(packet)
        packets.append(packet)
        seen.append(agent.information_state)
        decision = agent.decide(t)
        protocol.publish_decisions(t, (decision,))
        state, _ = step(model, state, (decision,), rng)
        observation = observe(model, state, 0, rng)
        protocol.publish_observations(t + 1, (observation,))
    return packets, seen


@pytest.mark.parametrize(
    "costs",
    [
        ((2.0, 2.5), (1.0, 1.5), (0.0, 0.5)),
        ((0.0, 0.5), (1.0, 1.5), (2.0, 2.5)),
    ],
)
def test_agent_information_state_is_the_strategy_free_filter(
    costs: tuple[tuple[float, float], ...],
) -> None:
    base = chain_model(horizon=4, delay=1)
    model = TeamModel(
        states=base.states,
        members=base.members,
        horizon=base.horizon,
        disturbance_labels=base.disturbance_labels,
        disturbance_probabilities=base.disturbance_probabilities,
        dynamics_table=base.dynamics_table,
        cost_table=costs,
        initial_distribution=base.initial_distribution,
    )
    for seed in range(10):
        packets, seen = _agent_transcript(model, seed)

        assert tuple(seen) == information_state_sequence(base, packets)


def test_uniform_delay_protocol_releases_on_schedule() -> None:
    protocol = SharingProtocol(delays=(1, 1))
    protocol.publish_observations(0, (5, 6))
    protocol.publish_decisions(0, (1, 0))
    protocol.publish_observations(1, (7, 8))
    protocol.publish_decisions(1, (0, 1))

    assert protocol.release(0).is_empty
    assert protocol.release(1) == SharedPacket(observations=(5, 6))
    assert protocol.release(2) == SharedPacket(observations=(7, 8), decisions=(1, 0))


def test_asymmetric_delays_release_per_member() -> None:
    protocol = SharingProtocol(delays=(0, 2))
    for t, profile in enumerate([(5, 6), (7, 8), (9, 10)]):
        protocol.publish_observations(t, profile)
    protocol.publish_decisions(0, (1, 2))
    protocol.publish_decisions(1, (3, 4))

    assert protocol.release(0) == SharedPacket(observations=(5, None))
    assert protocol.release(2) == SharedPacket(observations=(9, 6), decisions=(3, None))


def test_private_view_keeps_the_recent_window() -> None:
    assert private_view([1, 0], [0, 1, 1], 2).decisions == (1,)
    assert private_view([1, 0], [0, 1, 1], 2).observations == (1, 0)
    assert private_view([], [0, 1], 0).decisions == ()
    assert private_view([], [0, 1], 1).decisions == ()
