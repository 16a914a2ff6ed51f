from __future__ import annotations

from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobility.app.errors import InfeasibleServiceError, ScenarioValidationError
from mobility.app.services.market import PlannerConfig
from mobility.app.services.network import (
    Link,
    MobilityService,
    Network,
    Scenario,
    feasible_services,
    partition_subclasses,
    shortest_travel_time,
)
from tests.factories import line_network, make_traveler

LinkSpec = tuple[int, int, int, float]


def _three_node_network() -> Network:
    return Network(
        nodes=frozenset({"A", "B", "C"}),
        links=(
            Link("A", "B", 0, 15.0),
            Link("A", "C", 1, 4.0),
            Link("C", "B", 1, 5.0),
            Link("A", "B", 1, 30.0),
        ),
        services=(
            MobilityService(0, "own-car", 10, 9.0, 0.0, is_fallback=True),
            MobilityService(1, "shuttle", 3, 3.0, 0.2),
            MobilityService(2, "ferry", 5, 2.0, 0.0),
        ),
    )


def test_partition_groups_travelers_by_od_pair() -> None:
    travelers = [
        make_traveler(1, origin="A", destination="B"),
        make_traveler(2, origin="A", destination="B"),
        make_traveler(3, origin="A", destination="C"),
    ]

    partition = partition_subclasses(travelers)

    assert partition.count == 2
    assert partition.subclasses[0].traveler_ids == (1, 2)
    assert (partition.subclasses[1].origin, partition.subclasses[1].destination) == ("A", "C")
    assert partition.subclasses[1].traveler_ids == (3,)


def test_partition_degenerate_cases() -> None:
    shared = [make_traveler(i) for i in range(1, 5)]
    assert partition_subclasses(shared).count == 1

    distinct = [
        make_traveler(1, origin="A", destination="B"),
        make_traveler(2, origin="B", destination="A"),
        make_traveler(3, origin="A", destination="C"),
    ]
    partition = partition_subclasses(distinct)
    assert partition.count == 3
    assert all(len(subclass.traveler_ids) == 1 for subclass in partition.subclasses)


def test_partition_rejects_empty_list() -> None:
    with pytest.raises(ScenarioValidationError):
        partition_subclasses([])


@given(st.permutations([(1, "A", "B"), (2, "A", "B"), (3, "A", "C"), (4, "C", "A"), (5, "A", "C")]))
def test_partition_is_order_insensitive(ordering: list[tuple[int, str, str]]) -> None:
    travelers = [make_traveler(tid, origin=o, destination=d) for tid, o, d in ordering]

    partition = partition_subclasses(travelers)

    assert [subclass.traveler_ids for subclass in partition.subclasses] == [(1, 2), (3, 5), (4,)]
    assert partition_subclasses(travelers) == partition


def test_feasible_services_follow_service_paths() -> None:
    network = _three_node_network()

    direct = feasible_services(make_traveler(1, origin="A", destination="B"), network)

    assert direct == (0, 1)
    # two-hop A-C-B beats the direct shuttle link
    assert shortest_travel_time(network, 1, "A", "B") == pytest.approx(9.0)
    assert 2 not in direct


def test_fallback_uses_default_travel_time_when_unlinked() -> None:
    network = Network(
        nodes=frozenset({"A", "B"}),
        links=(Link("A", "B", 1, 12.0),),
        services=(
            MobilityService(0, "own-car", 4, 9.0, 0.0, is_fallback=True, default_travel_time=18.0),
            MobilityService(1, "shuttle", 3, 3.0, 0.0),
        ),
    )

    assert shortest_travel_time(network, 0, "A", "B") == 18.0
    assert feasible_services(make_traveler(1), network) == (0, 1)


def test_fallback_without_route_is_infeasible() -> None:
    network = Network(
        nodes=frozenset({"A", "B"}),
        links=(Link("A", "B", 1, 12.0),),
        services=(
            MobilityService(0, "own-car", 4, 9.0, 0.0, is_fallback=True),
            MobilityService(1, "shuttle", 3, 3.0, 0.0),
        ),
    )

    with pytest.raises(InfeasibleServiceError):
        feasible_services(make_traveler(1), network)


def test_network_requires_exactly_one_fallback() -> None:
    with pytest.raises(ScenarioValidationError, match="exactly one fallback"):
        Network(
            nodes=frozenset({"A", "B"}),
            links=(),
            services=(MobilityService(1, "shuttle", 3, 3.0, 0.0),),
        )


def test_network_rejects_links_to_undeclared_nodes() -> None:
    with pytest.raises(ScenarioValidationError, match="not a declared node"):
        Network(
            nodes=frozenset({"A", "B"}),
            links=(Link("A", "Z", 0, 5.0),),
            services=(MobilityService(0, "own-car", 3, 3.0, 0.0, is_fallback=True),),
        )


def test_scenario_enforces_willingness_to_pay_above_costs() -> None:
    network = line_network([(1, 10.0, 2, 3.0, 0.0)], fallback_cost=12.0)

    with pytest.raises(ScenarioValidationError, match="Assumption 2 violated"):
        Scenario(
            network=network,
            travelers=(make_traveler(1, v_bar=11.0),),
            planner=PlannerConfig(),
        )


def test_scenario_rejects_undeclared_traveler_node() -> None:
    network = line_network([(1, 10.0, 2, 3.0, 0.0)])

    with pytest.raises(ScenarioValidationError, match="not declared"):
        Scenario(
            network=network,
            travelers=(make_traveler(1, destination="Q"),),
            planner=PlannerConfig(),
        )


def test_scenario_requires_fallback_capacity_for_everyone() -> None:
    network = line_network([(1, 10.0, 2, 3.0, 0.0)], fallback_capacity=1)

    with pytest.raises(ScenarioValidationError, match="must cover all 2 travelers"):
        Scenario(
            network=network,
            travelers=(make_traveler(1), make_traveler(2)),
            planner=PlannerConfig(),
        )


def test_scenario_orders_travelers_and_looks_them_up() -> None:
    network = line_network([(1, 10.0, 2, 3.0, 0.0)])
    scenario = Scenario(
        network=network,
        travelers=(make_traveler(3), make_traveler(1)),
        planner=PlannerConfig(),
    )

    assert [traveler.traveler_id for traveler in scenario.travelers] == [1, 3]
    assert scenario.traveler(3).traveler_id == 3
    with pytest.raises(ScenarioValidationError):
        scenario.traveler(99)


@st.composite
def _multigraphs(draw: st.DrawFn) -> tuple[int, int, list[LinkSpec], int, int]:
    node_count = draw(st.integers(min_value=2, max_value=8))
    service_count = draw(st.integers(min_value=1, max_value=4))
    link = st.tuples(
        st.integers(min_value=0, max_value=node_count - 1),
        st.integers(min_value=0, max_value=node_count - 1),
        st.integers(min_value=0, max_value=service_count - 1),
        st.floats(min_value=0.5, max_value=40.0),
    ).filter(lambda edge: edge[0] != edge[1])
    links = draw(st.lists(link, max_size=16))
    # repeat some links so every instance can carry parallel edges
    links += draw(st.lists(st.sampled_from(links), max_size=4)) if links else []
    origin, destination = draw(
        st.lists(
            st.integers(min_value=0, max_value=node_count - 1),
            min_size=2,
            max_size=2,
            unique=True,
        )
    )
    return node_count, service_count, links, origin, destination


def _reachable(links: list[LinkSpec], service: int, origin: int, destination: int) -> bool:
    adjacency: dict[int, set[int]] = {}
    for source, target, owner, _ in links:
        if owner == service:
            adjacency.setdefault(source, set()).add(target)
            adjacency.setdefault(target, set()).add(source)
    seen = {origin}
    frontier = deque([origin])
    while frontier:
        node = frontier.popleft()
        if node == destination:
            return True
        for neighbour in sorted(adjacency.get(node, set()) - seen):
            seen.add(neighbour)
            frontier.append(neighbour)
    return False


@settings(max_examples=200)
@given(_multigraphs())
def test_feasible_services_agree_with_breadth_first_reachability(
    instance: tuple[int, int, list[LinkSpec], int, int],
) -> None:
    node_count, service_count, links, origin, destination = instance
    network = Network(
        nodes=frozenset(f"n{index}" for index in range(node_count)),
        links=tuple(
            Link(f"n{source}", f"n{target}", service, travel_time)
            for source, target, service, travel_time in links
        ),
        services=tuple(
            MobilityService(
                service,
                f"service-{service}",
                4,
                2.0,
                0.0,
                is_fallback=service == 0,
                default_travel_time=90.0 if service == 0 else None,
            )
            for service in range(service_count)
        ),
    )
    traveler = make_traveler(1, origin=f"n{origin}", destination=f"n{destination}")

    expected = tuple(
        service
        for service in range(service_count)
        if service == 0 or _reachable(links, service, origin, destination)
    )

    assert feasible_services(traveler, network) == expected
    for service in range(1, service_count):
        travel_time = shortest_travel_time(network, service, f"n{origin}", f"n{destination}")
        assert (travel_time is not None) == (service in expected)
    fallback_time = shortest_travel_time(network, 0, f"n{origin}", f"n{destination}")
    if _reachable(links, 0, origin, destination):
        assert fallback_time is not None and fallback_time < 8 * 40.0
    else:
        assert fallback_time == 90.0
