import random

import pytest
from hypothesis import given, settings, strategies as st

from cityevac.busevac import (
    BoardingTimes,
    BusDepot,
    EvacError,
    EvacState,
    PickupPoint,
    Shelter,
    UnknownPickup,
    VisitKind,
    replay_bus_route,
    solve_ebpd,
)
from cityevac.evo import EvoConfig
from cityevac.generators import random_ebpd_instance
from cityevac.net import Arc, TimeDependentNetwork, TravelTimeProfile, shortest_time_path
from cityevac.oracles import ebpd_exhaustive

BT = BoardingTimes()
const = TravelTimeProfile.constant


def line(times):
    arcs = []
    for k, t in enumerate(times):
        arcs.append(Arc(2 * k, k, k + 1, const(t), 100.0))
        arcs.append(Arc(2 * k + 1, k + 1, k, const(t), 100.0))
    return TimeDependentNetwork({k: (k, 0.0) for k in range(len(times) + 1)}, tuple(arcs))


def check_invariants(net, plan, pickups, shelters, deadline):
    """Conservation, capacity, deadline and replay, recomputed from the visits."""
    demand = {p.id: p.demand for p in pickups}
    room = {s.id: s.capacity for s in shelters}
    boarded = alighted = 0
    waiting = dict(demand)
    for r in plan.routes:
        load = r.initial_onboard
        for v in r.visits:
            assert v.arrival <= deadline
            if v.kind is VisitKind.PICKUP:
                cap = next(p.boarding_cap for p in pickups if p.id == v.id)
                assert v.count <= cap
                load += v.count
                boarded += v.count
                waiting[v.id] -= v.count
            else:
                load -= v.count
                alighted += v.count
                room[v.id] -= v.count
            assert 0 <= load <= r.capacity
            assert v.onboard == load
        assert load == 0
        assert replay_bus_route(net, r) == []
    assert all(n >= 0 for n in room.values())
    assert all(n >= 0 for n in waiting.values())
    assert boarded == alighted == plan.total_evacuated
    assert sum(plan.unserved.values()) + plan.total_evacuated == sum(demand.values())
    assert plan.unserved == {k: n for k, n in waiting.items() if n > 0}


def test_zero_demand():
    net = line([60, 60])
    plan = solve_ebpd(net, [BusDepot("D", 0, 1, 40)], [PickupPoint("P", 1, 0, 40)], [Shelter("S", 2, 100)], 5000, 0)
    assert plan.routes == [] and plan.total_evacuated == 0 and plan.unserved == {}
    assert plan.completion_time == 0


def test_forced_single_trip():
    net = line([100, 250])
    t0 = 1000.0
    plan = solve_ebpd(net, [BusDepot("D", 0, 1, 40)], [PickupPoint("P", 1, 30, 40)], [Shelter("S", 2, 100)], 9000, t0)
    assert plan.total_evacuated == 30
    assert plan.completion_time == t0 + 100 + (30 + 2 * 30) + 250
    [route] = plan.routes
    assert [(v.kind, v.count) for v in route.visits] == [(VisitKind.PICKUP, 30), (VisitKind.SHELTER, 30)]


def test_demand_above_capacity_needs_two_trips():
    net = line([100, 250])
    pickups = [PickupPoint("P", 1, 70, 40)]
    shelters = [Shelter("S", 2, 100)]
    depots = [BusDepot("D", 0, 1, 40)]
    plan = solve_ebpd(net, depots, pickups, shelters, 9000, 0)
    assert plan.total_evacuated == 70
    assert [v.count for v in plan.routes[0].visits] == [40, 40, 30, 30]
    assert plan.objective == ebpd_exhaustive(net, depots, pickups, shelters, 9000, 0, BT)
    two = [BusDepot("D", 0, 2, 40)]
    plan2 = solve_ebpd(net, two, pickups, shelters, 9000, 0)
    assert plan2.objective == ebpd_exhaustive(net, two, pickups, shelters, 9000, 0, BT)
    assert plan2.completion_time < plan.completion_time
    check_invariants(net, plan2, pickups, shelters, 9000)


def test_deadline_limits_service():
    net = line([100, 250])
    pickups = [PickupPoint("P", 1, 70, 40)]
    # one round trip reaches the shelter at 430; a second would arrive far later
    plan = solve_ebpd(net, [BusDepot("D", 0, 1, 40)], pickups, [Shelter("S", 2, 100)], 500, 0)
    assert plan.total_evacuated == 40 and plan.unserved == {"P": 30}


def test_shelter_capacity_binds():
    net = line([100, 250])
    pickups = [PickupPoint("P", 1, 30, 40)]
    shelters = [Shelter("S", 2, 12)]
    plan = solve_ebpd(net, [BusDepot("D", 0, 1, 40)], pickups, shelters, 9000, 0)
    # bus would be stranded with more than 12 aboard, so nothing can be moved
    assert plan.total_evacuated == 0
    assert plan.objective == ebpd_exhaustive(net, [BusDepot("D", 0, 1, 40)], pickups, shelters, 9000, 0, BT)


def test_unreachable_pickup_is_excluded():
    net = TimeDependentNetwork(
        {0: (0, 0), 1: (1, 0), 2: (2, 0), 3: (3, 0)},
        (Arc(0, 0, 1, const(50), 1.0), Arc(1, 1, 2, const(50), 1.0), Arc(2, 3, 2, const(5), 1.0)),
    )
    plan = solve_ebpd(
        net,
        [BusDepot("D", 0, 1, 40)],
        [PickupPoint("P", 1, 10, 40), PickupPoint("Q", 3, 5, 40)],
        [Shelter("S", 2, 100)],
        9000,
        0,
    )
    assert plan.excluded == ("Q",)
    assert plan.unserved == {"Q": 5}
    assert plan.total_evacuated == 10


def test_errors():
    net = line([10])
    with pytest.raises(EvacError):
        solve_ebpd(net, [], [PickupPoint("P", 1, 1, 1)], [Shelter("S", 0, 1)], 100, 0)
    with pytest.raises(EvacError):
        solve_ebpd(net, [BusDepot("D", 0, 1, 4)], [], [], 0, 0)
    with pytest.raises(EvacError):
        solve_ebpd(net, [BusDepot("D", 0, 1, 4)], [PickupPoint("P", 7, 1, 1)], [], 100, 0)
    with pytest.raises(EvacError):
        PickupPoint("P", 0, 5, 0)
    with pytest.raises(EvacError):
        Shelter("S", 0, -1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_matches_exhaustive(seed):
    net, depots, pickups, shelters, deadline, t0 = random_ebpd_instance(random.Random(seed))
    plan = solve_ebpd(net, depots, pickups, shelters, deadline, t0)
    assert plan.method == "exact"
    assert plan.objective == ebpd_exhaustive(net, depots, pickups, shelters, deadline, t0, BT)
    check_invariants(net, plan, pickups, shelters, deadline)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["greedy", "evo"]))
def test_heuristic_plans_keep_invariants(seed, method):
    rng = random.Random(seed)
    net, depots, pickups, shelters, deadline, t0 = random_ebpd_instance(rng, 4, 6, 3, n_nodes=10)
    cfg = EvoConfig(population_size=8, generations=5, seed=seed % 1000)
    plan = solve_ebpd(net, depots, pickups, shelters, deadline, t0, method, evo_config=cfg)
    check_invariants(net, plan, pickups, shelters, deadline)


def test_evo_not_worse_than_greedy():
    rng = random.Random(8)
    for _ in range(5):
        inst = random_ebpd_instance(rng, 5, 6, 3, n_nodes=12)
        greedy = solve_ebpd(*inst, method="greedy")
        evo = solve_ebpd(*inst, method="evo", evo_config=EvoConfig(population_size=12, generations=15))
        assert evo.total_evacuated >= greedy.total_evacuated
        assert evo.key <= greedy.key


def test_budget_fallback_is_reported():
    inst = random_ebpd_instance(random.Random(5))
    plan = solve_ebpd(*inst, method="exact", node_budget=1, evo_config=EvoConfig(population_size=4, generations=2))
    assert plan.method == "evo" and plan.notes


# -- live updates ------------------------------------------------------------


def make_state(demand=30, deadline=9000.0):
    net = line([100, 250])
    state = EvacState.create(
        [BusDepot("D", 0, 1, 40)], [PickupPoint("P", 1, demand, 40)], [Shelter("S", 2, 200)], deadline, 0.0
    )
    return net, state


def test_update_same_demand_not_dirty():
    net, state = make_state()
    state.replan(net, 0.0)
    assert state.update_demand("P", 30) is False
    assert not state.dirty


def test_update_unknown_pickup():
    _, state = make_state()
    with pytest.raises(UnknownPickup):
        state.update_demand("nope", 3)


def test_demand_drop_to_zero_removes_pickup():
    net, state = make_state()
    state.replan(net, 0.0)
    assert state.update_demand("P", 0, now=50.0)
    plan = state.replan(net, 50.0)
    assert plan.routes == [] and plan.total_evacuated == 0


def test_demand_rise_past_seats_leaves_unserved():
    # the deadline leaves time for one trip only
    net, state = make_state(deadline=500.0)
    state.replan(net, 0.0)
    state.update_demand("P", 55, now=20.0)
    plan = state.replan(net, 20.0)
    assert plan.total_evacuated == 40
    assert plan.unserved == {"P": 15}
    assert plan.total_evacuated + sum(plan.unserved.values()) == 55


def test_replan_from_midroute_position():
    net, state = make_state(demand=30)
    first = state.replan(net, 0.0)
    assert first.completion_time == 100 + 90 + 250
    # after boarding at t=100 and leaving at t=190, ten more people show up
    state.update_demand("P", 10, now=200.0)
    plan = state.replan(net, 200.0)
    [route] = plan.routes
    assert route.initial_onboard == 30
    assert route.start == 2 and route.start_time == 440.0
    check = [(v.kind, v.id, v.count) for v in route.visits]
    # turning back for the ten before unloading ends earlier (990 s) than
    # unloading first (1080 s)
    assert check == [(VisitKind.PICKUP, "P", 10), (VisitKind.SHELTER, "S", 40)]
    assert plan.completion_time == 440 + 250 + 50 + 250
    state.advance(10_000.0)
    assert state.evacuated == 40


def test_midroute_start_matches_network():
    net, state = make_state()
    state.replan(net, 0.0)
    [bus] = state.positions(150.0)
    # dwelling at the pick-up until 190
    assert (bus.location, bus.time, bus.onboard) == (1, 190.0, 30)
    [bus] = state.positions(300.0)
    assert bus.location == 2
    assert bus.time == shortest_time_path(net, 1, 2, 190.0).arrival


def test_exports(tmp_path):
    net = line([100, 250])
    plan = solve_ebpd(net, [BusDepot("D", 0, 1, 40)], [PickupPoint("P", 1, 70, 40)], [Shelter("S", 2, 100)], 600, 0)
    assert plan.to_dict()["total_evacuated"] == 40
    plan.write_pickups_csv(tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows == ["pickup,demand,boarded,unserved,visits", "P,70,40,30,1"]
