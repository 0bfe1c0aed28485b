import random

import pytest
from hypothesis import given, settings, strategies as st

from cityevac.cover import Hospital
from cityevac.dispatch import (
    Ambulance,
    DispatchError,
    LegUnreachable,
    Patient,
    ServiceTimes,
    StopKind,
    make_fleet,
    replay_route,
    route_single,
    solve_group_dispatch,
)
from cityevac.evo import EvoConfig
from cityevac.generators import grid_network, random_dispatch_instance
from cityevac.net import Arc, TimeDependentNetwork, TravelTimeProfile
from cityevac.oracles import dispatch_exhaustive, simple_paths, walk_arrival

SVC = ServiceTimes()
const = TravelTimeProfile.constant


def line_net(times):
    """Bidirectional path 0 - 1 - ... with symmetric constant times."""
    arcs = []
    for k, t in enumerate(times):
        arcs.append(Arc(2 * k, k, k + 1, const(t), 100.0))
        arcs.append(Arc(2 * k + 1, k + 1, k, const(t), 100.0))
    return TimeDependentNetwork({k: (k, 0.0) for k in range(len(times) + 1)}, tuple(arcs))


def check_plan(net, plan, patients):
    for route in plan.routes:
        assert replay_route(net, route) == []
        for a, b in zip(route.stops, route.stops[1:]):
            if a.kind is StopKind.PICKUP:
                assert b.kind is StopKind.DELIVER and b.patient == a.patient
        if route.stops:
            assert route.stops[-1].kind is not StopKind.PICKUP
    served = [s.patient for r in plan.routes for s in r.stops if s.kind is not StopKind.DELIVER]
    assert sorted(served) == sorted(p.id for p in patients)
    group = {p.id: p.group.value for p in patients}
    for r in plan.routes:
        for s in r.stops:
            if s.kind is StopKind.PICKUP:
                assert group[s.patient] == "serious"
            if s.kind is StopKind.TREAT:
                assert group[s.patient] == "slight"
    assert plan.objective == max(plan.waits.values(), default=0.0)


# -- route_single ------------------------------------------------------------


def test_route_single_same_node():
    net = line_net([10])
    res = route_single(net, 0, 0, 100.0)
    assert res.outbound.arcs == () and res.back.arcs == ()
    assert res.total_time == SVC.pickup


def test_route_single_constant_is_static_shortest():
    net = line_net([10, 20, 30])
    res = route_single(net, 0, 3, 0.0)
    assert res.outbound.arrival == 60
    assert res.back.departure == 60 + SVC.pickup
    assert res.total_time == 60 + SVC.pickup + 60


def test_route_single_asymmetric_legs():
    # the direct road back 2 -> 0 is jammed early in the day, the way out is not
    jam_early = TravelTimeProfile(((0, 500), (100, 500), (600, 10), (80000, 10)))
    arcs = (
        Arc(0, 0, 2, const(10), 1.0),
        Arc(1, 2, 0, jam_early, 1.0),
        Arc(2, 0, 1, const(30), 1.0),
        Arc(3, 1, 2, const(30), 1.0),
        Arc(4, 2, 1, const(30), 1.0),
        Arc(5, 1, 0, const(30), 1.0),
    )
    net = TimeDependentNetwork({0: (0, 0), 1: (1, 0), 2: (2, 0)}, arcs)
    res = route_single(net, 0, 2, 0.0, on_scene=0.0)
    assert res.outbound.arcs == (0,)
    assert res.back.departure == 10.0
    assert res.back.arcs == (4, 5)
    for leg in (res.outbound, res.back):
        best = min(walk_arrival(net, s, leg.departure) for s in simple_paths(net, leg.origin, leg.dest))
        assert leg.arrival == best


def test_route_single_reports_leg():
    arcs = (Arc(0, 0, 1, const(5), 1.0),)
    net = TimeDependentNetwork({0: (0, 0), 1: (1, 0)}, arcs)
    with pytest.raises(LegUnreachable) as info:
        route_single(net, 0, 1, 0.0)
    assert info.value.leg == "return"
    with pytest.raises(LegUnreachable) as info:
        route_single(net, 1, 0, 0.0)
    assert info.value.leg == "outbound"


# -- group dispatch ----------------------------------------------------------


def test_no_patients():
    net = line_net([10])
    plan = solve_group_dispatch(net, [Hospital("H", 0, 0)], [Ambulance("A", "H")], [], 0.0)
    assert plan.objective == 0 and all(not r.stops for r in plan.routes)


def test_empty_fleet():
    with pytest.raises(DispatchError):
        solve_group_dispatch(line_net([10]), [Hospital("H", 0, 0)], [], [], 0.0)


def test_single_serious_patient():
    net = line_net([10, 15])
    p = Patient("P", 2, "serious")
    plan = solve_group_dispatch(net, [Hospital("H", 0, 0)], [Ambulance("A", "H")], [p], 0.0)
    assert plan.waits == {"P": 25.0}
    assert plan.objective == 25.0
    kinds = [s.kind for s in plan.routes[0].stops]
    assert kinds == [StopKind.PICKUP, StopKind.DELIVER]
    check_plan(net, plan, [p])


def test_two_serious_patients_order():
    # near patient 10 s away, far patient 100 s away (other direction)
    arcs = []
    for k, (u, v, t) in enumerate([(0, 1, 10), (1, 0, 10), (0, 2, 100), (2, 0, 100)]):
        arcs.append(Arc(k, u, v, const(t), 1.0))
    net = TimeDependentNetwork({0: (0, 0), 1: (1, 0), 2: (2, 0)}, tuple(arcs))
    hs = [Hospital("H", 0, 0)]
    ps = [Patient("near", 1, "serious"), Patient("far", 2, "serious")]
    plan = solve_group_dispatch(net, hs, [Ambulance("A", "H")], ps, 0.0)
    # far first: far waits 100, near waits 100+180+100+120+10 = 510
    # near first: near waits 10, far waits 10+180+10+120+100 = 420
    assert plan.objective == 420
    assert [s.patient for s in plan.routes[0].stops][::2] == ["near", "far"]
    assert plan.objective == dispatch_exhaustive(net, hs, [Ambulance("A", "H")], ps, 0.0, SVC)


def test_slight_patients_are_treated_not_transported():
    net = line_net([10, 10])
    ps = [Patient("a", 1, "slight"), Patient("b", 2, "slight")]
    plan = solve_group_dispatch(net, [Hospital("H", 0, 0)], [Ambulance("A", "H")], ps, 0.0)
    assert [s.kind for s in plan.routes[0].stops] == [StopKind.TREAT, StopKind.TREAT]
    assert plan.waits == {"a": 10.0, "b": 10.0 + SVC.on_site + 10.0}


def test_onset_after_arrival_waits_for_patient():
    net = line_net([10])
    p = Patient("late", 1, "slight", onset=50.0)
    plan = solve_group_dispatch(net, [Hospital("H", 0, 0)], [Ambulance("A", "H")], [p], 0.0)
    stop = plan.routes[0].stops[0]
    assert stop.arrival == 10 and stop.service_start == 50
    assert plan.waits == {"late": 0.0}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_matches_exhaustive(seed):
    net, hs, ambs, ps, t0 = random_dispatch_instance(random.Random(seed))
    plan = solve_group_dispatch(net, hs, ambs, ps, t0)
    assert plan.method == "exact"
    assert plan.objective == dispatch_exhaustive(net, hs, ambs, ps, t0, SVC)
    check_plan(net, plan, ps)


def test_nearest_delivery_matches_exhaustive():
    rng = random.Random(12)
    for _ in range(10):
        net, hs, ambs, ps, t0 = random_dispatch_instance(rng)
        plan = solve_group_dispatch(net, hs, ambs, ps, t0, deliver="nearest")
        assert plan.objective == dispatch_exhaustive(net, hs, ambs, ps, t0, SVC, "nearest")


def test_evo_never_worse_than_greedy():
    rng = random.Random(3)
    cfg = EvoConfig(population_size=16, generations=15)
    for _ in range(4):
        net, hs, ambs, ps, t0 = random_dispatch_instance(rng, 4, 12, n_nodes=12)
        greedy = solve_group_dispatch(net, hs, ambs, ps, t0, "greedy")
        evo = solve_group_dispatch(net, hs, ambs, ps, t0, "evo", evo_config=cfg)
        assert evo.objective <= greedy.objective
        check_plan(net, evo, ps)
        check_plan(net, greedy, ps)


def test_evo_reaches_optimum_on_five_patient_ordering():
    rng = random.Random(17)
    net, hs, ambs, ps, t0 = random_dispatch_instance(rng, 1, 5)
    exact = dispatch_exhaustive(net, hs, ambs, ps, t0, SVC)
    evo = solve_group_dispatch(net, hs, ambs, ps, t0, "evo", evo_config=EvoConfig(generations=200, seed=1))
    assert evo.objective == exact


def test_make_fleet():
    hs = [Hospital("A", 0, 0), Hospital("B", 1, 0)]
    fleet = make_fleet(hs, {"A": 2, "B": 1})
    assert [a.id for a in fleet] == ["A-0", "A-1", "B-0"]


def test_exports(tmp_path):
    net = grid_network(3, 3)
    hs = [Hospital("H", 0, 0)]
    ps = [Patient("p1", 8, "serious"), Patient("p2", 4, "slight")]
    plan = solve_group_dispatch(net, hs, [Ambulance("A", "H")], ps, 0.0)
    doc = plan.to_dict()
    assert doc["objective_s"] == plan.objective
    plan.write_waits_csv(tmp_path / "w.csv")
    assert (tmp_path / "w.csv").read_text().splitlines()[0] == "patient,wait_s"
