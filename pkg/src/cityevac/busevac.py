"""Emergency bus pickup-and-delivery.

Buses leave their depots, collect evacuees at pick-up points and unload them
at shelters, possibly over several trips.  Transfers follow a maximal rule:
on arrival a bus boards as many evacuees as the point's boarding cap, its
free seats and the waiting crowd allow, and alights as many as the shelter
still accepts.  Simultaneous arrivals are served in bus order.  Plans are
ranked by evacuees sheltered by the deadline, then by the arrival time of
the last of them.
"""

from __future__ import annotations

import csv
import heapq
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .evo import EvoConfig, EvoResult, IntVectorOps, evolve
from .net import Router, TimedPath, TimeDependentNetwork

EXACT_MAX_BUSES = 2
EXACT_MAX_PICKUPS = 3
EXACT_MAX_SHELTERS = 2
EXACT_NODE_BUDGET = 3_000_000


class EvacError(ValueError):
    pass


class UnknownPickup(EvacError):
    pass


class VisitKind(str, Enum):
    PICKUP = "pickup"
    SHELTER = "shelter"


@dataclass(frozen=True)
class PickupPoint:
    id: str
    location: int
    demand: int
    boarding_cap: int

    def __post_init__(self) -> None:
        if self.demand < 0:
            raise EvacError(f"pickup {self.id}: negative demand")
        if self.boarding_cap < 1:
            raise EvacError(f"pickup {self.id}: boarding cap must be at least 1")


@dataclass(frozen=True)
class Shelter:
    id: str
    location: int
    capacity: int

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise EvacError(f"shelter {self.id}: negative capacity")


@dataclass(frozen=True)
class BusDepot:
    id: str
    location: int
    fleet: int
    bus_capacity: int

    def __post_init__(self) -> None:
        if self.fleet < 0:
            raise EvacError(f"depot {self.id}: negative fleet")
        if self.bus_capacity < 1:
            raise EvacError(f"depot {self.id}: bus capacity must be at least 1")


@dataclass(frozen=True)
class BoardingTimes:
    per_evacuee: float = 2.0
    per_visit: float = 30.0

    def dwell(self, count: int) -> float:
        return self.per_visit + self.per_evacuee * count


@dataclass(frozen=True)
class BusStart:
    """Where and when a bus becomes available, and what it carries."""

    id: str
    depot: str
    location: int
    time: float
    capacity: int
    onboard: int = 0


def fleet_from_depots(depots: Sequence[BusDepot], t0: float) -> list[BusStart]:
    return [
        BusStart(f"{d.id}-{k}", d.id, d.location, t0, d.bus_capacity)
        for d in depots
        for k in range(d.fleet)
    ]


@dataclass(frozen=True)
class Visit:
    kind: VisitKind
    id: str
    location: int
    arrival: float
    count: int
    depart: float
    onboard: int
    path: TimedPath = field(repr=False, compare=False)


@dataclass
class BusRoute:
    bus: str
    depot: str
    start: int
    start_time: float
    capacity: int
    initial_onboard: int = 0
    visits: list[Visit] = field(default_factory=list)

    @property
    def onboard_trajectory(self) -> list[int]:
        return [v.onboard for v in self.visits]


@dataclass
class EvacPlan:
    routes: list[BusRoute]
    unserved: dict[str, int]
    total_evacuated: int
    completion_time: float
    demand: dict[str, int]
    excluded: tuple[str, ...] = ()
    method: str = "exact"
    notes: tuple[str, ...] = ()

    @property
    def objective(self) -> tuple[int, float]:
        return (self.total_evacuated, self.completion_time)

    @property
    def key(self) -> tuple[int, float]:
        """Minimization form of :attr:`objective`."""
        return (-self.total_evacuated, self.completion_time)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "total_evacuated": self.total_evacuated,
            "completion_time_s": self.completion_time,
            "unserved": dict(sorted(self.unserved.items())),
            "excluded": list(self.excluded),
            "notes": list(self.notes),
            "routes": [
                {
                    "bus": r.bus,
                    "depot": r.depot,
                    "start_node": r.start,
                    "start_time_s": r.start_time,
                    "capacity": r.capacity,
                    "initial_onboard": r.initial_onboard,
                    "visits": [
                        {
                            "kind": v.kind.value,
                            "id": v.id,
                            "node": v.location,
                            "arrival_s": v.arrival,
                            "count": v.count,
                            "depart_s": v.depart,
                            "onboard": v.onboard,
                            "arcs": list(v.path.arcs),
                        }
                        for v in r.visits
                    ],
                }
                for r in self.routes
            ],
        }

    def write_pickups_csv(self, path) -> None:
        boarded: dict[str, int] = {pid: 0 for pid in self.demand}
        visits: dict[str, int] = {pid: 0 for pid in self.demand}
        for r in self.routes:
            for v in r.visits:
                if v.kind is VisitKind.PICKUP:
                    boarded[v.id] += v.count
                    visits[v.id] += 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pickup", "demand", "boarded", "unserved", "visits"])
            for pid in sorted(self.demand):
                w.writerow([pid, self.demand[pid], boarded[pid], self.unserved.get(pid, 0), visits[pid]])


# -- problem core ------------------------------------------------------------

_P, _S, _START = 0, 1, 2


class _Problem:
    def __init__(self, net, pickups, shelters, buses, deadline, t0, boarding, router):
        self.net = net
        self.pickups = list(pickups)
        self.shelters = list(shelters)
        self.buses = list(buses)
        self.deadline = deadline
        self.t0 = t0
        self.boarding = boarding
        self.router = router or Router(net)

    def arrive(self, u: int, v: int, t: float) -> float:
        return self.router.arrival(u, v, t)

    def loc(self, kind: int, idx: int) -> int:
        return self.pickups[idx].location if kind == _P else self.shelters[idx].location

    def start_heap(self):
        return [(b.time, k, _START, -1) for k, b in enumerate(self.buses)]


def _exact(pb: _Problem, budget: int):
    """Depth-first branch and bound over productive maximal-transfer plans.

    Events are handled in (time, bus) order; after each one the bus picks
    its next destination.  A visit that would transfer nobody closes the
    branch, so the space is finite.
    """
    n_b = len(pb.buses)
    caps = [b.capacity for b in pb.buses]
    best: list = [None, None]
    nodes = [0]

    def options(b, loc, t, load, last, rem, res):
        out = []
        if load < caps[b]:
            for i, p in enumerate(pb.pickups):
                if rem[i] > 0 and last != (_P, i):
                    a = pb.arrive(loc, p.location, t)
                    if a <= pb.deadline:
                        out.append((a, _P, i))
        if load > 0:
            for j, s in enumerate(pb.shelters):
                if res[j] > 0:
                    a = pb.arrive(loc, s.location, t)
                    if a <= pb.deadline:
                        out.append((a, _S, j))
        out.sort()
        return out

    def dfs(events, locs, loads, lasts, rem, res, evac, comp, routes):
        nodes[0] += 1
        if nodes[0] > budget:
            raise _BudgetExhausted
        todo = sum(loads) + sum(rem)
        ub = evac + min(todo, sum(res) if todo else 0)
        if best[0] is not None:
            lb = max(comp, events[0][0]) if ub > evac and events else comp
            if (-ub, lb) >= best[0]:
                return
        if not events:
            key = (-evac, comp)
            if best[0] is None or key < best[0]:
                best[0], best[1] = key, [tuple(r) for r in routes]
            return
        t, b, kind, idx = events[0]
        rest = events[1:]
        load = loads[b]
        if kind == _P:
            k = min(rem[idx], pb.pickups[idx].boarding_cap, caps[b] - load)
            if k == 0:
                return
            rem = rem[:idx] + (rem[idx] - k,) + rem[idx + 1 :]
            load += k
        elif kind == _S:
            k = min(load, res[idx])
            if k == 0:
                return
            res = res[:idx] + (res[idx] - k,) + res[idx + 1 :]
            load -= k
            evac += k
            comp = max(comp, t)
        if kind == _START:
            depart, loc, last = t, locs[b], None
            route = routes[b]
        else:
            depart = t + pb.boarding.dwell(k)
            loc, last = pb.loc(kind, idx), (kind, idx)
            route = routes[b] + ((kind, idx, t, k, depart),)
        locs2 = locs[:b] + (loc,) + locs[b + 1 :]
        loads2 = loads[:b] + (load,) + loads[b + 1 :]
        lasts2 = lasts[:b] + (last,) + lasts[b + 1 :]
        routes2 = routes[:b] + [route] + routes[b + 1 :]
        for a, k2, i2 in options(b, loc, depart, load, last, rem, res):
            ev = (a, b, k2, i2)
            heap = list(rest)
            _insort(heap, ev)
            dfs(tuple(heap), locs2, loads2, lasts2, rem, res, evac, comp, routes2)
        if load == 0:
            dfs(rest, locs2, loads2, lasts2, rem, res, evac, comp, routes2)

    events = tuple(sorted(pb.start_heap()))
    dfs(
        events,
        tuple(b.location for b in pb.buses),
        tuple(b.onboard for b in pb.buses),
        (None,) * n_b,
        tuple(p.demand for p in pb.pickups),
        tuple(s.capacity for s in pb.shelters),
        0,
        pb.t0,
        [()] * n_b,
    )
    if best[1] is None:
        raise EvacError("no feasible plan: loaded buses cannot reach a shelter in time")
    return best[1]


class _BudgetExhausted(Exception):
    pass


def _insort(events: list, ev) -> None:
    lo = 0
    while lo < len(events) and events[lo][:2] <= ev[:2]:
        lo += 1
    events.insert(lo, ev)


def _decode(pb: _Problem, genes: Sequence[int] = ()):
    """Event-driven policy simulation; gene ``g`` picks option ``g`` at each decision.

    Options at a decision are ordered nearest first, pick-ups ahead of shelters
    while the bus has free seats, so the all-zero genome is the greedy
    nearest-pickup / nearest-shelter baseline.  Pick-ups that reserve a
    farther shelter come last.  Shelter room is claimed in
    advance for every evacuee a bus may carry, so loaded buses never strand.
    """
    n_b = len(pb.buses)
    caps = [b.capacity for b in pb.buses]
    rem = [p.demand for p in pb.pickups]
    res = [s.capacity for s in pb.shelters]
    pclaim = [0] * len(pb.pickups)
    sclaim = [0] * len(pb.shelters)
    bus_p: list = [None] * n_b
    bus_s: list = [None] * n_b
    loads = [b.onboard for b in pb.buses]
    lasts: list = [None] * n_b
    routes: list[list] = [[] for _ in range(n_b)]
    evac, comp = 0, pb.t0
    gi = 0

    def room(j, b):
        own = bus_s[b][1] if bus_s[b] is not None and bus_s[b][0] == j else 0
        return res[j] - sclaim[j] + own

    def set_sclaim(b, j, amount):
        if bus_s[b] is not None:
            sclaim[bus_s[b][0]] -= bus_s[b][1]
        bus_s[b] = (j, amount) if j is not None else None
        if j is not None:
            sclaim[j] += amount

    for b, bus in enumerate(pb.buses):
        if bus.onboard:
            choices = sorted(
                (pb.arrive(bus.location, s.location, bus.time), j)
                for j, s in enumerate(pb.shelters)
                if room(j, b) >= bus.onboard
            )
            choices = [c for c in choices if c[0] <= pb.deadline]
            if not choices:
                raise EvacError(f"bus {bus.id}: no shelter can take its {bus.onboard} evacuees in time")
            set_sclaim(b, choices[0][1], bus.onboard)

    heap = pb.start_heap()
    heapq.heapify(heap)
    while heap:
        t, b, kind, idx = heapq.heappop(heap)
        load = loads[b]
        if kind == _START:
            depart, loc = t, pb.buses[b].location
        else:
            if kind == _P:
                pclaim[idx] -= bus_p[b][1]
                bus_p[b] = None
                k = min(rem[idx], pb.pickups[idx].boarding_cap, caps[b] - load)
                rem[idx] -= k
                load += k
                set_sclaim(b, bus_s[b][0], load)
            else:
                k = min(load, res[idx])
                res[idx] -= k
                load -= k
                evac += k
                if k:
                    comp = max(comp, t)
                set_sclaim(b, None, 0)
            depart = t + pb.boarding.dwell(k)
            loc = pb.loc(kind, idx)
            lasts[b] = (kind, idx)
            routes[b].append((kind, idx, t, k, depart))
        loads[b] = load

        picks, alts, drops = [], [], []
        if load < caps[b]:
            for i, p in enumerate(pb.pickups):
                avail = rem[i] - pclaim[i]
                if avail <= 0 or lasts[b] == (_P, i):
                    continue
                a = pb.arrive(loc, p.location, depart)
                if a > pb.deadline:
                    continue
                most = min(p.boarding_cap, caps[b] - load, rem[i])
                leave = a + pb.boarding.dwell(most)
                targets = sorted(
                    (pb.arrive(p.location, s.location, leave), j)
                    for j, s in enumerate(pb.shelters)
                    if room(j, b) >= load + most
                )
                targets = [x for x in targets if x[0] <= pb.deadline]
                if targets:
                    picks.append((a, i, targets[0][1], most, min(most, avail)))
                    alts.extend((a, i, j, most, min(most, avail)) for _, j in targets[1:])
        if load > 0:
            for j, s in enumerate(pb.shelters):
                if room(j, b) >= load:
                    a = pb.arrive(loc, s.location, depart)
                    if a <= pb.deadline:
                        drops.append((a, j))
        picks.sort()
        alts.sort()
        drops.sort()
        opts = [(_P, o) for o in picks] + [(_S, o) for o in drops] + [(_P, o) for o in alts]
        if load == 0:
            opts.append((_START, None))
        if not opts:
            raise EvacError(f"bus {pb.buses[b].id}: stranded with {load} evacuees")
        g = genes[gi] if gi < len(genes) else 0
        gi += 1
        kind2, o = opts[g % len(opts)]
        if kind2 == _P:
            a, i, j, most, claim = o
            bus_p[b] = (i, claim)
            pclaim[i] += claim
            set_sclaim(b, j, load + most)
            heapq.heappush(heap, (a, b, _P, i))
        elif kind2 == _S:
            a, j = o
            set_sclaim(b, j, load)
            heapq.heappush(heap, (a, b, _S, j))
    return (-evac, comp), [tuple(r) for r in routes]


def _evolve(pb: _Problem, config: EvoConfig, history: list | None = None):
    greedy_key, greedy = _decode(pb)
    n_opts = len(pb.pickups) * len(pb.shelters) + len(pb.shelters) + 1
    demand = sum(p.demand for p in pb.pickups)
    per_trip = max(1, min([p.boarding_cap for p in pb.pickups] or [1]))
    length = min(400, len(pb.buses) * (2 * len(pb.pickups) + 2) + 2 * math.ceil(demand / per_trip))
    ops = IntVectorOps([(0, n_opts - 1)] * length)
    # The decision tree is deep and narrow, so one long run tends to lock
    # into a basin.  Spend the budget on independent restarts instead, each
    # seeded with greedy plus random genomes.
    restarts = max(1, min(5, config.generations // 20))
    result = None
    for r in range(restarts):
        rng = random.Random(f"{config.seed}/{r}")
        seeds = [(0,) * length] + [
            tuple(rng.randrange(n_opts) for _ in range(length))
            for _ in range(config.population_size - 1)
        ]
        sub = replace(config, generations=max(1, config.generations // restarts),
                      seed=rng.getrandbits(64))
        run = evolve(sub, seeds, lambda g: _decode(pb, g)[0], ops)
        if result is None:
            result = run
        else:
            tail = [min(f, result.fitness) for f in run.history]
            best = run if (run.fitness, run.best) < (result.fitness, result.best) else result
            result = EvoResult(best.best, best.fitness, result.history + tail,
                               result.evaluations + run.evaluations)
    if history is not None:
        history.append(result)
    key, routes = _decode(pb, result.best)
    if greedy_key <= key:
        return greedy
    return routes


def _build_plan(pb: _Problem, raw_routes, method, excluded, notes) -> EvacPlan:
    routes = []
    rem = {p.id: p.demand for p in pb.pickups}
    evac, comp = 0, pb.t0
    for b, seq in enumerate(raw_routes):
        bus = pb.buses[b]
        if not seq:
            continue
        route = BusRoute(bus.id, bus.depot, bus.location, bus.time, bus.capacity, bus.onboard)
        loc, t, load = bus.location, bus.time, bus.onboard
        for kind, idx, arrival, count, depart in seq:
            node = pb.loc(kind, idx)
            path = pb.router.path(loc, node, t)
            if path.arrival != arrival:
                raise AssertionError("internal: planned arrival differs from routed path")
            if kind == _P:
                rem[pb.pickups[idx].id] -= count
                load += count
                vid, vk = pb.pickups[idx].id, VisitKind.PICKUP
            else:
                load -= count
                evac += count
                if count:
                    comp = max(comp, arrival)
                vid, vk = pb.shelters[idx].id, VisitKind.SHELTER
            route.visits.append(Visit(vk, vid, node, arrival, count, depart, load, path))
            loc, t = node, depart
        routes.append(route)
    demand = {p.id: p.demand for p in pb.pickups}
    unserved = {pid: n for pid, n in rem.items() if n > 0}
    return EvacPlan(routes, unserved, evac, comp, demand, tuple(excluded), method, tuple(notes))


def _reachable(pb: _Problem, origin: int, t: float) -> set[int]:
    return set(pb.router.tree(origin, t))


def solve_ebpd(
    net: TimeDependentNetwork,
    depots: Sequence[BusDepot],
    pickups: Sequence[PickupPoint],
    shelters: Sequence[Shelter],
    deadline: float,
    t0: float,
    method: str = "auto",
    boarding: BoardingTimes = BoardingTimes(),
    evo_config: EvoConfig | None = None,
    buses: Sequence[BusStart] | None = None,
    router: Router | None = None,
    node_budget: int = EXACT_NODE_BUDGET,
    history: list | None = None,
) -> EvacPlan:
    """Route the bus fleet to shelter as many evacuees as possible by ``deadline``.

    ``buses`` overrides the depot fleets with explicit start states (used for
    re-planning from current positions).  ``method`` is ``exact``, ``greedy``,
    ``evo`` or ``auto`` (exact within 2 buses, 3 pick-ups and 2 shelters).
    Pick-ups and shelters no bus can use because of connectivity are left out
    and listed in :attr:`EvacPlan.excluded`.  If the exact search exceeds
    ``node_budget`` the evolutionary solver takes over and a note says so.
    """
    if deadline <= t0:
        raise EvacError("deadline must be after the start time")
    if buses is None:
        buses = fleet_from_depots(depots, t0)
    if not buses:
        raise EvacError("no buses in the fleet")
    for kind, items in (("pickup", pickups), ("shelter", shelters), ("depot", depots), ("bus", buses)):
        ids = [x.id for x in items]
        if len(set(ids)) != len(ids):
            raise EvacError(f"duplicate {kind} id")
        for x in items:
            if x.location not in net:
                raise EvacError(f"{kind} {x.id}: location {x.location} not in network")
    pb = _Problem(net, pickups, shelters, buses, deadline, t0, boarding, router)

    # connectivity screen
    from_buses: set[int] = set()
    for b in buses:
        from_buses |= _reachable(pb, b.location, b.time)
    shelter_nodes = {s.location for s in shelters if s.location in from_buses}
    excluded = []
    keep_p = []
    for p in sorted(pickups, key=lambda p: p.id):
        ok = p.location in from_buses and bool(shelter_nodes & _reachable(pb, p.location, t0))
        (keep_p if ok else excluded).append(p)
    keep_s = [s for s in sorted(shelters, key=lambda s: s.id) if s.location in from_buses]
    excluded_ids = [p.id for p in excluded] + [s.id for s in shelters if s not in keep_s]
    pb = _Problem(net, keep_p, keep_s, buses, deadline, t0, boarding, pb.router)

    notes = []
    if method == "auto":
        small = (
            len(buses) <= EXACT_MAX_BUSES
            and len(keep_p) <= EXACT_MAX_PICKUPS
            and len(keep_s) <= EXACT_MAX_SHELTERS
        )
        method = "exact" if small else "evo"
    if method == "exact":
        try:
            raw = _exact(pb, node_budget)
        except _BudgetExhausted:
            notes.append(f"exact search exceeded {node_budget} nodes; evolutionary result returned")
            method = "evo"
            raw = _evolve(pb, evo_config or EvoConfig(), history)
    elif method == "greedy":
        raw = _decode(pb)[1]
    elif method == "evo":
        raw = _evolve(pb, evo_config or EvoConfig(), history)
    else:
        raise EvacError(f"unknown method {method!r}")
    plan = _build_plan(pb, raw, method, excluded_ids, notes)
    for p in excluded:
        if p.demand:
            plan.unserved[p.id] = p.demand
        plan.demand[p.id] = p.demand
    return plan


def replay_bus_route(net: TimeDependentNetwork, route: BusRoute, penalties=None) -> list[str]:
    """Re-drive a route over ``net``; returns mismatches (empty if exact)."""
    problems = []
    loc, t = route.start, route.start_time
    for k, v in enumerate(route.visits):
        if v.path.origin != loc or v.path.departure != t:
            problems.append(f"visit {k}: leg starts at ({v.path.origin}, {v.path.departure}), expected ({loc}, {t})")
        times = net.traverse(v.path.arcs, t, penalties)
        if times[-1] != v.arrival:
            problems.append(f"visit {k}: replayed arrival {times[-1]} != recorded {v.arrival}")
        if v.path.dest != v.location:
            problems.append(f"visit {k}: leg ends at {v.path.dest}, not {v.location}")
        loc, t = v.location, v.depart
    return problems


# -- live state and re-planning ---------------------------------------------


@dataclass
class EvacState:
    """Mutable view of an evacuation in progress.

    ``advance`` books every planned transfer strictly before a time, so a
    sensor reading at ``t`` precedes arrivals at ``t``; ``update_demand``
    records such a reading; ``replan`` solves again from where the buses are.
    """

    pickups: dict[str, PickupPoint]
    shelters: dict[str, Shelter]
    buses: dict[str, BusStart]
    deadline: float
    boarding: BoardingTimes = BoardingTimes()
    plan: EvacPlan | None = None
    dirty: bool = False
    evacuated: int = 0
    completion: float | None = None
    _applied: dict[str, int] = field(default_factory=dict)

    @classmethod
    def create(cls, depots, pickups, shelters, deadline, t0, boarding=BoardingTimes()) -> "EvacState":
        return cls(
            {p.id: p for p in pickups},
            {s.id: s for s in shelters},
            {b.id: b for b in fleet_from_depots(depots, t0)},
            deadline,
            boarding,
        )

    def advance(self, now: float) -> None:
        if self.plan is None:
            return
        for route in self.plan.routes:
            done = self._applied.get(route.bus, 0)
            while done < len(route.visits) and route.visits[done].arrival < now:
                if self.dirty:
                    raise EvacError("plan is stale after a demand update; replan first")
                v = route.visits[done]
                if v.kind is VisitKind.PICKUP:
                    p = self.pickups[v.id]
                    self.pickups[v.id] = replace(p, demand=max(0, p.demand - v.count))
                else:
                    s = self.shelters[v.id]
                    self.shelters[v.id] = replace(s, capacity=s.capacity - v.count)
                    self.evacuated += v.count
                    if v.count:
                        self.completion = max(self.completion or v.arrival, v.arrival)
                done += 1
            self._applied[route.bus] = done

    def update_demand(self, pickup_id: str, new_demand: int, now: float | None = None) -> bool:
        """Record a new waiting count; returns whether a re-solve is needed."""
        if pickup_id not in self.pickups:
            raise UnknownPickup(f"unknown pickup {pickup_id!r}")
        if new_demand < 0:
            raise EvacError("demand must be non-negative")
        if now is not None:
            self.advance(now)
        p = self.pickups[pickup_id]
        if p.demand != new_demand:
            self.pickups[pickup_id] = replace(p, demand=new_demand)
            self.dirty = True
        return self.dirty

    def positions(self, now: float) -> list[BusStart]:
        """Each bus as a depot-equivalent: next node it can leave from, with its load."""
        out = []
        routes = {r.bus: r for r in self.plan.routes} if self.plan else {}
        for bid in sorted(self.buses):
            bus = self.buses[bid]
            route = routes.get(bid)
            if route is None:
                out.append(replace(bus, time=max(bus.time, now)))
                continue
            loc, t, load = route.start, route.start_time, route.initial_onboard
            placed = False
            for v in route.visits:
                if now < v.path.departure:
                    break
                if now <= v.arrival:
                    for node, nt in zip(v.path.nodes, v.path.node_times):
                        if nt >= now:
                            loc, t = node, nt
                            break
                    placed = True
                    break
                loc, t, load = v.location, v.depart, v.onboard
            if not placed:
                t = max(t, now)
            out.append(replace(bus, location=loc, time=t, onboard=load))
        return out

    def replan(self, net: TimeDependentNetwork, now: float, method: str = "auto",
               evo_config: EvoConfig | None = None, router: Router | None = None,
               history: list | None = None) -> EvacPlan:
        if self.plan is not None:
            was, self.dirty = self.dirty, False
            self.advance(now)
            self.dirty = was
        starts = self.positions(now)
        t0 = min([now] + [b.time for b in starts])
        plan = solve_ebpd(
            net,
            (),
            sorted(self.pickups.values(), key=lambda p: p.id),
            sorted(self.shelters.values(), key=lambda s: s.id),
            self.deadline,
            t0,
            method,
            self.boarding,
            evo_config,
            buses=starts,
            router=router,
            history=history,
        )
        self.buses = {b.id: b for b in starts}
        self.plan = plan
        self._applied = {}
        self.dirty = False
        return plan

    @property
    def total_evacuated(self) -> int:
        """Evacuees already sheltered plus those the current plan will shelter."""
        pending = 0
        if self.plan is not None:
            for route in self.plan.routes:
                done = self._applied.get(route.bus, 0)
                pending += sum(v.count for v in route.visits[done:] if v.kind is VisitKind.SHELTER)
        return self.evacuated + pending


def total_demand(pickups: Iterable[PickupPoint]) -> int:
    return sum(p.demand for p in pickups)
