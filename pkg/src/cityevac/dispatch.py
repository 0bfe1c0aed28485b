"""Ambulance routing: single-call round trips and group dispatch.

Group dispatch serves a set of patients split into slightly and seriously
injured.  Slight cases are treated where they lie; serious cases are picked
up and driven to a hospital, one per trip.  The objective is the longest
wait (service start minus onset) over all patients.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .cover import Hospital
from .evo import EvoConfig, PermutationOps, evolve
from .net import Router, TimedPath, TimeDependentNetwork, Unreachable

EXACT_MAX_AMBULANCES = 3
EXACT_MAX_PATIENTS = 6


class DispatchError(ValueError):
    pass


class LegUnreachable(Unreachable):
    def __init__(self, leg: str, origin: int, dest: int) -> None:
        super().__init__(origin, dest)
        self.leg = leg
        self.args = (f"{leg} leg: node {dest} unreachable from node {origin}",)


class PatientGroup(str, Enum):
    SLIGHT = "slight"
    SERIOUS = "serious"


class StopKind(str, Enum):
    TREAT = "treat-on-site"
    PICKUP = "pickup"
    DELIVER = "deliver-hospital"


@dataclass(frozen=True)
class Patient:
    id: str
    location: int
    group: PatientGroup
    onset: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "group", PatientGroup(self.group))
        if self.onset < 0:
            raise DispatchError(f"patient {self.id}: negative onset")


@dataclass(frozen=True)
class Ambulance:
    id: str
    hospital: str


@dataclass(frozen=True)
class ServiceTimes:
    on_site: float = 300.0
    pickup: float = 180.0
    handover: float = 120.0


@dataclass(frozen=True)
class Stop:
    kind: StopKind
    location: int
    arrival: float
    service_start: float
    depart: float
    patient: str | None
    path: TimedPath = field(repr=False)


@dataclass
class AmbulanceRoute:
    ambulance: str
    hospital: str
    start: int
    start_time: float
    stops: list[Stop] = field(default_factory=list)


@dataclass
class DispatchPlan:
    routes: list[AmbulanceRoute]
    waits: dict[str, float]
    method: str = "exact"

    @property
    def objective(self) -> float:
        return max(self.waits.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "objective_s": self.objective,
            "method": self.method,
            "routes": [
                {
                    "ambulance": r.ambulance,
                    "hospital": r.hospital,
                    "start_node": r.start,
                    "start_time_s": r.start_time,
                    "stops": [
                        {
                            "kind": s.kind.value,
                            "node": s.location,
                            "patient": s.patient,
                            "arrival_s": s.arrival,
                            "service_start_s": s.service_start,
                            "depart_s": s.depart,
                            "arcs": list(s.path.arcs),
                        }
                        for s in r.stops
                    ],
                }
                for r in self.routes
            ],
        }

    def write_waits_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["patient", "wait_s"])
            for pid, wait in sorted(self.waits.items()):
                w.writerow([pid, wait])


@dataclass
class DarpResult:
    outbound: TimedPath
    back: TimedPath
    on_scene: float

    @property
    def total_time(self) -> float:
        return self.back.arrival - self.outbound.departure


def route_single(
    net: TimeDependentNetwork,
    hospital: int,
    demand: int,
    departure: float,
    on_scene: float = ServiceTimes.pickup,
    router: Router | None = None,
) -> DarpResult:
    """Hospital -> scene -> hospital round trip on shortest-time paths."""
    router = router or Router(net)
    try:
        out = router.path(hospital, demand, departure)
    except Unreachable:
        raise LegUnreachable("outbound", hospital, demand) from None
    try:
        back = router.path(demand, hospital, out.arrival + on_scene)
    except Unreachable:
        raise LegUnreachable("return", demand, hospital) from None
    return DarpResult(out, back, on_scene)


class _Fleet:
    """Shared problem data and the route simulator."""

    def __init__(self, net, hospitals, ambulances, patients, t0, service, deliver, router):
        self.net = net
        self.hospitals = {h.id: h for h in hospitals}
        self.ambulances = sorted(ambulances, key=lambda a: a.id)
        self.patients = sorted(patients, key=lambda p: p.id)
        self.t0 = t0
        self.service = service
        self.deliver = deliver
        self.router = router or Router(net)
        for a in self.ambulances:
            if a.hospital not in self.hospitals:
                raise DispatchError(f"ambulance {a.id}: unknown hospital {a.hospital}")
        self._prefix: dict = {}

    def home(self, amb_index: int) -> int:
        return self.hospitals[self.ambulances[amb_index].hospital].location

    def _drop_site(self, amb_index, loc, t):
        if self.deliver == "home":
            h = self.hospitals[self.ambulances[amb_index].hospital]
            return h.location, self.router.arrival(loc, h.location, t)
        best = None
        for hid in sorted(self.hospitals):
            node = self.hospitals[hid].location
            a = self.router.arrival(loc, node, t)
            if best is None or a < best[1]:
                best = (node, a)
        return best

    def step(self, amb_index, state, p):
        """Serve patient ``p`` from state ``(loc, t, max_wait, sum_wait)``."""
        loc, t, mx, sm = state
        arr = self.router.arrival(loc, p.location, t)
        if arr == math.inf:
            raise LegUnreachable("to-patient", loc, p.location)
        start = max(arr, p.onset)
        wait = start - p.onset
        if p.group is PatientGroup.SLIGHT:
            return (p.location, start + self.service.on_site, max(mx, wait), sm + wait)
        leave = start + self.service.pickup
        node, back = self._drop_site(amb_index, p.location, leave)
        if back == math.inf:
            raise LegUnreachable("to-hospital", p.location, node)
        return (node, back + self.service.handover, max(mx, wait), sm + wait)

    def route_cost(self, amb_index, seq):
        """End state ``(loc, t, max_wait, sum_wait)`` of a route, memoized on prefixes."""
        key = (amb_index, tuple(seq))
        hit = self._prefix.get(key)
        if hit is not None:
            return hit
        if not seq:
            state = (self.home(amb_index), self.t0, 0.0, 0.0)
        else:
            state = self.step(amb_index, self.route_cost(amb_index, seq[:-1]), self.patients[seq[-1]])
        if len(self._prefix) > 400000:
            self._prefix.clear()
        self._prefix[key] = state
        return state

    def build_route(self, amb_index, seq) -> tuple[AmbulanceRoute, dict[str, float]]:
        amb = self.ambulances[amb_index]
        loc, t = self.home(amb_index), self.t0
        route = AmbulanceRoute(amb.id, amb.hospital, loc, t)
        waits = {}
        for k in seq:
            p = self.patients[k]
            path = self.router.path(loc, p.location, t)
            start = max(path.arrival, p.onset)
            waits[p.id] = start - p.onset
            if p.group is PatientGroup.SLIGHT:
                depart = start + self.service.on_site
                route.stops.append(Stop(StopKind.TREAT, p.location, path.arrival, start, depart, p.id, path))
                loc, t = p.location, depart
                continue
            depart = start + self.service.pickup
            route.stops.append(Stop(StopKind.PICKUP, p.location, path.arrival, start, depart, p.id, path))
            node, _ = self._drop_site(amb_index, p.location, depart)
            back = self.router.path(p.location, node, depart)
            leave = back.arrival + self.service.handover
            route.stops.append(Stop(StopKind.DELIVER, node, back.arrival, back.arrival, leave, p.id, back))
            loc, t = node, leave
        return route, waits

    def build_plan(self, assignment: Sequence[Sequence[int]], method: str) -> DispatchPlan:
        routes, waits = [], {}
        for a, seq in enumerate(assignment):
            route, w = self.build_route(a, seq)
            routes.append(route)
            waits.update(w)
        return DispatchPlan(routes, dict(sorted(waits.items())), method)

    def cost(self, assignment):
        mx, sm = 0.0, 0.0
        for a, seq in enumerate(assignment):
            _, _, m, s = self.route_cost(a, tuple(seq))
            mx, sm = max(mx, m), sm + s
        return (mx, sm)


def make_fleet(hospitals: Sequence[Hospital], counts: dict[str, int]) -> list[Ambulance]:
    """Ambulances ``<hospital>-<k>`` for each hospital's fleet count."""
    return [Ambulance(f"{h.id}-{k}", h.id) for h in hospitals for k in range(counts.get(h.id, 0))]


def solve_group_dispatch(
    net: TimeDependentNetwork,
    hospitals: Sequence[Hospital],
    ambulances: Sequence[Ambulance],
    patients: Sequence[Patient],
    t0: float,
    method: str = "auto",
    service: ServiceTimes = ServiceTimes(),
    deliver: str = "home",
    evo_config: EvoConfig | None = None,
    router: Router | None = None,
    history: list | None = None,
) -> DispatchPlan:
    """Minimize the longest patient wait.

    ``method``: ``exact`` enumerates every split of patients over ambulances
    and every visiting order; ``greedy`` repeatedly serves the pair with the
    earliest possible service start; ``evo`` seeds the evolutionary kernel
    with the greedy plan; ``auto`` is exact up to 3 ambulances and 6 patients.
    ``deliver`` is ``home`` or ``nearest``.
    """
    if not ambulances:
        raise DispatchError("empty fleet")
    if deliver not in ("home", "nearest"):
        raise DispatchError(f"unknown delivery rule {deliver!r}")
    if len({p.id for p in patients}) != len(patients):
        raise DispatchError("duplicate patient id")
    for p in patients:
        if p.location not in net:
            raise DispatchError(f"patient {p.id}: location {p.location} not in network")
    fleet = _Fleet(net, hospitals, ambulances, patients, t0, service, deliver, router)
    if method == "auto":
        small = len(ambulances) <= EXACT_MAX_AMBULANCES and len(patients) <= EXACT_MAX_PATIENTS
        method = "exact" if small else "evo"
    if method == "exact":
        assignment = _exact(fleet)
    elif method == "greedy":
        assignment = _greedy(fleet)
    elif method == "evo":
        assignment = _evolve(fleet, evo_config or EvoConfig(), history)
    else:
        raise DispatchError(f"unknown method {method!r}")
    return fleet.build_plan(assignment, method)


def _exact(fleet: _Fleet):
    n, m = len(fleet.patients), len(fleet.ambulances)
    # best[a][mask] = ((max_wait, sum_wait), order) over orderings of mask
    best = []
    for a in range(m):
        table = {0: ((0.0, 0.0), ())}

        def dfs(seq, mask, state):
            for k in range(n):
                if mask & (1 << k):
                    continue
                nseq = seq + (k,)
                nstate = fleet.route_cost(a, nseq)
                cand = ((nstate[2], nstate[3]), nseq)
                nmask = mask | (1 << k)
                if nmask not in table or cand < table[nmask]:
                    table[nmask] = cand
                dfs(nseq, nmask, nstate)

        dfs((), 0, fleet.route_cost(a, ()))
        best.append(table)

    top = None
    for owners in itertools.product(range(m), repeat=n):
        masks = [0] * m
        for k, a in enumerate(owners):
            masks[a] |= 1 << k
        mx, sm = 0.0, 0.0
        for a in range(m):
            (w, s), _ = best[a][masks[a]]
            mx, sm = max(mx, w), sm + s
        key = (mx, sm, owners)
        if top is None or key < top[0]:
            top = (key, [best[a][masks[a]][1] for a in range(m)])
    return top[1]


def _greedy(fleet: _Fleet):
    m = len(fleet.ambulances)
    states = [fleet.route_cost(a, ()) for a in range(m)]
    routes: list[tuple[int, ...]] = [() for _ in range(m)]
    left = list(range(len(fleet.patients)))
    while left:
        pick = None
        for a in range(m):
            loc, t = states[a][0], states[a][1]
            for k in left:
                p = fleet.patients[k]
                start = max(fleet.router.arrival(loc, p.location, t), p.onset)
                key = (start, a, k)
                if pick is None or key < pick:
                    pick = key
        _, a, k = pick
        if math.isinf(pick[0]):
            raise LegUnreachable("to-patient", states[a][0], fleet.patients[k].location)
        routes[a] = routes[a] + (k,)
        states[a] = fleet.route_cost(a, routes[a])
        left.remove(k)
    return routes


def _encode(routes, n):
    genome = []
    for a, seq in enumerate(routes):
        if a:
            genome.append(n + a - 1)
        genome.extend(seq)
    return tuple(genome)


def _decode(genome, n, m):
    routes, cur = [], []
    for g in genome:
        if g >= n:
            routes.append(tuple(cur))
            cur = []
        else:
            cur.append(g)
    routes.append(tuple(cur))
    return routes


def _evolve(fleet: _Fleet, config: EvoConfig, history: list | None = None):
    n, m = len(fleet.patients), len(fleet.ambulances)
    greedy = _greedy(fleet)
    if n == 0:
        return greedy
    seed = _encode(greedy, n)
    result = evolve(config, [seed], lambda g: fleet.cost(_decode(g, n, m)), PermutationOps())
    if history is not None:
        history.append(result)
    best = _decode(result.best, n, m)
    if fleet.cost(greedy) <= fleet.cost(best):
        return greedy
    return best


def replay_route(net: TimeDependentNetwork, route: AmbulanceRoute, penalties=None) -> list[str]:
    """Re-drive a route over ``net``; returns mismatches (empty if exact)."""
    problems = []
    loc, t = route.start, route.start_time
    for k, stop in enumerate(route.stops):
        if stop.path.origin != loc or stop.path.departure != t:
            problems.append(f"stop {k}: leg starts at ({stop.path.origin}, {stop.path.departure}), expected ({loc}, {t})")
        times = net.traverse(stop.path.arcs, t, penalties)
        if times[-1] != stop.arrival:
            problems.append(f"stop {k}: replayed arrival {times[-1]} != recorded {stop.arrival}")
        if stop.path.dest != stop.location:
            problems.append(f"stop {k}: leg ends at {stop.path.dest}, not {stop.location}")
        if stop.service_start < stop.arrival:
            problems.append(f"stop {k}: service starts before arrival")
        loc, t = stop.location, stop.depart
    return problems
