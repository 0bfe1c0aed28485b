"""Brute-force reference solvers.

Each oracle enumerates its whole decision space with plain loops and shares
no search code with the production solvers; only profile evaluation is
common.  They are exponential and refuse instances beyond their bounds.
"""

from __future__ import annotations

import itertools
import math
from typing import Mapping

from .net import TimeDependentNetwork, Unreachable, evaluate_profile, shortest_time_path


class InstanceTooLarge(ValueError):
    pass


def simple_paths(net: TimeDependentNetwork, origin: int, dest: int, blocked_ok: bool = False):
    """All simple arc sequences from origin to dest (iterative DFS)."""
    if origin == dest:
        yield ()
        return
    stack = [(origin, (), frozenset([origin]))]
    while stack:
        node, seq, seen = stack.pop()
        for aid in net.outgoing(node):
            arc = net.arc(aid)
            if arc.blocked and not blocked_ok:
                continue
            if arc.head in seen:
                continue
            if arc.head == dest:
                yield seq + (aid,)
            else:
                stack.append((arc.head, seq + (aid,), seen | {arc.head}))


def walk_arrival(
    net: TimeDependentNetwork,
    seq,
    departure: float,
    penalties: Mapping[int, float] | None = None,
) -> float:
    t = departure
    for aid in seq:
        tt = evaluate_profile(net.arc(aid).profile, t)
        if penalties:
            tt *= penalties.get(aid, 1.0)
        t = t + tt
    return t


def brute_force_arrival(
    net: TimeDependentNetwork,
    origin: int,
    dest: int,
    departure: float,
    penalties: Mapping[int, float] | None = None,
) -> float:
    """Minimum arrival over every simple path; ``inf`` when none exists."""
    if len(net.nodes) > 12:
        raise InstanceTooLarge("path enumeration is limited to 12 nodes")
    best = math.inf
    for seq in simple_paths(net, origin, dest):
        best = min(best, walk_arrival(net, seq, departure, penalties))
    return best


# -- covering ------------------------------------------------------------------


def accp_exhaustive(net, hospitals, communities, threshold, instant):
    """Best ``(covered, total_time)`` and assignment over every assignment.

    Each community is either uncovered or assigned to any hospital within
    the threshold; the candidate counts only if capacities hold.
    """
    if len(hospitals) > 4 or len(communities) > 8:
        raise InstanceTooLarge("covering oracle is limited to 4 hospitals and 8 communities")
    tt = {}
    for h in hospitals:
        for c in communities:
            try:
                tt[(h.id, c.id)] = shortest_time_path(net, h.location, c.location, instant).arrival - instant
            except Unreachable:
                tt[(h.id, c.id)] = math.inf
    # pairs beyond the threshold can never appear, so leave them out up front
    options = [[None] + [h for h in hospitals if tt[(h.id, c.id)] <= threshold] for c in communities]
    best_key, best = None, None
    for combo in itertools.product(*options):
        load = {}
        ok = True
        for c, h in zip(communities, combo):
            if h is None:
                continue
            load[h.id] = load.get(h.id, 0) + c.population
            if load[h.id] > h.capacity:
                ok = False
                break
        if not ok:
            continue
        pairs = [(h.id, c.id) for c, h in zip(communities, combo) if h is not None]
        covered = sum(c.population for c, h in zip(communities, combo) if h is not None)
        total = math.fsum(tt[p] for p in pairs)
        key = (-covered, total, tuple(sorted(pairs)))
        if best_key is None or key < best_key:
            best_key = key
            best = {c: h for h, c in pairs}
    return (-best_key[0], best_key[1]), best


# -- group dispatch ------------------------------------------------------------


def _compositions(n, parts):
    """Cut points splitting a length-n sequence into ``parts`` ordered pieces."""
    for cuts in itertools.combinations_with_replacement(range(n + 1), parts - 1):
        yield (0, *cuts, n)


def dispatch_exhaustive(net, hospitals, ambulances, patients, t0, service, deliver="home"):
    """Minimum longest wait over every permutation cut into ambulance routes."""
    if len(ambulances) > 3 or len(patients) > 6:
        raise InstanceTooLarge("dispatch oracle is limited to 3 ambulances and 6 patients")
    if not patients:
        return 0.0
    hosp = {h.id: h.location for h in hospitals}
    ambs = sorted(ambulances, key=lambda a: a.id)
    memo = {}

    def arrive(u, v, t):
        key = (u, v, t)
        if key not in memo:
            try:
                memo[key] = shortest_time_path(net, u, v, t).arrival
            except Unreachable:
                memo[key] = math.inf
        return memo[key]

    def drive(amb, seq):
        here, t, worst = hosp[amb.hospital], t0, 0.0
        for p in seq:
            start = max(arrive(here, p.location, t), p.onset)
            worst = max(worst, start - p.onset)
            if p.group.value == "slight":
                here, t = p.location, start + service.on_site
                continue
            leave = start + service.pickup
            if deliver == "home":
                dest = hosp[amb.hospital]
            else:
                dest = min(sorted(hosp), key=lambda h: arrive(p.location, hosp[h], leave))
                dest = hosp[dest]
            here, t = dest, arrive(p.location, dest, leave) + service.handover
        return worst

    best = math.inf
    for perm in itertools.permutations(patients):
        for cuts in _compositions(len(perm), len(ambs)):
            worst = 0.0
            for a, amb in enumerate(ambs):
                worst = max(worst, drive(amb, perm[cuts[a] : cuts[a + 1]]))
                if worst >= best:
                    break
            best = min(best, worst)
    return best


def ebpd_exhaustive(net, depots, pickups, shelters, deadline, t0, boarding):
    """Best (evacuated, completion) over all productive maximal-transfer bus plans.

    Plain recursion over "which bus acts next and where it goes", with every
    bus's pending arrival kept in a dict; no bounding.  Arrivals are handled
    in (time, bus order); a bus boards min(waiting, boarding cap, free seats)
    and alights min(onboard, shelter room); a visit moving nobody, a second
    consecutive visit to one pick-up point, or an arrival after the deadline
    is not allowed.  A bus may stop only when empty.
    """
    fleet = [(d.location, d.bus_capacity) for d in depots for _ in range(d.fleet)]
    if len(fleet) > 2 or len(pickups) > 3 or len(shelters) > 2:
        raise InstanceTooLarge("EBPD oracle is limited to 2 buses, 3 pick-ups and 2 shelters")
    memo = {}

    def arrive(u, v, t):
        key = (u, v, t)
        if key not in memo:
            try:
                memo[key] = shortest_time_path(net, u, v, t).arrival
            except Unreachable:
                memo[key] = math.inf
        return memo[key]

    places = [("P", p.location, p.boarding_cap) for p in pickups] + [("S", s.location, None) for s in shelters]
    best = [None]

    def choices(bus, where, t, load, last, stock):
        cap = fleet[bus][1]
        out = []
        for k, (kind, node, _) in enumerate(places):
            if kind == "P" and (load >= cap or stock[k] == 0 or last == k):
                continue
            if kind == "S" and (load == 0 or stock[k] == 0):
                continue
            a = arrive(where, node, t)
            if a <= deadline:
                out.append((a, k))
        return out

    def go(pending, loads, stock, saved, last_arrival):
        if not pending:
            score = (saved, last_arrival if saved else t0)
            if best[0] is None or (-score[0], score[1]) < (-best[0][0], best[0][1]):
                best[0] = score
            return
        bus = min(pending, key=lambda b: (pending[b][0], b))
        t, k, where, last = pending[bus]
        rest = {b: v for b, v in pending.items() if b != bus}
        load = loads[bus]
        if k is not None:
            kind, node, bcap = places[k]
            if kind == "P":
                moved = min(stock[k], bcap, fleet[bus][1] - load)
                load += moved
            else:
                moved = min(load, stock[k])
                load -= moved
            if moved == 0:
                return
            stock = stock[:k] + (stock[k] - moved,) + stock[k + 1 :]
            if kind == "S":
                saved += moved
                last_arrival = max(last_arrival, t)
            where, last = node, k
            t = t + boarding.per_visit + boarding.per_evacuee * moved
        loads = loads[:bus] + (load,) + loads[bus + 1 :]
        for a, k2 in choices(bus, where, t, load, last, stock):
            go({**rest, bus: (a, k2, where, last)}, loads, stock, saved, last_arrival)
        if load == 0:
            go(rest, loads, stock, saved, last_arrival)

    start = {b: (t0, None, loc, None) for b, (loc, _) in enumerate(fleet)}
    stock = tuple(p.demand for p in pickups) + tuple(s.capacity for s in shelters)
    go(start, (0,) * len(fleet), stock, 0, t0)
    return best[0]
