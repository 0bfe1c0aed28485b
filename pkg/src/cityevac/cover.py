"""Adaptive community covering: assign communities to hospitals.

Objective is lexicographic: cover as many residents as possible, then
minimize the summed hospital-to-community response time.  Travel times are
time dependent and evaluated at the query instant, so re-solving later in
the day can move communities between hospitals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

from .evo import EvoConfig, IntVectorOps, evolve
from .net import TimeDependentNetwork, earliest_arrivals

EXACT_MAX_HOSPITALS = 4
EXACT_MAX_COMMUNITIES = 8


class CoverError(ValueError):
    pass


@dataclass(frozen=True)
class Community:
    id: str
    location: int
    population: int

    def __post_init__(self) -> None:
        if self.population <= 0:
            raise CoverError(f"community {self.id}: population must be positive")


@dataclass(frozen=True)
class Hospital:
    id: str
    location: int
    capacity: int

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise CoverError(f"hospital {self.id}: negative capacity")


@dataclass
class CoverAssignment:
    assignment: dict[str, str]
    uncovered: frozenset[str]
    covered_population: int
    total_response_time: float
    hospitals: tuple[Hospital, ...]
    communities: tuple[Community, ...]
    threshold: float
    instant: float
    travel_times: dict[tuple[str, str], float] = field(repr=False, default_factory=dict)
    method: str = "exact"

    @property
    def objective(self) -> tuple[int, float]:
        return (self.covered_population, self.total_response_time)

    def to_dict(self) -> dict:
        return {
            "assignment": dict(sorted(self.assignment.items())),
            "uncovered": sorted(self.uncovered),
            "covered_population": self.covered_population,
            "total_response_time_s": self.total_response_time,
            "threshold_s": self.threshold,
            "instant_s": self.instant,
            "method": self.method,
        }


def travel_time_table(
    net: TimeDependentNetwork,
    hospitals: Sequence[Hospital],
    communities: Sequence[Community],
    instant: float,
) -> dict[tuple[str, str], float]:
    """Hospital -> community shortest travel time departing at ``instant``."""
    table = {}
    for h in hospitals:
        reach = earliest_arrivals(net, h.location, instant)
        for c in communities:
            a = reach.get(c.location)
            table[(h.id, c.id)] = math.inf if a is None else a - instant
    return table


def _pairs_key(assignment: dict[str, str]):
    return tuple(sorted((h, c) for c, h in assignment.items()))


def _objective_key(assignment, pop, tt):
    covered = sum(pop[c] for c in assignment)
    total = math.fsum(tt[(h, c)] for c, h in assignment.items())
    return (-covered, total, _pairs_key(assignment))


def solve_accp(
    net: TimeDependentNetwork,
    hospitals: Sequence[Hospital],
    communities: Sequence[Community],
    threshold: float,
    instant: float,
    method: str = "auto",
    evo_config: EvoConfig | None = None,
    history: list | None = None,
) -> CoverAssignment:
    """Solve the covering problem at ``instant``.

    ``method`` is ``exact`` (branch and bound), ``greedy``, ``evo`` (greedy
    seed refined by the evolutionary kernel) or ``auto``, which is exact up
    to 4 hospitals and 8 communities and ``evo`` beyond.
    """
    if not threshold > 0:
        raise CoverError("coverage threshold must be positive")
    for site in (*hospitals, *communities):
        if site.location not in net:
            raise CoverError(f"{site.id}: location {site.location} not in network")
    if len({h.id for h in hospitals}) != len(hospitals) or len({c.id for c in communities}) != len(communities):
        raise CoverError("duplicate hospital or community id")
    hospitals = tuple(sorted(hospitals, key=lambda h: h.id))
    communities = tuple(sorted(communities, key=lambda c: c.id))
    tt = travel_time_table(net, hospitals, communities, instant)
    eligible = {
        c.id: [h for h in hospitals if tt[(h.id, c.id)] <= threshold and h.capacity >= c.population]
        for c in communities
    }
    if method == "auto":
        small = len(hospitals) <= EXACT_MAX_HOSPITALS and len(communities) <= EXACT_MAX_COMMUNITIES
        method = "exact" if small else "evo"
    if method == "exact":
        assignment = _branch_and_bound(hospitals, communities, eligible, tt)
    elif method == "greedy":
        assignment = _greedy(hospitals, communities, eligible, tt)
    elif method == "evo":
        assignment = _evolve(hospitals, communities, eligible, tt, evo_config or EvoConfig(), history)
    else:
        raise CoverError(f"unknown method {method!r}")
    return _build(assignment, hospitals, communities, threshold, instant, tt, method)


def _build(assignment, hospitals, communities, threshold, instant, tt, method):
    pop = {c.id: c.population for c in communities}
    return CoverAssignment(
        assignment=dict(sorted(assignment.items())),
        uncovered=frozenset(c.id for c in communities if c.id not in assignment),
        covered_population=sum(pop[c] for c in assignment),
        total_response_time=math.fsum(tt[(h, c)] for c, h in assignment.items()),
        hospitals=hospitals,
        communities=communities,
        threshold=threshold,
        instant=instant,
        travel_times=tt,
        method=method,
    )


def _branch_and_bound(hospitals, communities, eligible, tt):
    order = sorted(communities, key=lambda c: (-c.population, c.id))
    pop = {c.id: c.population for c in communities}
    residual = {h.id: h.capacity for h in hospitals}
    best = {"key": (0, math.inf, ()), "assignment": {}}
    current: dict[str, str] = {}

    def bound(k):
        cov, lb = 0, 0.0
        for c in order[k:]:
            opts = [tt[(h.id, c.id)] for h in eligible[c.id] if residual[h.id] >= c.population]
            if opts:
                cov += c.population
                lb += min(opts)
        return cov, lb

    def dfs(k, covered, time):
        ub_cov, lb_time = bound(k)
        best_cov, best_time = -best["key"][0], best["key"][1]
        if covered + ub_cov < best_cov:
            return
        if covered + ub_cov == best_cov and time + lb_time > best_time * (1 + 1e-12) + 1e-9:
            return
        if k == len(order):
            key = _objective_key(current, pop, tt)
            if key < best["key"]:
                best["key"], best["assignment"] = key, dict(current)
            return
        c = order[k]
        for h in sorted(eligible[c.id], key=lambda h: (tt[(h.id, c.id)], h.id)):
            if residual[h.id] < c.population:
                continue
            residual[h.id] -= c.population
            current[c.id] = h.id
            dfs(k + 1, covered + c.population, time + tt[(h.id, c.id)])
            del current[c.id]
            residual[h.id] += c.population
        dfs(k + 1, covered, time)

    dfs(0, 0, 0.0)
    return best["assignment"]


def _greedy(hospitals, communities, eligible, tt):
    residual = {h.id: h.capacity for h in hospitals}
    assignment = {}
    for c in sorted(communities, key=lambda c: (-c.population, c.id)):
        for h in sorted(eligible[c.id], key=lambda h: (tt[(h.id, c.id)], h.id)):
            if residual[h.id] >= c.population:
                residual[h.id] -= c.population
                assignment[c.id] = h.id
                break
    return assignment


def _evolve(hospitals, communities, eligible, tt, config, history=None):
    hids = [h.id for h in hospitals]
    cap = {h.id: h.capacity for h in hospitals}
    pop = {c.id: c.population for c in communities}
    allowed = [{hids.index(h.id) for h in eligible[c.id]} for c in communities]

    def fix(genome):
        genes = [g if g in allowed[k] else -1 for k, g in enumerate(genome)]
        load = {h: 0 for h in hids}
        # fill hospitals in order of response time; overflow becomes uncovered
        order = sorted(
            (k for k, g in enumerate(genes) if g >= 0),
            key=lambda k: (tt[(hids[genes[k]], communities[k].id)], communities[k].id),
        )
        for k in order:
            h = hids[genes[k]]
            if load[h] + pop[communities[k].id] <= cap[h]:
                load[h] += pop[communities[k].id]
            else:
                genes[k] = -1
        return tuple(genes)

    def decode(genome):
        return {communities[k].id: hids[g] for k, g in enumerate(genome) if g >= 0}

    def fitness(genome):
        key = _objective_key(decode(genome), pop, tt)
        return key[:2]

    greedy = _greedy(hospitals, communities, eligible, tt)
    seed = tuple(hids.index(greedy[c.id]) if c.id in greedy else -1 for c in communities)
    ops = IntVectorOps([(-1, len(hids) - 1)] * len(communities), fixer=fix)
    result = evolve(config, [seed], fitness, ops)
    if history is not None:
        history.append(result)
    best = decode(result.best)
    if _objective_key(greedy, pop, tt) <= _objective_key(best, pop, tt):
        return greedy
    return best


def resolve_on_update(
    prev: CoverAssignment,
    net: TimeDependentNetwork,
    instant: float,
    hospitals: Sequence[Hospital] | None = None,
    method: str = "auto",
) -> tuple[CoverAssignment, dict[str, tuple[str | None, str | None]]]:
    """Fresh solve on the updated network; also returns what moved.

    ``hospitals`` may override attributes (e.g. a capacity drop) but must
    keep the same ids.
    """
    hs = tuple(hospitals) if hospitals is not None else prev.hospitals
    if {h.id for h in hs} != {h.id for h in prev.hospitals}:
        raise CoverError("hospital set changed between solves")
    new = solve_accp(net, hs, prev.communities, prev.threshold, instant, method)
    changes = {}
    for c in prev.communities:
        old_h, new_h = prev.assignment.get(c.id), new.assignment.get(c.id)
        if old_h != new_h:
            changes[c.id] = (old_h, new_h)
    return new, changes


def with_capacity(hospitals: Sequence[Hospital], hospital_id: str, capacity: int) -> tuple[Hospital, ...]:
    return tuple(replace(h, capacity=capacity) if h.id == hospital_id else h for h in hospitals)
