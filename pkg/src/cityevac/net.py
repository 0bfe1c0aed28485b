"""Time-dependent road network with shortest-time routing.

Arcs carry piecewise-linear travel-time profiles that repeat every period
(one day by default).  All profiles are FIFO: leaving later never gets you
there earlier, which makes a label-setting search on earliest arrival exact.
Units are seconds and meters throughout.
"""

from __future__ import annotations

import bisect
import heapq
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

DAY = 86400.0


class NetworkError(ValueError):
    """Invalid network construction or transformation."""


class FIFOViolation(NetworkError):
    def __init__(self, message: str, arc_id: int | None = None) -> None:
        super().__init__(message)
        self.arc_id = arc_id


class Unreachable(Exception):
    """No usable path connects origin to destination."""

    def __init__(self, origin: int, dest: int) -> None:
        super().__init__(f"node {dest} unreachable from node {origin}")
        self.origin = origin
        self.dest = dest


@dataclass(frozen=True)
class TravelTimeProfile:
    """Periodic piecewise-linear travel time.

    ``breakpoints`` is a sequence of ``(offset, travel_time)`` pairs with
    strictly increasing offsets in ``[0, period)``.  Between the last
    breakpoint and the first one of the next period the value is
    interpolated across the wrap.
    """

    breakpoints: tuple[tuple[float, float], ...]
    period: float = DAY

    def __post_init__(self) -> None:
        bps = tuple((float(o), float(v)) for o, v in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "period", float(self.period))
        if self.period <= 0:
            raise NetworkError("profile period must be positive")
        if not bps:
            raise NetworkError("profile needs at least one breakpoint")
        for i, (o, v) in enumerate(bps):
            if not 0 <= o < self.period:
                raise NetworkError(f"breakpoint offset {o} outside [0, {self.period})")
            if v <= 0:
                raise NetworkError(f"travel time must be positive, got {v}")
            if i and o <= bps[i - 1][0]:
                raise NetworkError("breakpoint offsets must be strictly increasing")
        # FIFO on a piecewise-linear function <=> every slope >= -1
        for (o1, v1), (o2, v2) in self._segments():
            if v2 - v1 < -(o2 - o1):
                raise FIFOViolation(
                    f"slope {(v2 - v1) / (o2 - o1):.4g} < -1 between offsets {o1} and {o2}"
                )
        object.__setattr__(self, "_offsets", [o for o, _ in bps])

    @classmethod
    def constant(cls, travel_time: float, period: float = DAY) -> "TravelTimeProfile":
        return cls(((0.0, travel_time),), period)

    def _segments(self):
        bps = self.breakpoints
        if len(bps) == 1:
            return []
        segs = list(zip(bps, bps[1:]))
        first_o, first_v = bps[0]
        segs.append((bps[-1], (first_o + self.period, first_v)))
        return segs

    def __call__(self, departure: float) -> float:
        return evaluate_profile(self, departure)


def evaluate_profile(profile: TravelTimeProfile, departure: float) -> float:
    """Travel time when entering the arc at ``departure``."""
    bps = profile.breakpoints
    if len(bps) == 1:
        return bps[0][1]
    period = profile.period
    t = departure % period
    i = bisect.bisect_right(profile._offsets, t) - 1
    if i >= 0 and bps[i][0] == t:
        return bps[i][1]
    if i < 0:
        # before the first breakpoint: wrap segment from the previous period
        o1, v1 = bps[-1][0] - period, bps[-1][1]
        o2, v2 = bps[0]
    elif i == len(bps) - 1:
        o1, v1 = bps[-1]
        o2, v2 = bps[0][0] + period, bps[0][1]
    else:
        (o1, v1), (o2, v2) = bps[i], bps[i + 1]
    return v1 + (v2 - v1) * (t - o1) / (o2 - o1)


@dataclass(frozen=True)
class Arc:
    id: int
    tail: int
    head: int
    profile: TravelTimeProfile
    length: float = 1.0
    reversible: bool = False
    blocked: bool = False

    def __post_init__(self) -> None:
        if self.tail == self.head:
            raise NetworkError(f"arc {self.id} is a self-loop")
        if self.length <= 0:
            raise NetworkError(f"arc {self.id} has non-positive length")


@dataclass(frozen=True)
class TimedPath:
    departure: float
    arcs: tuple[int, ...]
    nodes: tuple[int, ...]
    node_times: tuple[float, ...]

    @property
    def arrival(self) -> float:
        return self.node_times[-1]

    @property
    def duration(self) -> float:
        return self.arrival - self.departure

    @property
    def origin(self) -> int:
        return self.nodes[0]

    @property
    def dest(self) -> int:
        return self.nodes[-1]


@dataclass(frozen=True)
class TimeDependentNetwork:
    """Immutable directed road graph.

    ``coords`` maps node id to an ``(x, y)`` pair used only for display and
    export.  Transformations (contraflow, zone blocking, profile updates)
    return new networks and leave the receiver untouched.
    """

    coords: Mapping[int, tuple[float, float]]
    arcs: tuple[Arc, ...]
    _out: dict = field(init=False, repr=False, compare=False)
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "coords", dict(sorted(self.coords.items())))
        object.__setattr__(self, "arcs", tuple(sorted(self.arcs, key=lambda a: a.id)))
        by_id: dict[int, Arc] = {}
        out: dict[int, list[int]] = {n: [] for n in self.coords}
        for arc in self.arcs:
            if arc.id in by_id:
                raise NetworkError(f"duplicate arc id {arc.id}")
            for end in (arc.tail, arc.head):
                if end not in self.coords:
                    raise NetworkError(f"arc {arc.id} references unknown node {end}")
            by_id[arc.id] = arc
            out[arc.tail].append(arc.id)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_out", {n: tuple(ids) for n, ids in out.items()})

    @property
    def nodes(self) -> list[int]:
        return list(self.coords)

    def arc(self, arc_id: int) -> Arc:
        try:
            return self._by_id[arc_id]
        except KeyError:
            raise NetworkError(f"unknown arc {arc_id}") from None

    def outgoing(self, node: int) -> tuple[int, ...]:
        return self._out[node]

    def __contains__(self, node: int) -> bool:
        return node in self.coords

    def find_arc(self, tail: int, head: int) -> Arc | None:
        for aid in self._out.get(tail, ()):
            if self._by_id[aid].head == head:
                return self._by_id[aid]
        return None

    def replace_arcs(self, arcs: Iterable[Arc]) -> "TimeDependentNetwork":
        return TimeDependentNetwork(self.coords, tuple(arcs))

    def with_profile(self, arc_id: int, profile: TravelTimeProfile) -> "TimeDependentNetwork":
        self.arc(arc_id)
        return self.replace_arcs(
            replace(a, profile=profile) if a.id == arc_id else a for a in self.arcs
        )

    def traverse(
        self,
        arc_ids: Iterable[int],
        departure: float,
        penalties: Mapping[int, float] | None = None,
    ) -> list[float]:
        """Node times along a walk, starting with ``departure``."""
        times = [departure]
        t = departure
        for aid in arc_ids:
            tt = evaluate_profile(self._by_id[aid].profile, t)
            if penalties:
                tt *= penalties.get(aid, 1.0)
            t = t + tt
            times.append(t)
        return times


def _check_node(net: TimeDependentNetwork, node: int) -> None:
    if node not in net.coords:
        raise NetworkError(f"unknown node {node}")


def _search(net, origin, dest, departure, penalties):
    """Label-setting search; returns the arc sequence to ``dest``.

    With ``dest=None`` the whole tree is built and the settled labels are
    returned instead.  Stopping early at ``dest`` does not change any label
    settled before it, so point and tree queries agree bit for bit.
    """
    # label = (arrival, hops, arc sequence); smallest label settles first
    labels = {origin: (departure, 0, ())}
    heap = [(departure, 0, (), origin)]
    settled = set()
    while heap:
        t, hops, seq, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == dest:
            return seq
        for aid in net.outgoing(node):
            arc = net._by_id[aid]
            if arc.blocked or arc.head in settled:
                continue
            tt = evaluate_profile(arc.profile, t)
            if penalties:
                tt *= penalties.get(aid, 1.0)
            label = (t + tt, hops + 1, seq + (aid,))
            best = labels.get(arc.head)
            if best is None or label < best:
                labels[arc.head] = label
                heapq.heappush(heap, (*label, arc.head))
    if dest is None:
        return labels
    return None


def _timed_path(net, origin, seq, departure, penalties) -> TimedPath:
    times = [departure]
    nodes = [origin]
    t = departure
    for aid in seq:
        arc = net._by_id[aid]
        tt = evaluate_profile(arc.profile, t)
        if penalties:
            tt *= penalties.get(aid, 1.0)
        t = t + tt
        times.append(t)
        nodes.append(arc.head)
    return TimedPath(departure, tuple(seq), tuple(nodes), tuple(times))


def shortest_time_path(
    net: TimeDependentNetwork, origin: int, dest: int, departure: float
) -> TimedPath:
    """Earliest-arrival path departing ``origin`` at ``departure``.

    Raises :class:`Unreachable` when every route is blocked or missing.
    Ties on arrival are broken by fewer hops, then the smaller arc-id
    sequence.
    """
    return reroute_query(net, origin, dest, departure, None)


def reroute_query(
    net: TimeDependentNetwork,
    origin: int,
    dest: int,
    departure: float,
    penalties: Mapping[int, float] | None,
) -> TimedPath:
    """Shortest-time path with per-arc multiplicative congestion penalties."""
    _check_node(net, origin)
    _check_node(net, dest)
    if penalties:
        for aid, factor in penalties.items():
            if factor < 1:
                raise NetworkError(f"penalty factor {factor} on arc {aid} is below 1")
        if all(f == 1 for f in penalties.values()):
            penalties = None
    seq = _search(net, origin, dest, departure, penalties)
    if seq is None:
        raise Unreachable(origin, dest)
    return _timed_path(net, origin, seq, departure, penalties)


def earliest_arrivals(
    net: TimeDependentNetwork, origin: int, departure: float
) -> dict[int, float]:
    """Earliest arrival time at every reachable node (one-to-all)."""
    _check_node(net, origin)
    best = {origin: departure}
    heap = [(departure, origin)]
    done = set()
    while heap:
        t, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        for aid in net.outgoing(node):
            arc = net._by_id[aid]
            if arc.blocked or arc.head in done:
                continue
            a = t + evaluate_profile(arc.profile, t)
            if a < best.get(arc.head, float("inf")):
                best[arc.head] = a
                heapq.heappush(heap, (a, arc.head))
    return best


class Router:
    """Memoized shortest-time queries over one network.

    Caches a full search tree per ``(origin, departure)`` so repeated
    queries from the same place and time (common inside solvers) are
    dictionary lookups.  Results are identical to :func:`reroute_query`.
    """

    def __init__(
        self,
        net: TimeDependentNetwork,
        penalties: Mapping[int, float] | None = None,
        max_entries: int = 50000,
    ) -> None:
        self.net = net
        self.penalties = dict(penalties) if penalties else None
        if self.penalties and all(f == 1 for f in self.penalties.values()):
            self.penalties = None
        self.max_entries = max_entries
        self._trees: dict[tuple[int, float], dict] = {}

    def tree(self, origin: int, departure: float) -> dict:
        key = (origin, departure)
        tree = self._trees.get(key)
        if tree is None:
            _check_node(self.net, origin)
            if len(self._trees) >= self.max_entries:
                self._trees.clear()
            tree = self._trees[key] = _search(self.net, origin, None, departure, self.penalties)
        return tree

    def arrival(self, origin: int, dest: int, departure: float) -> float:
        label = self.tree(origin, departure).get(dest)
        return float("inf") if label is None else label[0]

    def path(self, origin: int, dest: int, departure: float) -> TimedPath:
        _check_node(self.net, dest)
        label = self.tree(origin, departure).get(dest)
        if label is None:
            raise Unreachable(origin, dest)
        return _timed_path(self.net, origin, label[2], departure, self.penalties)


def apply_contraflow(net: TimeDependentNetwork, arc_ids: Iterable[int]) -> TimeDependentNetwork:
    """Reverse the direction of the listed reversible arcs."""
    ids = set(arc_ids)
    for aid in ids:
        if not net.arc(aid).reversible:
            raise NetworkError(f"arc {aid} is not reversible")
    if not ids:
        return net
    return net.replace_arcs(
        replace(a, tail=a.head, head=a.tail) if a.id in ids else a for a in net.arcs
    )


def block_zone(net: TimeDependentNetwork, nodes: Iterable[int]) -> TimeDependentNetwork:
    """Block every arc entering the zone; arcs leaving it stay open."""
    zone = set(nodes)
    for n in zone:
        _check_node(net, n)
    if not zone:
        return net
    return net.replace_arcs(
        replace(a, blocked=True) if a.head in zone else a for a in net.arcs
    )


# -- JSON format -------------------------------------------------------------


def network_problems(doc: Mapping) -> list[str]:
    """Itemized problems with a network document; empty when it loads."""
    problems = []
    node_ids = set()
    for n in doc.get("nodes", []):
        if n.get("id") in node_ids:
            problems.append(f"duplicate node id {n.get('id')}")
        node_ids.add(n.get("id"))
    arc_ids = set()
    for a in doc.get("arcs", []):
        aid = a.get("id")
        if aid in arc_ids:
            problems.append(f"duplicate arc id {aid}")
        arc_ids.add(aid)
        for key in ("from", "to"):
            if a.get(key) not in node_ids:
                problems.append(f"arc {aid}: unknown {key} node {a.get(key)}")
        if a.get("from") == a.get("to"):
            problems.append(f"arc {aid}: self-loop")
        if a.get("length_m", 1.0) <= 0:
            problems.append(f"arc {aid}: non-positive length")
        try:
            _profile_from_doc(a.get("profile", {}))
        except FIFOViolation as exc:
            problems.append(f"arc {aid}: FIFO violation ({exc})")
        except (NetworkError, TypeError, ValueError) as exc:
            problems.append(f"arc {aid}: bad profile ({exc})")
    return problems


def _profile_from_doc(doc: Mapping) -> TravelTimeProfile:
    return TravelTimeProfile(
        tuple((float(o), float(v)) for o, v in doc["breakpoints"]),
        float(doc.get("period_s", DAY)),
    )


def network_from_dict(doc: Mapping) -> TimeDependentNetwork:
    coords = {int(n["id"]): (float(n.get("x", 0.0)), float(n.get("y", 0.0))) for n in doc["nodes"]}
    arcs = []
    for a in doc["arcs"]:
        try:
            profile = _profile_from_doc(a["profile"])
        except FIFOViolation as exc:
            raise FIFOViolation(f"arc {a['id']}: {exc}", arc_id=int(a["id"])) from None
        arcs.append(
            Arc(
                id=int(a["id"]),
                tail=int(a["from"]),
                head=int(a["to"]),
                profile=profile,
                length=float(a.get("length_m", 1.0)),
                reversible=bool(a.get("reversible", False)),
                blocked=bool(a.get("blocked", False)),
            )
        )
    return TimeDependentNetwork(coords, tuple(arcs))


def network_to_dict(net: TimeDependentNetwork) -> dict:
    return {
        "nodes": [{"id": n, "x": x, "y": y} for n, (x, y) in net.coords.items()],
        "arcs": [
            {
                "id": a.id,
                "from": a.tail,
                "to": a.head,
                "length_m": a.length,
                "reversible": a.reversible,
                "blocked": a.blocked,
                "profile": {
                    "period_s": a.profile.period,
                    "breakpoints": [list(bp) for bp in a.profile.breakpoints],
                },
            }
            for a in net.arcs
        ],
    }


def load_network(path: str | Path) -> TimeDependentNetwork:
    with open(path) as fh:
        return network_from_dict(json.load(fh))
