"""Intersection signals: fixed-time plans, speed advisories and preemption.

The controller runs in continuous time.  ``tick`` replays every phase
change up to the given instant at its exact time and logs it, so the
timeline can be audited for clearance and extension limits afterwards.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence


class SignalError(ValueError):
    pass


class StaleRequest(SignalError):
    pass


class TimeRegression(SignalError):
    pass


@dataclass(frozen=True)
class Phase:
    id: str
    approaches: frozenset
    green: float
    intergreen: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "approaches", frozenset(self.approaches))
        if self.intergreen < 0:
            raise SignalError(f"phase {self.id}: negative intergreen")

    @property
    def duration(self) -> float:
        return self.green + self.intergreen


@dataclass(frozen=True)
class SignalPlan:
    phases: tuple[Phase, ...]
    offset: float = 0.0
    min_green: float = 5.0
    max_extension: float = 60.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", tuple(self.phases))
        if len(self.phases) < 2:
            raise SignalError("a signal plan needs at least two phases")
        if len({p.id for p in self.phases}) != len(self.phases):
            raise SignalError("duplicate phase id")
        for p in self.phases:
            if p.green < self.min_green:
                raise SignalError(f"phase {p.id}: green {p.green} below minimum {self.min_green}")
        if self.max_extension < 0:
            raise SignalError("negative max extension")
        if self.cycle <= 0:
            raise SignalError("cycle must be positive")

    @property
    def cycle(self) -> float:
        return sum(p.duration for p in self.phases)

    def serving(self, approach: Hashable) -> list[int]:
        return [k for k, p in enumerate(self.phases) if approach in p.approaches]

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SignalPlan":
        phases = tuple(
            Phase(str(p["id"]), frozenset(p["approaches"]), float(p["green_s"]), float(p["intergreen_s"]))
            for p in doc["phases"]
        )
        return cls(
            phases,
            float(doc.get("offset_s", 0.0)),
            float(doc.get("min_green_s", 5.0)),
            float(doc.get("max_extension_s", 60.0)),
        )

    def to_dict(self) -> dict:
        return {
            "offset_s": self.offset,
            "min_green_s": self.min_green,
            "max_extension_s": self.max_extension,
            "phases": [
                {"id": p.id, "approaches": sorted(p.approaches, key=str), "green_s": p.green, "intergreen_s": p.intergreen}
                for p in self.phases
            ],
        }


def load_signal_plan(path: str | Path) -> SignalPlan:
    return SignalPlan.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PhaseState:
    phase: str
    elapsed: float
    is_green: bool


def _phase_starts(plan: SignalPlan) -> list[float]:
    starts, acc = [], 0.0
    for p in plan.phases:
        starts.append(acc)
        acc += p.duration
    return starts


def phase_at(plan: SignalPlan, t: float) -> PhaseState:
    """Fixed-time state at ``t``: phase id, seconds into it, and whether it shows green."""
    into = (t - plan.offset) % plan.cycle
    starts = _phase_starts(plan)
    k = bisect.bisect_right(starts, into) - 1
    elapsed = into - starts[k]
    return PhaseState(plan.phases[k].id, elapsed, elapsed < plan.phases[k].green)


def green_windows(plan: SignalPlan, approach: Hashable, start: float, end: float) -> list[tuple[float, float]]:
    """Half-open fixed-time green intervals for ``approach`` overlapping ``[start, end]``."""
    serving = plan.serving(approach)
    if not serving:
        return []
    starts = _phase_starts(plan)
    base = plan.offset + math.floor((start - plan.offset) / plan.cycle) * plan.cycle
    out = []
    while base <= end:
        for k in serving:
            g0 = base + starts[k]
            g1 = g0 + plan.phases[k].green
            if g1 > start and g0 <= end:
                out.append((g0, g1))
        base += plan.cycle
    out.sort()
    merged: list[tuple[float, float]] = []
    for a, b in out:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return merged


# -- GLOSA -------------------------------------------------------------------


@dataclass(frozen=True)
class ApproachingVehicle:
    id: str
    distance: float
    v_min: float
    v_max: float
    approach: Hashable


@dataclass(frozen=True)
class GlosaAdvisory:
    vehicle_id: str
    speed: float | None
    stop: bool
    arrival: float | None = None


def glosa_advise(
    plan: SignalPlan, vehicle: ApproachingVehicle, now: float, horizon_cycles: float = 2.0
) -> GlosaAdvisory:
    """Speed that reaches the stop line in the earliest reachable green.

    The reachable arrival interval runs from driving at ``v_max`` to driving
    at ``v_min``, cut at ``horizon_cycles`` cycles.  The advised speed aims at
    the first green instant inside it; if there is none the advice is to stop.
    """
    if vehicle.distance <= 0:
        raise SignalError("distance to the stop line must be positive")
    if not (0 < vehicle.v_min <= vehicle.v_max):
        raise SignalError("speed bounds must satisfy 0 < v_min <= v_max")
    d = vehicle.distance
    earliest = now + d / vehicle.v_max
    latest = min(now + d / vehicle.v_min, now + horizon_cycles * plan.cycle)
    if earliest <= latest:
        for g0, g1 in green_windows(plan, vehicle.approach, earliest, latest):
            entry = max(g0, earliest)
            if entry > latest or entry >= g1:
                continue
            if entry == earliest:
                speed = vehicle.v_max
            else:
                speed = min(max(d / (entry - now), vehicle.v_min), vehicle.v_max)
            # window edges and phase_at may disagree by a few ulps; step the
            # speed down until the arrival is green by phase_at itself
            for _ in range(1000):
                arrival = now + d / speed
                if _serves_green(plan, vehicle.approach, arrival):
                    return GlosaAdvisory(vehicle.id, speed, False, arrival)
                if speed <= vehicle.v_min or arrival >= g1:
                    break
                speed = max(math.nextafter(speed, 0.0), vehicle.v_min)
    return GlosaAdvisory(vehicle.id, None, True)


def _serves_green(plan: SignalPlan, approach: Hashable, t: float) -> bool:
    st = phase_at(plan, t)
    return st.is_green and approach in plan.phases[[p.id for p in plan.phases].index(st.phase)].approaches


# -- priority ----------------------------------------------------------------


class VehicleClass(str, Enum):
    AMBULANCE = "ambulance"
    EMERGENCY_BUS = "emergency_bus"


@dataclass(frozen=True)
class BusAttributes:
    demand: int
    shelter_distance: float
    remaining_pickups: int


@dataclass(frozen=True)
class PriorityWeights:
    demand: float = 1.0
    distance: float = 0.001
    pickups: float = 5.0


@dataclass(frozen=True)
class PreemptionRequest:
    vehicle_id: str
    vehicle_class: VehicleClass
    approach: Hashable
    eta: float
    request_time: float = 0.0
    bus: BusAttributes | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "vehicle_class", VehicleClass(self.vehicle_class))


def priority_score(req: PreemptionRequest, weights: PriorityWeights = PriorityWeights()) -> float:
    """Ambulances score +inf; buses a weighted sum of their attributes."""
    if req.vehicle_class is VehicleClass.AMBULANCE:
        if req.bus is not None:
            raise SignalError(f"{req.vehicle_id}: ambulances carry no bus attributes")
        return math.inf
    if req.bus is None:
        raise SignalError(f"{req.vehicle_id}: emergency bus without attributes")
    b = req.bus
    return weights.demand * b.demand - weights.distance * b.shelter_distance + weights.pickups * b.remaining_pickups


def queue_key(req: PreemptionRequest, weights: PriorityWeights = PriorityWeights()):
    return (-priority_score(req, weights), req.eta, req.request_time, req.vehicle_id)


# -- controller --------------------------------------------------------------


class Mode(str, Enum):
    NORMAL = "normal"
    EXTENDED = "extended"
    PREEMPTING = "preempting"


class Action(str, Enum):
    EXTEND = "extend"
    SWITCH = "switch"
    QUEUE = "queue"


GREEN, CLEAR = "green", "intergreen"


@dataclass(frozen=True)
class TimelineEntry:
    t: float
    phase: str
    stage: str
    mode: Mode
    served: str | None
    note: str = ""


@dataclass(frozen=True)
class ServiceRecord:
    t: float
    vehicle_id: str
    action: Action
    pending: tuple[str, ...]


@dataclass(frozen=True)
class SignalControllerState:
    phase: str
    elapsed: float
    mode: Mode
    queue: tuple[str, ...]
    served: str | None


class SignalController:
    """Preemption state machine for one intersection.

    Requests for an approach whose phase is showing green extend that green
    until the crossing is confirmed.  Otherwise the current green is cut short
    (never below the minimum green), the full clearance interval runs, and the
    requested phase follows.  No green ever lasts longer than its planned
    length plus ``max_extension``.  Lower-ranked requests wait in a queue.
    """

    def __init__(self, plan: SignalPlan, now: float, weights: PriorityWeights = PriorityWeights()) -> None:
        self.plan = plan
        self.weights = weights
        st = phase_at(plan, now)
        self.k = next(i for i, p in enumerate(plan.phases) if p.id == st.phase)
        ph = plan.phases[self.k]
        self.green_start = now - st.elapsed
        if st.is_green:
            self.stage, self.stage_end = GREEN, self.green_start + ph.green
        else:
            self.stage, self.stage_end = CLEAR, self.green_start + ph.duration
        self.mode = Mode.NORMAL
        self.now = now
        self.served: PreemptionRequest | None = None
        self.target: int | None = None
        self.queue: list[PreemptionRequest] = []
        self.timeline: list[TimelineEntry] = []
        self.services: list[ServiceRecord] = []
        self._log(now, "start")

    # -- bookkeeping

    def _log(self, t: float, note: str = "") -> None:
        served = self.served.vehicle_id if self.served else None
        self.timeline.append(TimelineEntry(t, self.plan.phases[self.k].id, self.stage, self.mode, served, note))

    @property
    def green_cap(self) -> float:
        return self.green_start + self.plan.phases[self.k].green + self.plan.max_extension

    @property
    def planned_green_end(self) -> float:
        return self.green_start + self.plan.phases[self.k].green

    @property
    def state(self) -> SignalControllerState:
        return SignalControllerState(
            self.plan.phases[self.k].id,
            self.now - self.green_start,
            self.mode,
            tuple(r.vehicle_id for r in self.queue),
            self.served.vehicle_id if self.served else None,
        )

    def _key(self, req: PreemptionRequest):
        return queue_key(req, self.weights)

    # -- transitions

    def _advance(self, until: float) -> None:
        while self.stage_end <= until:
            t = self.stage_end
            ph = self.plan.phases[self.k]
            if self.stage == GREEN:
                if self.served is not None and t >= self.green_cap and self.target is None:
                    lost = self.served
                    self.served = None
                    self.mode = Mode.NORMAL
                    self.stage, self.stage_end = CLEAR, t + ph.intergreen
                    self._log(t, f"extension cap reached for {lost.vehicle_id}")
                    self._serve_next(t)
                    continue
                self.stage, self.stage_end = CLEAR, t + ph.intergreen
                self._log(t)
            else:
                if self.target is not None:
                    self.k, self.target = self.target, None
                else:
                    self.k = (self.k + 1) % len(self.plan.phases)
                self.green_start = t
                self.stage = GREEN
                if self.served is not None and self.served.approach in self.plan.phases[self.k].approaches:
                    self.stage_end = self.green_cap
                else:
                    self.stage_end = self.planned_green_end
                self._log(t)

    def _begin_service(self, req: PreemptionRequest, t: float) -> Action:
        ph = self.plan.phases[self.k]
        self.served = req
        if self.stage == GREEN and req.approach in ph.approaches and t < self.green_cap:
            self.mode = Mode.EXTENDED
            self.target = None
            self.stage_end = self.green_cap
            action = Action.EXTEND
        else:
            serving = self.plan.serving(req.approach)
            if not serving:
                raise SignalError(f"no phase serves approach {req.approach!r}")
            n = len(self.plan.phases)
            self.target = min(serving, key=lambda i: (i - self.k - 1) % n)
            self.mode = Mode.PREEMPTING
            if self.stage == GREEN:
                self.stage_end = min(self.stage_end, max(t, self.green_start + self.plan.min_green))
            action = Action.SWITCH
        pending = tuple(r.vehicle_id for r in self.queue)
        self.services.append(ServiceRecord(t, req.vehicle_id, action, (req.vehicle_id,) + pending))
        self._log(t, f"{action.value} for {req.vehicle_id}")
        return action

    def _serve_next(self, t: float) -> None:
        if self.queue:
            self._begin_service(self.queue.pop(0), t)

    def _release(self, t: float) -> None:
        self.served = None
        self.target = None
        self.mode = Mode.NORMAL
        if self.stage == GREEN:
            self.stage_end = max(t, self.planned_green_end)
        self._log(t, "released")
        self._serve_next(t)

    # -- public API

    def request_preemption(self, req: PreemptionRequest, now: float) -> Action:
        if req.eta < now:
            raise StaleRequest(f"{req.vehicle_id}: eta {req.eta} is before now {now}")
        priority_score(req, self.weights)
        if not self.plan.serving(req.approach):
            raise SignalError(f"no phase serves approach {req.approach!r}")
        self.tick(now)
        if any(r.vehicle_id == req.vehicle_id for r in self.queue) or (
            self.served is not None and self.served.vehicle_id == req.vehicle_id
        ):
            raise SignalError(f"{req.vehicle_id}: duplicate request")
        if self.served is None or self._key(req) < self._key(self.served):
            if self.served is not None:
                bisect.insort(self.queue, self.served, key=self._key)
                self.served = None
                self.target = None
                if self.stage == GREEN:
                    self.stage_end = min(self.stage_end, max(now, self.planned_green_end))
            action = self._begin_service(req, now)
            self._advance(now)
            return action
        bisect.insort(self.queue, req, key=self._key)
        self._log(now, f"queued {req.vehicle_id}")
        return Action.QUEUE

    def tick(self, now: float, confirmations: Iterable[str] = ()) -> SignalControllerState:
        if now < self.now:
            raise TimeRegression(f"tick at {now} after {self.now}")
        self._advance(now)
        self.now = now
        crossed = set(confirmations)
        if crossed:
            self.queue = [r for r in self.queue if r.vehicle_id not in crossed]
            if self.served is not None and self.served.vehicle_id in crossed:
                self._release(now)
            self._advance(now)
        return self.state

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "phase", "stage", "mode", "served", "note"])
            for e in self.timeline:
                w.writerow([e.t, e.phase, e.stage, e.mode.value, e.served or "", e.note])


def green_intervals(timeline: Sequence[TimelineEntry], end: float) -> list[tuple[str, float, float]]:
    """(phase, start, end) for every green shown in a controller timeline."""
    out = []
    cur = None
    for e in timeline:
        if cur is not None and (e.stage != GREEN or e.phase != cur[0]):
            out.append((cur[0], cur[1], e.t))
            cur = None
        if e.stage == GREEN and cur is None:
            cur = (e.phase, e.t)
    if cur is not None:
        out.append((cur[0], cur[1], end))
    return out
