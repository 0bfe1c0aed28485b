"""Discrete-event runner for whole scenarios.

Incidents pass through the command unit, every notified department plans
with its solver, vehicles move arc by arc and intersections take preemption
requests.  Everything observable lands in a trace, and the headline metrics
are a pure function of that trace.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .busevac import (
    BoardingTimes,
    BusDepot,
    BusRoute,
    EvacPlan,
    EvacState,
    PickupPoint,
    Shelter,
    VisitKind,
    replay_bus_route,
)
from .ccu import CONDITION_TABLE, CCUError, Department, IncidentMessage, NotificationBus, Scene
from .cover import Community, Hospital, solve_accp
from .dispatch import (
    AmbulanceRoute,
    DarpResult,
    DispatchPlan,
    LegUnreachable,
    Patient,
    PatientGroup,
    ServiceTimes,
    StopKind,
    make_fleet,
    replay_route,
    route_single,
    solve_group_dispatch,
)
from .evo import EvoConfig, EvoError
from .net import (
    Router,
    TimedPath,
    TimeDependentNetwork,
    apply_contraflow,
    block_zone,
    network_from_dict,
    network_problems,
)
from .signals import BusAttributes, PreemptionRequest, SignalController, SignalError, SignalPlan, VehicleClass

EVENT_RANK = {
    "incident": 0,
    "notification": 1,
    "demand-update": 2,
    "signal-tick": 3,
    "crossing-confirm": 4,
    "vehicle-arrival": 5,
    "boarding-complete": 6,
}

# mitigation departments act before the ones that plan vehicle routes
DEPARTMENT_ORDER = (
    Department.POLICE,
    Department.TRAFFIC_CONTROL,
    Department.FIRE,
    Department.HOSPITAL,
    Department.BUS_TERMINAL,
)

SOLVER_MODES = ("auto", "exact", "evo", "greedy")


class ScenarioError(ValueError):
    """A scenario failed validation; ``problems`` lists every violation."""

    def __init__(self, problems: Sequence[str]) -> None:
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TraceError(ValueError):
    pass


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class FacilityPatient:
    id: str
    location: int
    group: PatientGroup
    onset: float | None = None


@dataclass(frozen=True)
class Facility:
    """A public site whose incidents trigger bus evacuation and group dispatch."""

    id: str
    node: int
    hazard_zone: tuple[int, ...] = ()
    contraflow_arcs: tuple[int, ...] = ()
    pickups: tuple[str, ...] = ()
    shelters: tuple[str, ...] = ()
    patients: tuple[FacilityPatient, ...] = ()


@dataclass(frozen=True)
class DemandUpdate:
    t: float
    pickup: str
    demand: int


@dataclass(frozen=True)
class CivilianTrip:
    id: str
    origin: int
    dest: int
    depart: float


@dataclass
class Scenario:
    name: str
    net: TimeDependentNetwork
    deadline: float
    seed: int = 0
    start: float = 0.0
    horizon: float | None = None
    latency: float = 1.0
    tick: float = 30.0
    hospitals: tuple[Hospital, ...] = ()
    fleets: dict[str, int] = field(default_factory=dict)
    communities: tuple[Community, ...] = ()
    threshold: float = 900.0
    depots: tuple[BusDepot, ...] = ()
    pickups: tuple[PickupPoint, ...] = ()
    shelters: tuple[Shelter, ...] = ()
    facilities: tuple[Facility, ...] = ()
    signals: dict[int, SignalPlan] = field(default_factory=dict)
    incidents: tuple[IncidentMessage, ...] = ()
    demand_updates: tuple[DemandUpdate, ...] = ()
    civilians: tuple[CivilianTrip, ...] = ()
    penalty_factor: float = 3.0
    penalty_radius: int = 1
    service: ServiceTimes = ServiceTimes()
    boarding: BoardingTimes = BoardingTimes()
    evo: EvoConfig = EvoConfig(population_size=24, generations=40)

    @property
    def end(self) -> float:
        return self.deadline if self.horizon is None else self.horizon

    def facility_at(self, node: int) -> Facility | None:
        return next((f for f in self.facilities if f.node == node), None)


def _read_network_doc(ref: Any, base_dir: Path | None) -> tuple[dict | None, str | None]:
    if isinstance(ref, Mapping):
        return dict(ref), None
    if not isinstance(ref, str):
        return None, "network: expected a file name or an inline object"
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    try:
        return json.loads(path.read_text()), None
    except OSError as exc:
        return None, f"network: cannot read {path} ({exc.strerror})"
    except json.JSONDecodeError as exc:
        return None, f"network: {path} is not valid JSON ({exc.msg})"


def scenario_problems(doc: Mapping, base_dir: str | Path | None = None) -> list[str]:
    """Itemized problems with a scenario document; empty when it is valid."""
    base = Path(base_dir) if base_dir is not None else None
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        return ["scenario: expected a JSON object"]
    net_doc, err = _read_network_doc(doc.get("network"), base)
    nodes: set = set()
    arcs: dict = {}
    if err:
        problems.append(err)
    else:
        problems += [f"network: {p}" for p in network_problems(net_doc)]
        nodes = {n.get("id") for n in net_doc.get("nodes", [])}
        arcs = {a.get("id"): a for a in net_doc.get("arcs", [])}

    def node_ok(where: str, n: Any) -> None:
        if n not in nodes:
            problems.append(f"{where}: unknown node {n}")

    def number(where: str, x: Any, low: float | None = None, strict: bool = False) -> None:
        if not isinstance(x, (int, float)) or isinstance(x, bool) or math.isnan(x):
            problems.append(f"{where}: expected a number, got {x!r}")
        elif low is not None and (x <= low if strict else x < low):
            problems.append(f"{where}: must be {'>' if strict else '>='} {low}, got {x}")

    def items(key: str) -> list:
        v = doc.get(key, [])
        if not isinstance(v, list):
            problems.append(f"{key}: expected a list")
            return []
        bad = [k for k, x in enumerate(v) if not isinstance(x, Mapping)]
        for k in bad:
            problems.append(f"{key}[{k}]: expected an object")
        return [x for x in v if isinstance(x, Mapping)]

    def unique(key: str, rows: list) -> set:
        seen = set()
        for r in rows:
            rid = r.get("id")
            if rid is None:
                problems.append(f"{key}: entry without id")
            elif rid in seen:
                problems.append(f"{key}: duplicate id {rid}")
            seen.add(rid)
        return seen

    start = doc.get("start_s", 0.0)
    number("start_s", start)
    if "deadline_s" not in doc:
        problems.append("deadline_s: missing")
    else:
        number("deadline_s", doc["deadline_s"])
        if isinstance(doc["deadline_s"], (int, float)) and isinstance(start, (int, float)) and doc["deadline_s"] <= start:
            problems.append("deadline_s: must be after start_s")
    for key, low, strict in (
        ("notification_latency_s", 0, False),
        ("signal_tick_s", 0, True),
        ("coverage_threshold_s", 0, True),
        ("horizon_s", None, False),
    ):
        if key in doc:
            number(key, doc[key], low, strict)
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        problems.append(f"seed: expected an unsigned 64-bit integer, got {seed!r}")

    hospitals = items("hospitals")
    unique("hospitals", hospitals)
    for h in hospitals:
        node_ok(f"hospital {h.get('id')}", h.get("node"))
        number(f"hospital {h.get('id')} capacity", h.get("capacity", 0), 0)
        number(f"hospital {h.get('id')} ambulances", h.get("ambulances", 0), 0)
    communities = items("communities")
    unique("communities", communities)
    for c in communities:
        node_ok(f"community {c.get('id')}", c.get("node"))
        number(f"community {c.get('id')} population", c.get("population"), 0, strict=True)
    depots = items("depots")
    unique("depots", depots)
    for d in depots:
        node_ok(f"depot {d.get('id')}", d.get("node"))
        number(f"depot {d.get('id')} fleet", d.get("fleet"), 0)
        number(f"depot {d.get('id')} bus_capacity", d.get("bus_capacity"), 1)
    pickups = items("pickups")
    pids = unique("pickups", pickups)
    for p in pickups:
        node_ok(f"pickup {p.get('id')}", p.get("node"))
        number(f"pickup {p.get('id')} demand", p.get("demand"), 0)
        number(f"pickup {p.get('id')} boarding_cap", p.get("boarding_cap"), 1)
    shelters = items("shelters")
    sids = unique("shelters", shelters)
    for s in shelters:
        node_ok(f"shelter {s.get('id')}", s.get("node"))
        number(f"shelter {s.get('id')} capacity", s.get("capacity"), 0)

    facilities = items("facilities")
    unique("facilities", facilities)
    fac_nodes = set()
    for f in facilities:
        fid = f.get("id")
        node_ok(f"facility {fid}", f.get("node"))
        fac_nodes.add(f.get("node"))
        for n in f.get("hazard_zone", []):
            node_ok(f"facility {fid} hazard_zone", n)
        for aid in f.get("contraflow_arcs", []):
            if aid not in arcs:
                problems.append(f"facility {fid} contraflow: unknown arc {aid}")
            elif not arcs[aid].get("reversible", False):
                problems.append(f"facility {fid} contraflow: arc {aid} is not reversible")
        for ref in f.get("pickups", []):
            if ref not in pids:
                problems.append(f"facility {fid}: unknown pickup {ref}")
        for ref in f.get("shelters", []):
            if ref not in sids:
                problems.append(f"facility {fid}: unknown shelter {ref}")
        for p in f.get("patients", []):
            node_ok(f"facility {fid} patient {p.get('id')}", p.get("node"))
            if p.get("group") not in {g.value for g in PatientGroup}:
                problems.append(f"facility {fid} patient {p.get('id')}: unknown group {p.get('group')!r}")
            if "onset_s" in p:
                number(f"facility {fid} patient {p.get('id')} onset_s", p["onset_s"], 0)

    signals = items("signals")
    seen_sig = set()
    for s in signals:
        n = s.get("node")
        node_ok("signal", n)
        if n in seen_sig:
            problems.append(f"signal: duplicate plan for node {n}")
        seen_sig.add(n)
        try:
            plan = SignalPlan.from_dict(s.get("plan", {}))
        except (SignalError, KeyError, TypeError, ValueError) as exc:
            problems.append(f"signal {n}: bad plan ({exc})")
            continue
        incoming = {aid for aid, a in arcs.items() if a.get("to") == n}
        # a reversible arc leaving the node becomes an approach under contraflow
        turnable = {aid for aid, a in arcs.items() if a.get("from") == n and a.get("reversible", False)}
        for ph in plan.phases:
            for ap in sorted(ph.approaches, key=str):
                if ap not in incoming | turnable:
                    problems.append(f"signal {n} phase {ph.id}: approach {ap} is not an arc into the node")
        for aid in sorted(incoming, key=str):
            if not plan.serving(aid):
                problems.append(f"signal {n}: incoming arc {aid} is served by no phase")

    incidents = items("incidents")
    iids = set()
    for k, m in enumerate(incidents):
        try:
            msg = IncidentMessage.from_dict(dict(m))
        except (CCUError, KeyError, TypeError, ValueError) as exc:
            problems.append(f"incident {m.get('id', k)}: malformed ({exc})")
            continue
        if msg.id in iids:
            problems.append(f"incident {msg.id}: duplicate id")
        iids.add(msg.id)
        node_ok(f"incident {msg.id}", msg.location)
        if msg.condition not in CONDITION_TABLE:
            problems.append(f"incident {msg.id}: unknown condition {msg.condition!r}")
        if isinstance(start, (int, float)) and msg.timestamp < start:
            problems.append(f"incident {msg.id}: timestamp before start_s")
        if msg.scene is Scene.FACILITY and msg.location not in fac_nodes:
            problems.append(f"incident {msg.id}: no facility at node {msg.location}")

    for k, u in enumerate(items("demand_updates")):
        if u.get("pickup") not in pids:
            problems.append(f"demand_updates[{k}]: unknown pickup {u.get('pickup')}")
        number(f"demand_updates[{k}] demand", u.get("demand"), 0)
        number(f"demand_updates[{k}] t_s", u.get("t_s"), start if isinstance(start, (int, float)) else None)
    civilians = items("civilians")
    unique("civilians", civilians)
    for c in civilians:
        node_ok(f"civilian {c.get('id')} origin", c.get("origin"))
        node_ok(f"civilian {c.get('id')} dest", c.get("dest"))
        number(f"civilian {c.get('id')} depart_s", c.get("depart_s"), start if isinstance(start, (int, float)) else None)
    if "random_civilians" in doc:
        number("random_civilians", doc["random_civilians"], 0)

    road = doc.get("road", {})
    if "penalty_factor" in road:
        number("road penalty_factor", road["penalty_factor"], 1)
    if "radius_hops" in road:
        number("road radius_hops", road["radius_hops"], 1)
    for key, cls in (("evo", EvoConfig),):
        try:
            cls.from_dict(doc.get(key))
        except (EvoError, TypeError) as exc:
            problems.append(f"{key}: {exc}")
    return problems


def scenario_from_dict(doc: Mapping, base_dir: str | Path | None = None, seed: int | None = None) -> Scenario:
    problems = scenario_problems(doc, base_dir)
    if problems:
        raise ScenarioError(problems)
    net_doc, _ = _read_network_doc(doc["network"], Path(base_dir) if base_dir is not None else None)
    net = network_from_dict(net_doc)
    seed = int(doc.get("seed", 0)) if seed is None else seed
    start = float(doc.get("start_s", 0.0))
    evo = replace(EvoConfig.from_dict(doc.get("evo") or {"population_size": 24, "generations": 40}), seed=seed)
    hospitals = tuple(Hospital(str(h["id"]), int(h["node"]), int(h.get("capacity", 0))) for h in doc.get("hospitals", []))
    civilians = [
        CivilianTrip(str(c["id"]), int(c["origin"]), int(c["dest"]), float(c["depart_s"]))
        for c in doc.get("civilians", [])
    ]
    n_random = int(doc.get("random_civilians", 0))
    if n_random:
        rng = random.Random(seed)
        nodes = net.nodes
        for k in range(n_random):
            o, d = rng.sample(nodes, 2)
            civilians.append(CivilianTrip(f"civ{k}", o, d, start + rng.uniform(0, float(doc["deadline_s"]) - start)))
    svc = doc.get("service", {})
    brd = doc.get("boarding", {})
    road = doc.get("road", {})
    return Scenario(
        name=str(doc.get("name", "scenario")),
        net=net,
        deadline=float(doc["deadline_s"]),
        seed=seed,
        start=start,
        horizon=float(doc["horizon_s"]) if "horizon_s" in doc else None,
        latency=float(doc.get("notification_latency_s", 1.0)),
        tick=float(doc.get("signal_tick_s", 30.0)),
        hospitals=hospitals,
        fleets={str(h["id"]): int(h.get("ambulances", 0)) for h in doc.get("hospitals", [])},
        communities=tuple(
            Community(str(c["id"]), int(c["node"]), int(c["population"])) for c in doc.get("communities", [])
        ),
        threshold=float(doc.get("coverage_threshold_s", 900.0)),
        depots=tuple(
            BusDepot(str(d["id"]), int(d["node"]), int(d["fleet"]), int(d["bus_capacity"])) for d in doc.get("depots", [])
        ),
        pickups=tuple(
            PickupPoint(str(p["id"]), int(p["node"]), int(p["demand"]), int(p["boarding_cap"]))
            for p in doc.get("pickups", [])
        ),
        shelters=tuple(Shelter(str(s["id"]), int(s["node"]), int(s["capacity"])) for s in doc.get("shelters", [])),
        facilities=tuple(
            Facility(
                id=str(f["id"]),
                node=int(f["node"]),
                hazard_zone=tuple(int(n) for n in f.get("hazard_zone", [])),
                contraflow_arcs=tuple(int(a) for a in f.get("contraflow_arcs", [])),
                pickups=tuple(str(p) for p in f.get("pickups", [])),
                shelters=tuple(str(s) for s in f.get("shelters", [])),
                patients=tuple(
                    FacilityPatient(
                        str(p["id"]),
                        int(p["node"]),
                        PatientGroup(p["group"]),
                        float(p["onset_s"]) if "onset_s" in p else None,
                    )
                    for p in f.get("patients", [])
                ),
            )
            for f in doc.get("facilities", [])
        ),
        signals={int(s["node"]): SignalPlan.from_dict(s["plan"]) for s in doc.get("signals", [])},
        incidents=tuple(IncidentMessage.from_dict(dict(m)) for m in doc.get("incidents", [])),
        demand_updates=tuple(
            DemandUpdate(float(u["t_s"]), str(u["pickup"]), int(u["demand"])) for u in doc.get("demand_updates", [])
        ),
        civilians=tuple(civilians),
        penalty_factor=float(road.get("penalty_factor", 3.0)),
        penalty_radius=int(road.get("radius_hops", 1)),
        service=ServiceTimes(
            float(svc.get("on_site_s", ServiceTimes.on_site)),
            float(svc.get("pickup_s", ServiceTimes.pickup)),
            float(svc.get("handover_s", ServiceTimes.handover)),
        ),
        boarding=BoardingTimes(
            float(brd.get("per_evacuee_s", BoardingTimes.per_evacuee)),
            float(brd.get("per_visit_s", BoardingTimes.per_visit)),
        ),
        evo=evo,
    )


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})"]) from None
    return scenario_from_dict(doc, path.parent, seed)


# -- metrics -----------------------------------------------------------------


@dataclass
class Metrics:
    tet: float = 0.0
    ct: float = 0.0
    max_patient_wait: float = 0.0
    total_evacuated: int = 0
    notification_latency: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tet_s": self.tet,
            "ct_s": self.ct,
            "max_patient_wait_s": self.max_patient_wait,
            "total_evacuated": self.total_evacuated,
            "notification_latency_s": dict(sorted(self.notification_latency.items())),
        }

    def rows(self) -> list[tuple[str, Any]]:
        out = [
            ("tet_s", self.tet),
            ("ct_s", self.ct),
            ("max_patient_wait_s", self.max_patient_wait),
            ("total_evacuated", self.total_evacuated),
        ]
        out += [(f"latency_{d}_s", v) for d, v in sorted(self.notification_latency.items())]
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerows(self.rows())


def _field(rec: Mapping, key: str, kind=(int, float)):
    try:
        v = rec[key]
    except KeyError:
        raise TraceError(f"record {rec.get('seq')}: missing {key!r}") from None
    if not isinstance(v, kind) or isinstance(v, bool):
        raise TraceError(f"record {rec.get('seq')}: bad {key!r} value {v!r}")
    return v


def compute_metrics(trace: Sequence[Mapping]) -> Metrics:
    """Aggregate a trace into :class:`Metrics`; depends on nothing else."""
    first = last_safe = None
    ct = wait = 0.0
    evacuated = 0
    latency: dict[str, float] = {}
    prev_t = -math.inf
    for rec in trace:
        if not isinstance(rec, Mapping):
            raise TraceError("trace records must be objects")
        kind = _field(rec, "kind", str)
        if kind not in EVENT_RANK:
            raise TraceError(f"record {rec.get('seq')}: unknown kind {kind!r}")
        t = _field(rec, "t")
        if t < prev_t:
            raise TraceError(f"record {rec.get('seq')}: time goes backwards")
        prev_t = t
        if kind == "incident":
            first = t if first is None else min(first, t)
        elif kind == "notification":
            dept = _field(rec, "department", str)
            latency[dept] = max(latency.get(dept, 0.0), _field(rec, "latency"))
        elif kind == "vehicle-arrival":
            if rec.get("penalized"):
                ct += t - _field(rec, "entered")
            if "wait" in rec:
                wait = max(wait, _field(rec, "wait"))
            stop = rec.get("stop")
            safe = stop == "deliver-hospital"
            if stop == "shelter":
                n = _field(rec, "count", int)
                evacuated += n
                safe = n > 0
            if safe:
                last_safe = t if last_safe is None else max(last_safe, t)
    tet = 0.0 if first is None or last_safe is None else max(0.0, last_safe - first)
    return Metrics(tet, ct, wait, evacuated, latency)


# -- engine ------------------------------------------------------------------


@dataclass(order=True)
class Event:
    time: float
    rank: int
    id: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


@dataclass
class PlannedRoute:
    """A route as handed to a vehicle, with the network state it was planned on."""

    vehicle: str
    kind: str
    route: Any
    net: TimeDependentNetwork = field(repr=False)
    penalties: dict[int, float] = field(default_factory=dict)
    gen: int = 0

    def planned_arrivals(self) -> list[tuple[int, float]]:
        out = []
        for path in _route_paths(self):
            if path.arcs:
                out += list(zip(path.nodes[1:], path.node_times[1:]))
            else:
                out.append((path.origin, path.departure))
        return out

    def replay(self) -> list[str]:
        if self.kind == "bus":
            return replay_bus_route(self.net, self.route, self.penalties)
        if self.kind == "ambulance":
            return replay_route(self.net, self.route, self.penalties)
        problems = []
        for name, leg in (("outbound", self.route.outbound), ("return", self.route.back)):
            times = self.net.traverse(leg.arcs, leg.departure, self.penalties)
            if times[-1] != leg.arrival:
                problems.append(f"{name}: replayed arrival {times[-1]} != planned {leg.arrival}")
        return problems


def _route_paths(pr: PlannedRoute) -> list[TimedPath]:
    if pr.kind == "bus":
        return [v.path for v in pr.route.visits]
    if pr.kind == "ambulance":
        return [s.path for s in pr.route.stops]
    return [pr.route.outbound, pr.route.back]


def _darp_dict(d: DarpResult) -> dict:
    return {
        "outbound": {"departure_s": d.outbound.departure, "arrival_s": d.outbound.arrival, "arcs": list(d.outbound.arcs)},
        "on_scene_s": d.on_scene,
        "return": {"departure_s": d.back.departure, "arrival_s": d.back.arrival, "arcs": list(d.back.arcs)},
        "total_time_s": d.total_time,
    }


def _plan_dict(plan: Any) -> dict:
    if isinstance(plan, DarpResult):
        return _darp_dict(plan)
    return plan.to_dict()


@dataclass
class SimResult:
    scenario: Scenario
    metrics: Metrics
    trace: list[dict]
    plans: dict[str, Any]
    histories: dict[str, list]
    controllers: dict[int, SignalController]
    routes: list[PlannedRoute]
    evacuations: dict[str, EvacState]
    penalty_log: list[tuple[float, dict[int, float]]]
    zone_log: list[tuple[float, tuple[int, ...]]]

    def trace_lines(self) -> list[str]:
        return [json.dumps(rec, sort_keys=True) for rec in self.trace]

    def checksum(self) -> str:
        return hashlib.sha256(("\n".join(self.trace_lines()) + "\n").encode()).hexdigest()

    def consistency_problems(self) -> list[str]:
        """Replay every plan and compare it with what vehicles actually did.

        Vehicles whose plan was superseded mid-run are replayed but not
        compared with the trace.
        """
        problems = []
        executed: dict[str, list[tuple[int, float]]] = {}
        for rec in self.trace:
            if rec["kind"] == "vehicle-arrival" and rec["role"] != "civilian":
                executed.setdefault(rec["vehicle"], []).append((rec["node"], rec["t"]))
        latest: dict[str, int] = {}
        for pr in self.routes:
            latest[pr.vehicle] = max(latest.get(pr.vehicle, 0), pr.gen)
        for pr in self.routes:
            problems += [f"{pr.vehicle}: {p}" for p in pr.replay()]
            if latest[pr.vehicle] == 0:
                if executed.get(pr.vehicle, []) != pr.planned_arrivals():
                    problems.append(f"{pr.vehicle}: executed arrivals differ from the plan")
        return problems

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        p = out / "trace.jsonl"
        p.write_text("".join(line + "\n" for line in self.trace_lines()))
        written.append(p)
        p = out / "metrics.json"
        p.write_text(json.dumps(self.metrics.to_dict(), sort_keys=True, indent=2) + "\n")
        written.append(p)
        p = out / "metrics.csv"
        self.metrics.write_csv(p)
        written.append(p)
        p = out / "plans.json"
        p.write_text(json.dumps({k: _plan_dict(v) for k, v in self.plans.items()}, sort_keys=True, indent=2) + "\n")
        written.append(p)
        for name, plan in self.plans.items():
            safe = name.replace(":", "_")
            if isinstance(plan, EvacPlan):
                p = out / f"pickups_{safe}.csv"
                plan.write_pickups_csv(p)
                written.append(p)
            elif isinstance(plan, DispatchPlan):
                p = out / f"waits_{safe}.csv"
                plan.write_waits_csv(p)
                written.append(p)
        for node, ctl in sorted(self.controllers.items()):
            p = out / f"signal_{node}.csv"
            ctl.write_trace(p)
            written.append(p)
        for name, results in sorted(self.histories.items()):
            for k, res in enumerate(results):
                p = out / f"history_{name.replace(':', '_')}_{k}.csv"
                res.write_history(p)
                written.append(p)
        return written


class Simulation:
    """Single-threaded event loop over one scenario."""

    def __init__(self, scenario: Scenario, solver: str = "auto") -> None:
        if solver not in SOLVER_MODES:
            raise ValueError(f"unknown solver mode {solver!r}")
        self.sc = scenario
        self.solver = solver
        self.queue: list[Event] = []
        self._next_id = 0
        self.trace: list[dict] = []
        self.ccu = NotificationBus()
        self.incidents = {m.id: m for m in scenario.incidents}
        self.pickups = {p.id: p for p in scenario.pickups}
        self.shelters = {s.id: s for s in scenario.shelters}
        self.contraflow: set[int] = set()
        self.zone: set[int] = set()
        self.net = scenario.net
        self.civil_net = scenario.net
        self.penalties: dict[int, float] = {}
        self.penalty_log: list[tuple[float, dict[int, float]]] = []
        self.zone_log: list[tuple[float, tuple[int, ...]]] = []
        self._routers: dict[str, Router] = {}
        self.controllers = {n: SignalController(plan, scenario.start) for n, plan in sorted(scenario.signals.items())}
        self.gen: dict[str, int] = {}
        self.cuts: dict[str, list[tuple[float, float]]] = {}
        self.requests: dict[str, int] = {}
        self.evacuations: dict[str, EvacState] = {}
        self.plans: dict[str, Any] = {}
        self.histories: dict[str, list] = {}
        self.routes: list[PlannedRoute] = []
        self.trips = {c.id: c for c in scenario.civilians}

    # -- queue

    def _push(self, t: float, kind: str, **payload) -> None:
        heapq.heappush(self.queue, Event(t, EVENT_RANK[kind], self._next_id, kind, payload))
        self._next_id += 1

    def _record(self, ev: Event, **fields) -> dict:
        rec = {"seq": len(self.trace), "t": ev.time, "kind": ev.kind}
        rec.update(fields)
        self.trace.append(rec)
        return rec

    def _seed_events(self) -> None:
        sc = self.sc
        for m in sorted(sc.incidents, key=lambda m: (m.timestamp, m.id)):
            self._push(m.timestamp, "incident", incident=m.id)
        for u in sorted(sc.demand_updates, key=lambda u: u.t):
            self._push(u.t, "demand-update", pickup=u.pickup, demand=u.demand)
        for c in sorted(sc.civilians, key=lambda c: (c.depart, c.id)):
            self._push(c.depart, "vehicle-arrival", vehicle=c.id, role="civilian", node=c.origin, arc=None,
                       entered=c.depart, origin=True)
        for node in self.controllers:
            k = 0
            while sc.start + k * sc.tick <= sc.end:
                self._push(sc.start + k * sc.tick, "signal-tick", node=node)
                k += 1

    def run(self) -> SimResult:
        self._seed_events()
        handlers = {
            "incident": self._on_incident,
            "notification": self._on_notification,
            "demand-update": self._on_demand_update,
            "signal-tick": self._on_signal_tick,
            "crossing-confirm": self._on_crossing,
            "vehicle-arrival": self._on_arrival,
            "boarding-complete": self._on_boarding_complete,
        }
        while self.queue:
            ev = heapq.heappop(self.queue)
            handlers[ev.kind](ev)
        return SimResult(
            self.sc,
            compute_metrics(self.trace),
            self.trace,
            self.plans,
            self.histories,
            self.controllers,
            self.routes,
            self.evacuations,
            self.penalty_log,
            self.zone_log,
        )

    # -- network state

    def _router(self, civil: bool = False) -> Router:
        key = "civil" if civil else "emergency"
        r = self._routers.get(key)
        if r is None:
            r = self._routers[key] = Router(self.civil_net if civil else self.net, self.penalties)
        return r

    def _rebuild_networks(self) -> None:
        self.net = apply_contraflow(self.sc.net, sorted(self.contraflow))
        self.civil_net = block_zone(self.net, sorted(self.zone))
        self._routers.clear()

    def _factor_at(self, arc: int, t: float) -> float:
        factor = 1.0
        for since, snapshot in self.penalty_log:
            if since > t:
                break
            factor = snapshot.get(arc, 1.0)
        return factor

    def _arcs_near(self, node: int, radius: int) -> list[int]:
        ball = {node}
        frontier = {node}
        for _ in range(radius - 1):
            nxt = set()
            for a in self.net.arcs:
                if a.tail in frontier and a.head not in ball:
                    nxt.add(a.head)
                if a.head in frontier and a.tail not in ball:
                    nxt.add(a.tail)
            ball |= nxt
            frontier = nxt
        return sorted(a.id for a in self.net.arcs if a.tail in ball or a.head in ball)

    # -- generations (re-planned vehicles)

    def _superseded(self, vehicle: str, gen: int | None) -> tuple[float, float] | None:
        """(cut time, re-plan time) if ``gen`` is no longer the vehicle's plan."""
        if gen is None or gen == self.gen.get(vehicle, 0):
            return None
        return self.cuts[vehicle][gen]

    def _supersede(self, vehicle: str, cut: float, now: float) -> int:
        g = self.gen.get(vehicle, 0)
        self.cuts.setdefault(vehicle, []).append((cut, now))
        self.gen[vehicle] = g + 1
        return g + 1

    # -- movement scheduling

    def _schedule_path(self, vehicle, role, path, gen, final=None, bus_attrs=None) -> None:
        for k, arc in enumerate(path.arcs):
            entered, arrive = path.node_times[k], path.node_times[k + 1]
            tail, head = path.nodes[k], path.nodes[k + 1]
            if head in self.controllers:
                n = self.requests.get(vehicle, 0) + 1
                self.requests[vehicle] = n
                rid = f"{vehicle}#{n}"
                req = {"id": rid, "approach": arc, "eta": arrive, "class": role}
                if bus_attrs is not None:
                    req["bus"] = bus_attrs(head)
                self._push(entered, "signal-tick", node=head, vehicle=vehicle, gen=gen, request=req)
                self._push(arrive, "crossing-confirm", node=head, vehicle=vehicle, gen=gen, request_id=rid)
            payload = {"vehicle": vehicle, "role": role, "node": head, "from": tail, "arc": arc, "entered": entered}
            if k == len(path.arcs) - 1 and final:
                payload.update(final)
            self._push(arrive, "vehicle-arrival", gen=gen, **payload)
        if not path.arcs and final:
            self._push(path.departure, "vehicle-arrival", gen=gen, vehicle=vehicle, role=role, node=path.origin,
                       **{"from": path.origin}, arc=None, entered=path.departure, **final)

    def _schedule_darp(self, vehicle: str, darp: DarpResult, incident: IncidentMessage) -> None:
        wait = darp.outbound.arrival - incident.timestamp
        self._schedule_path(vehicle, "ambulance", darp.outbound, 0,
                            {"stop": StopKind.PICKUP.value, "patient": incident.id, "wait": wait})
        self._schedule_path(vehicle, "ambulance", darp.back, 0,
                            {"stop": StopKind.DELIVER.value, "patient": incident.id})
        self.routes.append(PlannedRoute(vehicle, "darp", darp, self.net, dict(self.penalties)))

    def _schedule_ambulance(self, vehicle: str, route: AmbulanceRoute, waits: Mapping[str, float]) -> None:
        for s in route.stops:
            final = {"stop": s.kind.value, "patient": s.patient}
            if s.kind is not StopKind.DELIVER:
                final["wait"] = waits[s.patient]
            self._schedule_path(vehicle, "ambulance", s.path, 0, final)
        self.routes.append(PlannedRoute(vehicle, "ambulance", route, self.net, dict(self.penalties)))

    def _schedule_bus(self, vehicle: str, route: BusRoute, gen: int) -> None:
        coords = self.net.coords
        load = route.initial_onboard
        for i, v in enumerate(route.visits):
            rest = route.visits[i:]
            onboard = load
            pickups_left = [w for w in rest if w.kind is VisitKind.PICKUP]
            shelter = next((w for w in rest if w.kind is VisitKind.SHELTER), None)

            def attrs(node, onboard=onboard, pickups_left=pickups_left, shelter=shelter):
                dist = 0.0
                if shelter is not None:
                    (x0, y0), (x1, y1) = coords[node], coords[shelter.location]
                    dist = math.hypot(x1 - x0, y1 - y0)
                return {
                    "demand": onboard + sum(w.count for w in pickups_left),
                    "shelter_distance": dist,
                    "remaining_pickups": len(pickups_left),
                }

            final = {"stop": v.kind.value, "site": v.id, "count": v.count, "onboard": v.onboard}
            self._schedule_path(vehicle, "bus", v.path, gen, final, attrs)
            self._push(v.depart, "boarding-complete", gen=gen, vehicle=vehicle, node=v.location, site=v.id,
                       count=v.count, onboard=v.onboard)
            load = v.onboard
        self.routes.append(PlannedRoute(vehicle, "bus", route, self.net, dict(self.penalties), gen))

    # -- handlers

    def _on_incident(self, ev: Event) -> None:
        msg = self.incidents[ev.payload["incident"]]
        notes = self.ccu.ingest(msg)
        depts = {n.department for n in notes}
        cls = notes[0].classification
        self._record(
            ev,
            incident=msg.id,
            scene=msg.scene.value,
            location=msg.location,
            condition=msg.condition,
            type=cls.type.value,
            level=cls.level.value,
            departments=[d.value for d in DEPARTMENT_ORDER if d in depts],
        )
        for d in DEPARTMENT_ORDER:
            if d in depts:
                self._push(ev.time + self.sc.latency, "notification", incident=msg.id, department=d.value)

    def _on_notification(self, ev: Event) -> None:
        msg = self.incidents[ev.payload["incident"]]
        dept = Department(ev.payload["department"])
        rec = self._record(ev, incident=msg.id, department=dept.value, latency=ev.time - msg.timestamp)
        handler = {
            Department.POLICE: self._police,
            Department.TRAFFIC_CONTROL: self._traffic_control,
            Department.FIRE: lambda m, t: {},
            Department.HOSPITAL: self._hospital,
            Department.BUS_TERMINAL: self._bus_terminal,
        }[dept]
        rec.update(handler(msg, ev.time))

    def _police(self, msg: IncidentMessage, t: float) -> dict:
        fac = self.sc.facility_at(msg.location) if msg.scene is Scene.FACILITY else None
        if fac is None or not fac.hazard_zone:
            return {}
        self.zone |= set(fac.hazard_zone)
        self._rebuild_networks()
        self.zone_log.append((t, tuple(sorted(self.zone))))
        return {"hazard_zone": sorted(fac.hazard_zone)}

    def _traffic_control(self, msg: IncidentMessage, t: float) -> dict:
        if msg.scene is Scene.ROAD:
            arcs = self._arcs_near(msg.location, self.sc.penalty_radius)
            for a in arcs:
                self.penalties[a] = max(self.penalties.get(a, 1.0), self.sc.penalty_factor)
            self.penalty_log.append((t, dict(self.penalties)))
            self._routers.clear()
            return {"penalized_arcs": arcs, "penalty_factor": self.sc.penalty_factor}
        fac = self.sc.facility_at(msg.location) if msg.scene is Scene.FACILITY else None
        if fac is None or not fac.contraflow_arcs:
            return {}
        self.contraflow |= set(fac.contraflow_arcs)
        self._rebuild_networks()
        return {"contraflow": sorted(fac.contraflow_arcs)}

    def _nearest_hospital(self, node: int, t: float) -> Hospital | None:
        router = self._router()
        best = None
        for h in sorted(self.sc.hospitals, key=lambda h: h.id):
            a = router.arrival(h.location, node, t)
            if a < math.inf and (best is None or a < best[0]):
                best = (a, h)
        return None if best is None else best[1]

    def _hospital(self, msg: IncidentMessage, t: float) -> dict:
        sc = self.sc
        if not sc.hospitals:
            return {"note": "no hospital configured"}
        if msg.scene is Scene.FACILITY:
            return self._group_dispatch(msg, t)
        out: dict = {}
        hospital = None
        if msg.scene is Scene.HOUSEHOLD and sc.communities:
            history: list = []
            cover = solve_accp(self.net, sc.hospitals, sc.communities, sc.threshold, t,
                               self.solver, sc.evo, history)
            self.plans[f"accp:{msg.id}"] = cover
            if history:
                self.histories[f"accp:{msg.id}"] = history
            community = next((c for c in sorted(sc.communities, key=lambda c: c.id) if c.location == msg.location), None)
            if community is not None and community.id in cover.assignment:
                hospital = next(h for h in sc.hospitals if h.id == cover.assignment[community.id])
                out["community"] = community.id
        if hospital is None:
            hospital = self._nearest_hospital(msg.location, t)
            if hospital is None:
                return {"unreachable": True}
        try:
            darp = route_single(self.net, hospital.location, msg.location, t, sc.service.pickup, self._router())
        except LegUnreachable as exc:
            out.update(hospital=hospital.id, unreachable=exc.leg)
            return out
        vehicle = f"{hospital.id}:{msg.id}"
        self._schedule_darp(vehicle, darp, msg)
        self.plans[f"darp:{msg.id}"] = darp
        out.update(hospital=hospital.id, vehicle=vehicle)
        return out

    def _group_dispatch(self, msg: IncidentMessage, t: float) -> dict:
        sc = self.sc
        fac = sc.facility_at(msg.location)
        patients = [
            Patient(p.id, p.location, p.group, msg.timestamp if p.onset is None else p.onset) for p in fac.patients
        ]
        fleet = make_fleet(sc.hospitals, sc.fleets)
        if not patients or not fleet:
            return {"patients": len(patients), "ambulances": len(fleet)}
        history: list = []
        try:
            plan = solve_group_dispatch(self.net, sc.hospitals, fleet, patients, t, self.solver, sc.service,
                                        evo_config=sc.evo, router=self._router(), history=history)
        except LegUnreachable as exc:
            return {"unreachable": exc.leg}
        self.plans[f"dispatch:{msg.id}"] = plan
        if history:
            self.histories[f"dispatch:{msg.id}"] = history
        for route in plan.routes:
            if route.stops:
                self._schedule_ambulance(f"{route.ambulance}:{msg.id}", route, plan.waits)
        return {"patients": len(patients), "ambulances": len(fleet), "max_wait": plan.objective}

    def _bus_terminal(self, msg: IncidentMessage, t: float) -> dict:
        sc = self.sc
        fac = sc.facility_at(msg.location) if msg.scene is Scene.FACILITY else None
        if fac is None or not sc.depots:
            return {}
        if fac.id in self.evacuations:
            return {"note": f"evacuation of {fac.id} already running"}
        state = EvacState.create(
            sc.depots,
            [self.pickups[p] for p in fac.pickups],
            [self.shelters[s] for s in fac.shelters],
            sc.deadline,
            t,
            sc.boarding,
        )
        self.evacuations[fac.id] = state
        plan = self._replan(fac.id, t)
        return {"facility": fac.id, "planned_evacuees": plan.total_evacuated, "method": plan.method}

    def _replan(self, fid: str, t: float) -> EvacPlan:
        state = self.evacuations[fid]
        fresh = state.plan is None
        history: list = []
        plan = state.replan(self.net, t, self.solver, self.sc.evo, self._router(), history)
        key = f"ebpd:{fid}"
        if history:
            self.histories.setdefault(key, []).extend(history)
        self.plans[key] = plan
        by_bus = {r.bus: r for r in plan.routes}
        for bid, start in sorted(state.buses.items()):
            vehicle = f"{bid}:{fid}"
            gen = 0 if fresh else self._supersede(vehicle, start.time, t)
            if bid in by_bus:
                self._schedule_bus(vehicle, by_bus[bid], gen)
        return plan

    def _on_demand_update(self, ev: Event) -> None:
        pid, demand = ev.payload["pickup"], ev.payload["demand"]
        fid = next((f for f, st in sorted(self.evacuations.items()) if pid in st.pickups), None)
        if fid is None:
            self.pickups[pid] = replace(self.pickups[pid], demand=demand)
            self._record(ev, pickup=pid, demand=demand, replanned=False)
            return
        state = self.evacuations[fid]
        dirty = state.update_demand(pid, demand, now=ev.time)
        rec = self._record(ev, pickup=pid, demand=demand, replanned=dirty)
        if dirty:
            plan = self._replan(fid, ev.time)
            rec["planned_evacuees"] = plan.total_evacuated

    def _on_signal_tick(self, ev: Event) -> None:
        node = ev.payload["node"]
        ctl = self.controllers[node]
        req = ev.payload.get("request")
        if req is None:
            st = ctl.tick(ev.time)
            self._record(ev, node=node, phase=st.phase, mode=st.mode.value)
            return
        vehicle = ev.payload["vehicle"]
        cut = self._superseded(vehicle, ev.payload["gen"])
        if cut is not None and ev.time >= cut[0]:
            return
        bus = BusAttributes(**req["bus"]) if "bus" in req else None
        vclass = VehicleClass.EMERGENCY_BUS if bus is not None else VehicleClass.AMBULANCE
        pr = PreemptionRequest(req["id"], vclass, req["approach"], req["eta"], ev.time, bus)
        fields = {"node": node, "vehicle": vehicle, "request": req["id"], "approach": req["approach"], "eta": req["eta"]}
        try:
            fields["action"] = ctl.request_preemption(pr, ev.time).value
        except SignalError as exc:
            fields["action"] = None
            fields["note"] = str(exc)
        st = ctl.state
        self._record(ev, phase=st.phase, mode=st.mode.value, **fields)

    def _on_crossing(self, ev: Event) -> None:
        vehicle = ev.payload["vehicle"]
        cut = self._superseded(vehicle, ev.payload["gen"])
        if cut is not None and ev.time > cut[0]:
            return
        node = ev.payload["node"]
        st = self.controllers[node].tick(ev.time, [ev.payload["request_id"]])
        self._record(ev, node=node, vehicle=vehicle, request=ev.payload["request_id"], phase=st.phase,
                     mode=st.mode.value)

    def _movement_fields(self, p: dict) -> dict:
        fields = {k: p[k] for k in ("vehicle", "role", "node", "arc", "entered") if k in p}
        if "from" in p:
            fields["from"] = p["from"]
        arc = p.get("arc")
        fields["penalized"] = arc is not None and self._factor_at(arc, p["entered"]) > 1.0
        return fields

    def _on_arrival(self, ev: Event) -> None:
        p = ev.payload
        if p["role"] == "civilian":
            self._civilian_step(ev)
            return
        fields = self._movement_fields(p)
        cut = self._superseded(p["vehicle"], p.get("gen"))
        if cut is not None:
            if ev.time > cut[0]:
                return
            if ev.time >= cut[1]:
                p = {k: v for k, v in p.items() if k not in ("stop", "site", "count", "onboard", "patient", "wait")}
        for key in ("stop", "site", "count", "onboard", "patient", "wait"):
            if key in p:
                fields[key] = p[key]
        self._record(ev, **fields)

    def _on_boarding_complete(self, ev: Event) -> None:
        p = ev.payload
        cut = self._superseded(p["vehicle"], p.get("gen"))
        if cut is not None and ev.time > cut[0]:
            return
        self._record(ev, **{k: p[k] for k in ("vehicle", "node", "site", "count", "onboard")})

    def _civilian_step(self, ev: Event) -> None:
        p = ev.payload
        trip = self.trips[p["vehicle"]]
        fields = self._movement_fields(p)
        if p.get("origin"):
            fields["origin"] = True
        node = p["node"]
        if node == trip.dest:
            self._record(ev, arrived=True, **fields)
            return
        router = self._router(civil=True)
        if trip.dest not in router.tree(node, ev.time):
            self._record(ev, stranded=True, **fields)
            return
        self._record(ev, **fields)
        path = router.path(node, trip.dest, ev.time)
        self._push(path.node_times[1], "vehicle-arrival", vehicle=trip.id, role="civilian", node=path.nodes[1],
                   **{"from": node}, arc=path.arcs[0], entered=ev.time)


def run(scenario: Scenario, solver: str = "auto") -> SimResult:
    """Execute a scenario and return metrics, trace and plans."""
    return Simulation(scenario, solver).run()


__all__ = [
    "CivilianTrip",
    "DemandUpdate",
    "EVENT_RANK",
    "Event",
    "Facility",
    "FacilityPatient",
    "Metrics",
    "PlannedRoute",
    "Scenario",
    "ScenarioError",
    "SimResult",
    "Simulation",
    "TraceError",
    "compute_metrics",
    "load_scenario",
    "run",
    "scenario_from_dict",
    "scenario_problems",
]
