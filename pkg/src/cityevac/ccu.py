"""Command-and-control unit: triage incidents and notify departments."""

from __future__ import annotations

import bisect
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, Protocol


class Scene(str, Enum):
    HOUSEHOLD = "household"
    ROAD = "road"
    FACILITY = "facility"


class EmergencyType(str, Enum):
    MEDICAL = "medical"
    TRAFFIC = "traffic"
    FIRE = "fire"
    ATTACK = "attack"


class Level(str, Enum):
    MAJOR = "major"
    MINOR = "minor"


class Department(str, Enum):
    HOSPITAL = "hospital"
    POLICE = "police"
    FIRE = "fire"
    BUS_TERMINAL = "bus_terminal"
    TRAFFIC_CONTROL = "traffic_control"


class CCUError(ValueError):
    pass


class UnknownCondition(CCUError):
    pass


class DuplicateIncident(CCUError):
    pass


@dataclass(frozen=True)
class Congestion:
    link_flow: float  # vehicles/hour
    avg_speed: float  # m/s


@dataclass(frozen=True)
class IncidentMessage:
    id: str
    timestamp: float
    scene: Scene
    location: int
    condition: str
    population: int = 0
    congestion: Congestion | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "scene", Scene(self.scene))
        if self.timestamp < 0:
            raise CCUError(f"incident {self.id}: negative timestamp")
        if self.population < 0:
            raise CCUError(f"incident {self.id}: negative population")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IncidentMessage":
        cong = d.get("congestion")
        return cls(
            id=str(d["id"]),
            timestamp=float(d["timestamp"]),
            scene=Scene(d["scene"]),
            location=int(d["location"]),
            condition=str(d["condition"]),
            population=int(d.get("population", 0)),
            congestion=Congestion(**cong) if cong else None,
        )


@dataclass(frozen=True)
class Classification:
    type: EmergencyType
    level: Level


@dataclass(frozen=True)
class Notification:
    incident_id: str
    department: Department
    classification: Classification
    payload: dict = field(hash=False)

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "department": self.department.value,
            "type": self.classification.type.value,
            "level": self.classification.level.value,
            "payload": self.payload,
        }


M, T, F, A = EmergencyType.MEDICAL, EmergencyType.TRAFFIC, EmergencyType.FIRE, EmergencyType.ATTACK

MAJOR_CONDITIONS = (
    "cardiac_arrest",
    "unconsciousness",
    "difficulty_breathing",
    "seizures",
    "severe_injuries",
    "strokes",
    "head_trauma",
    "bone_fractures",
    "asthma_attacks",
    "chronic_condition_elderly",
    "sick_children",
    "bleeding_cuts",
    "bruising_swelling",
    "minor_injuries",
    "persistent_fevers",
)
MINOR_CONDITIONS = ("constipation", "chronic_cough", "diarrhoea", "skin_rash")
CRASH_CONDITIONS = ("vehicle_crash", "collision", "vibration_impact")
FIRE_CONDITIONS = ("fire_alarm", "smoke_detected", "fire")
ATTACK_CONDITIONS = ("terrorist_attack", "intrusion_alarm", "explosion", "gunshot")

CONDITION_TABLE: dict[str, Classification] = {
    **{c: Classification(M, Level.MAJOR) for c in MAJOR_CONDITIONS},
    **{c: Classification(M, Level.MINOR) for c in MINOR_CONDITIONS},
    **{c: Classification(T, Level.MAJOR) for c in CRASH_CONDITIONS},
    **{c: Classification(F, Level.MAJOR) for c in FIRE_CONDITIONS},
    **{c: Classification(A, Level.MAJOR) for c in ATTACK_CONDITIONS},
}

D = Department
ROUTING_TABLE: dict[tuple[EmergencyType, Level], tuple[Department, ...]] = {
    (M, Level.MAJOR): (D.HOSPITAL,),
    (M, Level.MINOR): (D.HOSPITAL,),
    (T, Level.MAJOR): (D.POLICE, D.HOSPITAL, D.TRAFFIC_CONTROL),
    (T, Level.MINOR): (D.POLICE, D.TRAFFIC_CONTROL),
    (F, Level.MAJOR): (D.FIRE, D.HOSPITAL, D.BUS_TERMINAL, D.POLICE, D.TRAFFIC_CONTROL),
    (F, Level.MINOR): (D.FIRE,),
    (A, Level.MAJOR): (D.FIRE, D.HOSPITAL, D.BUS_TERMINAL, D.POLICE, D.TRAFFIC_CONTROL),
    (A, Level.MINOR): (D.POLICE,),
}


class Classifier(Protocol):
    def classify(self, msg: IncidentMessage) -> Classification: ...


class RuleClassifier:
    """Token lookup; a learned model can replace it behind ``Classifier``."""

    def __init__(self, table: dict[str, Classification] | None = None) -> None:
        self.table = dict(CONDITION_TABLE if table is None else table)

    def classify(self, msg: IncidentMessage) -> Classification:
        try:
            return self.table[msg.condition]
        except KeyError:
            raise UnknownCondition(f"unknown condition token {msg.condition!r}") from None


def classify(msg: IncidentMessage) -> Classification:
    return RuleClassifier().classify(msg)


def route_notifications(cls: Classification, msg: IncidentMessage) -> list[Notification]:
    payload = msg.to_dict()
    return [
        Notification(msg.id, dept, cls, payload)
        for dept in ROUTING_TABLE[(cls.type, cls.level)]
    ]


class NotificationBus:
    """Per-department notification queues.

    Single writer: callers serialize :meth:`ingest`.  Each department queue
    stays ordered by (incident timestamp, incident id) even if messages are
    ingested out of order; ``log`` keeps plain emission order.
    """

    def __init__(self, classifier: Classifier | None = None) -> None:
        self.classifier = classifier or RuleClassifier()
        self.queues: dict[Department, list[Notification]] = {d: [] for d in Department}
        self.log: list[Notification] = []
        self._seen: set[str] = set()

    def ingest(self, msg: IncidentMessage) -> list[Notification]:
        if msg.id in self._seen:
            raise DuplicateIncident(f"incident {msg.id} already ingested")
        cls = self.classifier.classify(msg)
        notes = route_notifications(cls, msg)
        self._seen.add(msg.id)
        for note in notes:
            bisect.insort(self.queues[note.department], note, key=_queue_key)
        self.log.extend(notes)
        return notes

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for note in self.log:
                fh.write(json.dumps(note.to_dict(), sort_keys=True) + "\n")


def _queue_key(note: Notification):
    return (note.payload["timestamp"], note.incident_id)


def read_incidents(path) -> list[IncidentMessage]:
    with open(path) as fh:
        return [IncidentMessage.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_incidents(path, msgs: Iterable[IncidentMessage]) -> None:
    with open(path, "w") as fh:
        for m in msgs:
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")
