"""Session annotation data model, flat-CSV exchange format and schema validation.

One CSV row is one event::

    session_id,seat,kind,value,start_ms,end_ms
    S01,2,food_lifted,fork,100400,100800

Optional ``# key=value`` lines before the header carry session metadata
(``duration_ms`` and ``seat_angles``) so that a written file parses back to
an identical :class:`SessionAnnotations`.
"""
from __future__ import annotations

import csv
import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import IllegalValueForKind, MalformedRow, NonPositiveDuration

CSV_HEADER = ("session_id", "seat", "kind", "value", "start_ms", "end_ms")

UTENSILS = ("fork", "knife", "spoon", "chopsticks", "hand")
DRINKWARE = ("cup", "bottle")

# legal annotation values per event kind; "none" stands for the empty value
LEGAL_VALUES: dict[str, frozenset[str]] = {
    "mouth_open": frozenset({"none"}),
    "food_entered": frozenset(UTENSILS),
    "food_lifted": frozenset(UTENSILS + ("none",)),
    "food_to_mouth": frozenset(UTENSILS + ("none",)),
    "drink_entered": frozenset(DRINKWARE),
    "drink_lifted": frozenset(DRINKWARE),
    "drink_to_mouth": frozenset(DRINKWARE),
    "napkin_entered": frozenset({"none"}),
    "napkin_lifted": frozenset({"none"}),
    "napkin_to_mouth": frozenset({"none"}),
    "disruption": frozenset({"light_off", "participant_left"}),
}
KINDS = tuple(LEGAL_VALUES)
VALUES = ("fork", "knife", "spoon", "chopsticks", "hand", "cup", "bottle",
          "light_off", "participant_left", "none")

FAMILIES = ("food", "drink", "napkin")
FIXED_LENGTH_MS = 400
VARIABLE_LENGTH_KINDS = ("mouth_open", "food_to_mouth", "drink_to_mouth", "napkin_to_mouth")
DEFAULT_SEAT_ANGLES = (90.0, 210.0, 330.0)

_KIND_ORDER = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True, order=False)
class AnnotationEvent:
    kind: str
    value: str
    start_ms: int
    end_ms: int

    def __post_init__(self):
        if self.kind not in LEGAL_VALUES:
            raise IllegalValueForKind(f"unknown annotation kind {self.kind!r}")
        if self.value not in LEGAL_VALUES[self.kind]:
            raise IllegalValueForKind(
                f"value {self.value!r} is not legal for {self.kind} "
                f"(allowed: {sorted(LEGAL_VALUES[self.kind])})")
        if self.start_ms < 0:
            raise NonPositiveDuration(f"negative start time {self.start_ms}")
        if self.end_ms <= self.start_ms:
            raise NonPositiveDuration(
                f"{self.kind} ends at {self.end_ms} ms, not after its start {self.start_ms} ms")

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms

    @property
    def family(self) -> str | None:
        head = self.kind.split("_", 1)[0]
        return head if head in FAMILIES else None

    def sort_key(self):
        return (self.start_ms, self.end_ms, _KIND_ORDER[self.kind], self.value)


@dataclass(frozen=True)
class Participant:
    seat: int
    angle_deg: float


def default_participants(angles: Iterable[float] = DEFAULT_SEAT_ANGLES,
                         rotation_deg: float = 0.0) -> tuple[Participant, ...]:
    return tuple(Participant(i + 1, float((a + rotation_deg) % 360.0))
                 for i, a in enumerate(angles))


@dataclass(frozen=True)
class SessionAnnotations:
    session_id: str
    participants: tuple[Participant, ...]
    duration_ms: int
    events: Mapping[int, tuple[AnnotationEvent, ...]] = field(default_factory=dict)

    def __post_init__(self):
        seats = [p.seat for p in self.participants]
        if len(seats) != 3 or sorted(seats) != [1, 2, 3]:
            raise ValueError(f"a session needs exactly seats 1, 2, 3; got {seats}")
        if self.duration_ms <= 0:
            raise NonPositiveDuration(f"session duration must be positive, got {self.duration_ms}")
        normalized = {s: tuple(sorted(self.events.get(s, ()), key=AnnotationEvent.sort_key))
                      for s in (1, 2, 3)}
        unknown = set(self.events) - {1, 2, 3}
        if unknown:
            raise ValueError(f"events for unknown seats {sorted(unknown)}")
        object.__setattr__(self, "events", normalized)
        object.__setattr__(self, "participants",
                           tuple(sorted(self.participants, key=lambda p: p.seat)))

    @property
    def seat_angles(self) -> tuple[float, float, float]:
        return tuple(p.angle_deg for p in self.participants)

    @property
    def n_events(self) -> int:
        return sum(len(v) for v in self.events.values())

    def of_kind(self, seat: int, kind: str) -> list[AnnotationEvent]:
        return [e for e in self.events[seat] if e.kind == kind]

    def lift_times(self, seat: int) -> list[int]:
        """Start times (ms) of the seat's food_lifted events, sorted."""
        return [e.start_ms for e in self.events[seat] if e.kind == "food_lifted"]

    def disruptions(self) -> list[tuple[int, int]]:
        """Disruption intervals from every seat's tier, merged and sorted."""
        spans = sorted((e.start_ms, e.end_ms) for evs in self.events.values()
                       for e in evs if e.kind == "disruption")
        merged: list[tuple[int, int]] = []
        for a, b in spans:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
            else:
                merged.append((a, b))
        return merged


# ---------------------------------------------------------------- CSV I/O

def _parse_meta(line: str, lineno: int, meta: dict):
    body = line.lstrip("#").strip()
    if not body:
        return
    if "=" not in body:
        raise MalformedRow(lineno, f"metadata line without '=': {line!r}")
    key, val = (x.strip() for x in body.split("=", 1))
    try:
        if key == "duration_ms":
            meta[key] = int(val)
        elif key == "seat_angles":
            angles = tuple(float(a) for a in val.split(","))
            if len(angles) != 3:
                raise ValueError("need three angles")
            meta[key] = angles
        else:
            meta[key] = val
    except ValueError as exc:
        raise MalformedRow(lineno, f"bad metadata {key!r}: {exc}") from None


def parse_annotations_text(text: str, session_id: str | None = None,
                           duration_ms: int | None = None,
                           seat_angles: Iterable[float] | None = None) -> SessionAnnotations:
    meta: dict = {}
    rows: list[tuple[int, list[str]]] = []
    header_seen = False
    for lineno, line in enumerate(io.StringIO(text), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if header_seen:
                raise MalformedRow(lineno, "metadata after the header")
            _parse_meta(stripped, lineno, meta)
            continue
        fields = next(csv.reader([stripped]))
        if not header_seen:
            if tuple(f.strip() for f in fields) != CSV_HEADER:
                raise MalformedRow(lineno, f"expected header {','.join(CSV_HEADER)}")
            header_seen = True
            continue
        rows.append((lineno, fields))

    events: dict[int, list[AnnotationEvent]] = {1: [], 2: [], 3: []}
    sid = session_id
    for lineno, fields in rows:
        if len(fields) != len(CSV_HEADER):
            raise MalformedRow(lineno, f"expected {len(CSV_HEADER)} fields, got {len(fields)}")
        row_sid, seat, kind, value, start, end = (f.strip() for f in fields)
        if sid is None:
            sid = row_sid
        elif row_sid != sid:
            raise MalformedRow(lineno, f"session id {row_sid!r} differs from {sid!r}")
        try:
            seat_i, start_i, end_i = int(seat), int(start), int(end)
        except ValueError:
            raise MalformedRow(lineno, "seat, start_ms and end_ms must be integers") from None
        if seat_i not in events:
            raise MalformedRow(lineno, f"seat must be 1, 2 or 3, got {seat_i}")
        if kind not in LEGAL_VALUES:
            raise MalformedRow(lineno, f"unknown annotation kind {kind!r}")
        try:
            events[seat_i].append(AnnotationEvent(kind, value or "none", start_i, end_i))
        except (IllegalValueForKind, NonPositiveDuration) as exc:
            raise type(exc)(f"line {lineno}: {exc}") from None

    max_end = max((e.end_ms for evs in events.values() for e in evs), default=0)
    duration = duration_ms or meta.get("duration_ms") or max(max_end, 1)
    angles = tuple(seat_angles) if seat_angles is not None else meta.get("seat_angles", DEFAULT_SEAT_ANGLES)
    return SessionAnnotations(
        session_id=sid if sid is not None else meta.get("session_id", ""),
        participants=default_participants(angles),
        duration_ms=int(duration),
        events=events,
    )


def parse_annotations(path, **kwargs) -> SessionAnnotations:
    """Read a flat annotation CSV. An empty file yields an event-free session
    named after the file stem."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    session = parse_annotations_text(text, **kwargs)
    if not session.session_id:
        session = SessionAnnotations(path.stem, session.participants,
                                     session.duration_ms, session.events)
    return session


def serialize_annotations(session: SessionAnnotations) -> str:
    buf = io.StringIO()
    buf.write(f"# session_id={session.session_id}\n")
    buf.write(f"# duration_ms={session.duration_ms}\n")
    buf.write("# seat_angles=" + ",".join(repr(float(a)) for a in session.seat_angles) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for seat in (1, 2, 3):
        for e in session.events[seat]:
            writer.writerow((session.session_id, seat, e.kind, e.value, e.start_ms, e.end_ms))
    return buf.getvalue()


def write_annotations(session: SessionAnnotations, path) -> Path:
    path = Path(path)
    path.write_text(serialize_annotations(session), encoding="utf-8")
    return path


def eaf_to_events(path) -> list[AnnotationEvent]:
    """Convert one participant's ELAN ``.eaf`` file to events.

    Tiers are expected to be named after the annotation kind; the annotation
    text is the value (empty text maps to ``none``). Tiers with other names
    are ignored.
    """
    root = ET.parse(path).getroot()
    slots = {}
    for slot in root.iter("TIME_SLOT"):
        if slot.get("TIME_VALUE") is not None:
            slots[slot.get("TIME_SLOT_ID")] = int(slot.get("TIME_VALUE"))
    events = []
    for tier in root.iter("TIER"):
        kind = tier.get("TIER_ID", "").strip()
        if kind not in LEGAL_VALUES:
            continue
        for ann in tier.iter("ALIGNABLE_ANNOTATION"):
            start = slots.get(ann.get("TIME_SLOT_REF1"))
            end = slots.get(ann.get("TIME_SLOT_REF2"))
            if start is None or end is None:
                continue
            text = (ann.findtext("ANNOTATION_VALUE") or "").strip().lower()
            events.append(AnnotationEvent(kind, text or "none", start, end))
    return sorted(events, key=AnnotationEvent.sort_key)


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Violation:
    seat: int | None
    index: int | None
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    session_id: str
    violations: tuple[Violation, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.violations

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


def _in_disruption(e: AnnotationEvent, spans) -> bool:
    return any(e.start_ms < b and a < e.end_ms for a, b in spans)


def validate_session(session: SessionAnnotations) -> ValidationReport:
    """Check a parsed session against the annotation schema rules.

    Violations are returned, never raised. Incomplete entered/lifted/to_mouth
    sequences at the start or end of a recording, or right after a
    disruption, are tolerated.
    """
    out: list[Violation] = []
    if session.n_events == 0:
        out.append(Violation(None, None, "no_events", "session has no annotations"))
    spans = session.disruptions()

    for seat in (1, 2, 3):
        evs = session.events[seat]
        for i, e in enumerate(evs):
            if i and evs[i - 1].sort_key() > e.sort_key():
                out.append(Violation(seat, i, "unsorted", "events not sorted by start time"))
            if e.end_ms > session.duration_ms:
                out.append(Violation(seat, i, "beyond_session",
                                     f"{e.kind} ends after the session ({e.end_ms} ms)"))
            if e.kind.endswith(("_entered", "_lifted")) and e.duration_ms > FIXED_LENGTH_MS:
                out.append(Violation(seat, i, "fixed_length_exceeded",
                                     f"{e.kind} lasts {e.duration_ms} ms (> {FIXED_LENGTH_MS})"))
            if e.kind != "disruption" and _in_disruption(e, spans):
                out.append(Violation(seat, i, "during_disruption",
                                     f"{e.kind} overlaps a disruption interval"))

        out.extend(_check_pairing(seat, evs))
        out.extend(_check_mouth_open(seat, evs))
    return ValidationReport(session.session_id, tuple(out))


def _check_pairing(seat: int, evs) -> list[Violation]:
    """Each *_to_mouth needs exactly one *_lifted of the same value since the
    previous *_to_mouth of that family."""
    out = []
    for fam in FAMILIES:
        pending: dict[str, list[int]] = {}
        seen_any = False  # before the first handover, a missing lift is a boundary case
        for i, e in enumerate(evs):
            if e.kind == "disruption":
                pending.clear()
                seen_any = False
                continue
            if e.family != fam:
                continue
            if e.kind == f"{fam}_lifted":
                pending.setdefault(e.value, []).append(i)
            elif e.kind == f"{fam}_to_mouth":
                lifts = pending.pop(e.value, [])
                if len(lifts) > 1:
                    out.append(Violation(seat, i, "duplicate_lift",
                                         f"duplicate lift before handover: {len(lifts)} "
                                         f"{fam}_lifted ({e.value}) before {e.kind} "
                                         f"at event {i} (lifts at {lifts})"))
                elif not lifts and seen_any:
                    out.append(Violation(seat, i, "missing_lift",
                                         f"{e.kind} ({e.value}) at event {i} has no preceding "
                                         f"{fam}_lifted"))
                # a handover with one utensil ends the manipulation episode for the others
                pending.clear()
                seen_any = True
    return out


def _check_mouth_open(seat: int, evs) -> list[Violation]:
    out = []
    opens = [(i, e) for i, e in enumerate(evs) if e.kind == "mouth_open"]
    handovers = [e for e in evs if e.kind == "food_to_mouth"]
    for n, (i, e) in enumerate(opens):
        nxt = opens[n + 1][1].start_ms if n + 1 < len(opens) else None
        matched = [h for h in handovers
                   if h.start_ms >= e.start_ms and (nxt is None or h.start_ms < nxt)]
        if not matched and nxt is not None:
            out.append(Violation(seat, i, "mouth_open_without_handover",
                                 "mouth_open is not followed by a food_to_mouth"))
    return out
