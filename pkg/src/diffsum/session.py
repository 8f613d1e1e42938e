"""Event-sourced live audit sessions.

A session is the authoritative record of one real audit: which ballots the
rng told the auditors to retrieve, what the humans said each ballot showed,
and what the decision rule concluded after every entry.  All of it is
persisted as an append-only log of events; the in-memory object is merely a
fold over that log, and `replay` rebuilds it from the log alone.  That is
the property the whole design leans on — if the process dies mid-audit, the
log on disk *is* the session.

State machine: a session starts Open, becomes Decided when the rule accepts
the sample winner or the count is exhausted, and may be Closed from either
state (e.g. when the team cuts over to a full hand recount).  A cutover
recommendation is advisory and does not latch: it is recomputed from the
tally, reported in the status view, and the session stays Open so the team
can keep sampling if they judge that cheaper.

Interpretations are append-only.  A mistaken entry is not edited — the
honest record of what was entered is the audit evidence — instead the
session is closed and a fresh one started.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable

from .core import (
    AcceptOutcome,
    AuditParams,
    Decision,
    FullCountComplete,
    TallySnapshot,
    decision_from_dict,
    decision_to_dict,
    evaluate,
    reduce_to_pair,
)
from .sampling import (
    INVALID_LABEL,
    BallotManifest,
    EscalationSchedule,
    FixedStep,
    SeededRng,
    next_sample_size,
    schedule_from_dict,
    schedule_to_dict,
)

# Live audits plan retrieval in batches of ten by default: runners fetch a
# handful of ballots per trip, while the rule is still checked per entry.
DEFAULT_LIVE_SCHEDULE = FixedStep(10)


class AuditSessionError(Exception):
    """Base class for session protocol violations."""


class SessionNotOpenError(AuditSessionError):
    pass


class UnknownBallotError(AuditSessionError):
    pass


class DuplicateInterpretationError(AuditSessionError):
    pass


class CorruptLogError(AuditSessionError):
    def __init__(self, seq: int, message: str) -> None:
        super().__init__(f"event {seq}: {message}")
        self.seq = seq


@dataclass(frozen=True)
class AuditEvent:
    """One log line: an envelope of (seq, kind, payload, timestamp)."""

    seq: int
    kind: str
    data: dict
    timestamp: str | None = None

    def to_json(self) -> str:
        out: dict = {"seq": self.seq, "kind": self.kind, "data": self.data}
        if self.timestamp is not None:
            out["timestamp"] = self.timestamp
        return json.dumps(out, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> AuditEvent:
        raw = json.loads(line)
        return cls(
            seq=raw["seq"],
            kind=raw["kind"],
            data=raw["data"],
            timestamp=raw.get("timestamp"),
        )


SESSION_CREATED = "session_created"
DRAW_PLANNED = "draw_planned"
INTERPRETATION_RECORDED = "interpretation_recorded"
DECISION_REACHED = "decision_reached"
SESSION_CLOSED = "session_closed"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class AuditSession:
    """Mutable session state; every mutation appends the events that imply it.

    Build instances through create_session or replay, not directly.
    """

    def __init__(
        self,
        session_id: str,
        params: AuditParams,
        seed: SeededRng,
        schedule: EscalationSchedule,
        manifest: BallotManifest | None,
        manifest_digest: str,
        manifest_ref: str | None = None,
    ) -> None:
        self.session_id = session_id
        self.params = params
        self.seed = seed
        self.schedule = schedule
        self.manifest = manifest
        self.manifest_digest = manifest_digest
        self.manifest_ref = manifest_ref
        self.planned: list[str] = []
        self.interpretations: dict[str, str] = {}
        self.status: str = "open"
        self.decision: Decision | None = None
        self.close_reason: str | None = None
        self.events: list[AuditEvent] = []
        self._permutation_ids: list[str] | None = None

    # -- derived state ------------------------------------------------------

    @property
    def total_drawn(self) -> int:
        return len(self.interpretations)

    def candidate_counts(self) -> dict[str, int]:
        counts = {cand: 0 for cand in self.params.candidates}
        for label in self.interpretations.values():
            if label in counts:
                counts[label] += 1
        return counts

    @property
    def invalid_count(self) -> int:
        return sum(
            1 for v in self.interpretations.values() if v not in self.params.candidates
        )

    def tally(self) -> TallySnapshot:
        return TallySnapshot(counts=self.candidate_counts(), total_drawn=self.total_drawn)

    def pending(self) -> list[str]:
        return [bid for bid in self.planned if bid not in self.interpretations]

    def current_decision(self) -> Decision:
        if self.decision is not None:
            return self.decision
        return evaluate(self.tally(), self.params)

    # -- event plumbing -------------------------------------------------------

    def _append(self, kind: str, data: dict, timestamp: str | None = None) -> AuditEvent:
        event = AuditEvent(seq=len(self.events), kind=kind, data=data, timestamp=timestamp)
        self.events.append(event)
        return event

    def _permutation(self) -> list[str]:
        if self._permutation_ids is None:
            if self.manifest is None:
                raise AuditSessionError(
                    "session was replayed without its manifest; attach the "
                    "manifest to plan further draws"
                )
            ids = self.manifest.ballot_ids
            self._permutation_ids = [ids[i] for i in self.seed.permutation(len(ids))]
        return self._permutation_ids

    def _plan_next_batch(self) -> AuditEvent | None:
        if len(self.planned) >= self.params.n:
            return None
        target = next_sample_size(self.schedule, len(self.planned), self.params.n)
        fresh = self._permutation()[len(self.planned) : target]
        self.planned.extend(fresh)
        return self._append(DRAW_PLANNED, {"ballot_ids": list(fresh)})

    # -- operations -----------------------------------------------------------

    def record_interpretation(self, ballot_id: str, interpretation: str) -> Decision:
        """Record one human-read ballot and re-run the decision rule.

        Returns the decision in force after this ballot.  Appends the
        interpretation event, a decision event when the audit terminates,
        or a fresh draw batch when the planned sample is used up.
        """
        if self.status != "open":
            raise SessionNotOpenError(f"session is {self.status}")
        if ballot_id not in self.planned:
            raise UnknownBallotError(f"ballot {ballot_id!r} is not a planned draw")
        if ballot_id in self.interpretations:
            raise DuplicateInterpretationError(
                f"ballot {ballot_id!r} already has an interpretation"
            )
        if (
            interpretation not in self.params.candidates
            and interpretation != INVALID_LABEL
        ):
            raise ValueError(
                f"interpretation must be a candidate or {INVALID_LABEL!r}, "
                f"got {interpretation!r}"
            )
        self.interpretations[ballot_id] = interpretation
        self._append(
            INTERPRETATION_RECORDED,
            {"ballot_id": ballot_id, "interpretation": interpretation},
            timestamp=_now(),
        )
        decision = evaluate(self.tally(), self.params)
        if isinstance(decision, (AcceptOutcome, FullCountComplete)):
            self.decision = decision
            self.status = "decided"
            self._append(DECISION_REACHED, {"decision": decision_to_dict(decision)})
        elif not self.pending():
            self._plan_next_batch()
        return decision

    def close(self, reason: str) -> None:
        """Close the session; idempotent so retries are harmless."""
        if self.status == "closed":
            return
        self.status = "closed"
        self.close_reason = reason
        self._append(SESSION_CLOSED, {"reason": reason}, timestamp=_now())

    def status_view(self) -> dict:
        """Everything a caller (UI, CLI, tests) needs to render the audit."""
        counts = self.candidate_counts()
        a, b, leader = reduce_to_pair(counts)
        cut_at = self.params.cutover_threshold()
        return {
            "session_id": self.session_id,
            "status": self.status,
            "n": self.params.n,
            "candidates": list(self.params.candidates),
            "c": self.params.threshold_c,
            "delta": self.params.delta,
            "risk_bound": self.params.risk_bound,
            "initial_sample_size": self.params.initial_sample_size,
            "schedule": schedule_to_dict(self.schedule),
            "seed": {"seed": self.seed.seed, "stream_id": self.seed.stream_id},
            "manifest_digest": self.manifest_digest,
            "counts": counts,
            "invalid_count": self.invalid_count,
            "total_drawn": self.total_drawn,
            "sample_leader": leader if a > b else None,
            "statistic": (a - b) ** 2,
            "threshold": self.params.threshold_c * (a + b),
            "planned": list(self.planned),
            "pending": self.pending(),
            "cutover": {
                "threshold": cut_at,
                "progress": self.total_drawn / cut_at if cut_at else 1.0,
            },
            "decision": decision_to_dict(self.current_decision()),
            "close_reason": self.close_reason,
        }


def create_session(
    params: AuditParams,
    manifest: BallotManifest,
    seed: SeededRng,
    schedule: EscalationSchedule = DEFAULT_LIVE_SCHEDULE,
    session_id: str | None = None,
    manifest_ref: str | None = None,
) -> AuditSession:
    """Open a session and plan its initial draw batch."""
    if len(manifest) != params.n:
        raise ValueError(
            f"manifest holds {len(manifest)} ballots but params.n is {params.n}"
        )
    session = AuditSession(
        session_id=session_id or uuid.uuid4().hex,
        params=params,
        seed=seed,
        schedule=schedule,
        manifest=manifest,
        manifest_digest=manifest.digest(),
        manifest_ref=manifest_ref,
    )
    session._append(
        SESSION_CREATED,
        {
            "session_id": session.session_id,
            "params": params.to_dict(),
            "seed": {"seed": seed.seed, "stream_id": seed.stream_id},
            "schedule": schedule_to_dict(schedule),
            "manifest_digest": session.manifest_digest,
            "manifest_ref": manifest_ref,
        },
        timestamp=_now(),
    )
    initial = session._permutation()[: params.initial_sample_size]
    session.planned.extend(initial)
    session._append(DRAW_PLANNED, {"ballot_ids": list(initial)})
    return session


def session_status(session: AuditSession) -> dict:
    return session.status_view()


def replay(
    events: Iterable[AuditEvent], manifest: BallotManifest | None = None
) -> AuditSession:
    """Rebuild a session from its event log.

    Verifies the log as it goes: contiguous sequence numbers, a creation
    event first, interpretations referencing planned undecided ballots, and
    recorded decisions matching what the rule says about the replayed tally.
    Any violation raises CorruptLogError naming the offending sequence
    number.  With the manifest attached, planned draws are also checked
    against the session's permutation and the digest is compared.
    """
    session: AuditSession | None = None
    expected_seq = 0
    for event in events:
        if event.seq != expected_seq:
            raise CorruptLogError(
                expected_seq, f"expected sequence {expected_seq}, found {event.seq}"
            )
        expected_seq += 1
        if session is None:
            if event.kind != SESSION_CREATED:
                raise CorruptLogError(event.seq, f"log must start with {SESSION_CREATED}")
            data = event.data
            try:
                params = AuditParams.from_dict(data["params"])
                seed = SeededRng(**data["seed"])
                schedule = schedule_from_dict(data["schedule"])
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptLogError(event.seq, f"bad creation payload: {exc}") from exc
            if manifest is not None and manifest.digest() != data["manifest_digest"]:
                raise CorruptLogError(
                    event.seq, "manifest digest does not match the log"
                )
            session = AuditSession(
                session_id=data["session_id"],
                params=params,
                seed=seed,
                schedule=schedule,
                manifest=manifest,
                manifest_digest=data["manifest_digest"],
                manifest_ref=data.get("manifest_ref"),
            )
            session.events.append(event)
            continue
        if session.status == "closed":
            raise CorruptLogError(event.seq, "event after session close")
        if event.kind == DRAW_PLANNED:
            if session.status != "open":
                raise CorruptLogError(event.seq, "draw planned after decision")
            ids = event.data["ballot_ids"]
            if set(ids) & set(session.planned):
                raise CorruptLogError(event.seq, "draw plans a ballot twice")
            if manifest is not None:
                lo, hi = len(session.planned), len(session.planned) + len(ids)
                if session._permutation()[lo:hi] != list(ids):
                    raise CorruptLogError(
                        event.seq, "planned draws diverge from the seeded permutation"
                    )
            session.planned.extend(ids)
        elif event.kind == INTERPRETATION_RECORDED:
            if session.status != "open":
                raise CorruptLogError(event.seq, "interpretation after decision")
            bid = event.data["ballot_id"]
            if bid not in session.planned:
                raise CorruptLogError(event.seq, f"ballot {bid!r} was never planned")
            if bid in session.interpretations:
                raise CorruptLogError(event.seq, f"ballot {bid!r} interpreted twice")
            session.interpretations[bid] = event.data["interpretation"]
        elif event.kind == DECISION_REACHED:
            try:
                decision = decision_from_dict(event.data["decision"])
            except (KeyError, ValueError) as exc:
                raise CorruptLogError(event.seq, f"bad decision payload: {exc}") from exc
            expected = evaluate(session.tally(), session.params)
            if decision != expected:
                raise CorruptLogError(
                    event.seq,
                    f"logged decision {decision} contradicts the replayed tally",
                )
            if not isinstance(decision, (AcceptOutcome, FullCountComplete)):
                raise CorruptLogError(event.seq, "non-terminal decision recorded")
            session.decision = decision
            session.status = "decided"
        elif event.kind == SESSION_CLOSED:
            session.status = "closed"
            session.close_reason = event.data.get("reason", "")
        else:
            raise CorruptLogError(event.seq, f"unknown event kind {event.kind!r}")
        session.events.append(event)
    if session is None:
        raise CorruptLogError(0, "empty log")
    return session


# -- persistence ---------------------------------------------------------------


def write_events(path: str, events: Iterable[AuditEvent], fsync: bool = False) -> None:
    """Append events to a JSONL log, one per line."""
    with open(path, "a", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json() + "\n")
        fh.flush()
        if fsync:
            os.fsync(fh.fileno())


def read_events(path: str) -> list[AuditEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(AuditEvent.from_json(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise CorruptLogError(lineno, f"unparseable event line: {exc}") from exc
    return events


class SessionStore:
    """Directory of persisted sessions: one JSONL log and one manifest copy each.

    The store keeps live AuditSession objects and flushes their fresh events
    after every mutation; decision events are fsynced so an accepted outcome
    survives a crash.
    """

    def __init__(self, data_dir: str) -> None:
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self._live: dict[str, AuditSession] = {}
        self._flushed: dict[str, int] = {}

    def log_path(self, session_id: str) -> str:
        return os.path.join(self.data_dir, f"{session_id}.events.jsonl")

    def manifest_path(self, session_id: str) -> str:
        return os.path.join(self.data_dir, f"{session_id}.manifest.csv")

    def _flush(self, session: AuditSession) -> None:
        done = self._flushed.get(session.session_id, 0)
        fresh = session.events[done:]
        if not fresh:
            return
        durable = any(
            e.kind in (DECISION_REACHED, SESSION_CLOSED) for e in fresh
        )
        write_events(self.log_path(session.session_id), fresh, fsync=durable)
        self._flushed[session.session_id] = len(session.events)

    def create(
        self,
        params: AuditParams,
        manifest: BallotManifest,
        seed: SeededRng,
        schedule: EscalationSchedule = DEFAULT_LIVE_SCHEDULE,
        session_id: str | None = None,
    ) -> AuditSession:
        session = create_session(params, manifest, seed, schedule, session_id)
        with open(self.manifest_path(session.session_id), "w", encoding="utf-8") as fh:
            fh.write(manifest.to_csv())
        self._live[session.session_id] = session
        self._flush(session)
        return session

    def get(self, session_id: str) -> AuditSession | None:
        if session_id in self._live:
            return self._live[session_id]
        log = self.log_path(session_id)
        if not os.path.exists(log):
            return None
        manifest = None
        mpath = self.manifest_path(session_id)
        if os.path.exists(mpath):
            manifest = BallotManifest.from_csv_path(mpath)
        session = replay(read_events(log), manifest=manifest)
        self._live[session_id] = session
        self._flushed[session_id] = len(session.events)
        return session

    def record_interpretation(
        self, session_id: str, ballot_id: str, interpretation: str
    ) -> tuple[AuditSession, Decision]:
        session = self._require(session_id)
        decision = session.record_interpretation(ballot_id, interpretation)
        self._flush(session)
        return session, decision

    def plan_more(self, session_id: str) -> list[str]:
        """Plan the next draw batch on demand (service POST /draws)."""
        session = self._require(session_id)
        if session.status != "open":
            raise SessionNotOpenError(f"session is {session.status}")
        if len(session.planned) >= session.params.n:
            return []
        event = session._plan_next_batch()
        self._flush(session)
        return list(event.data["ballot_ids"]) if event else []

    def close(self, session_id: str, reason: str) -> AuditSession:
        session = self._require(session_id)
        session.close(reason)
        self._flush(session)
        return session

    def list_ids(self) -> list[str]:
        suffix = ".events.jsonl"
        on_disk = {
            name[: -len(suffix)]
            for name in os.listdir(self.data_dir)
            if name.endswith(suffix)
        }
        return sorted(on_disk | set(self._live))

    def _require(self, session_id: str) -> AuditSession:
        session = self.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session
