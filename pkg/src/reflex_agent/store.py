"""Event-sourced persistence: append-only JSONL session logs, bit-exact replay.

One line per event, UTF-8, LF-terminated, canonical JSON. Sequence numbers
start at 1 and admit no gaps or repeats, so a log is valid iff line i holds
seq i — corruption is detected positionally and reported by line number.
Replay folds the engine-stage events back into a SessionState that is
canonical-JSON-identical to the state that wrote the log; all seeds travel
in the events, which is why toy images replay bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

from .core import (
    AmbiguityLabel,
    CaptionSet,
    DecodeError,
    EventDraft,
    ImageRecord,
    MemoryTurn,
    PromptRecord,
    Question,
    ReflexError,
    SPEAKER_AGENT,
    canonical_dumps,
    get_schema,
)
from .engine import RoundRecord, SessionState, new_session_state

EVENT_TYPES = frozenset(
    {
        "session_created",
        "user_message",
        "prompt",
        "generation",
        "caption",
        "ambiguity",
        "question",
        "preference",
        "training_update",
        "tool2_invocation",
        "session_closed",
    }
)

_STAGE_TYPES = ("prompt", "generation", "caption", "ambiguity")


class StoreError(ReflexError):
    code = "StoreError"


class SeqGapError(StoreError):
    code = "SeqGap"


class DuplicateSeqError(StoreError):
    code = "DuplicateSeq"


class IoError(StoreError):
    code = "IoError"


class CorruptLogError(StoreError):
    """Log failed its integrity check; `line` is the first bad line (1-based)."""

    code = "CorruptLog"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SessionEvent:
    session_id: str
    seq: int
    ts_ms: int
    type: str
    payload: dict

    def __post_init__(self):
        if self.type not in EVENT_TYPES:
            raise ReflexError(f"unknown event type {self.type!r}")
        if self.seq < 1:
            raise ReflexError(f"event seq must be >= 1, got {self.seq}")

    def to_jsonable(self) -> dict:
        return {
            "session_id": self.session_id,
            "seq": self.seq,
            "ts_ms": self.ts_ms,
            "type": self.type,
            "payload": self.payload,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "SessionEvent":
        try:
            return cls(
                session_id=data["session_id"],
                seq=int(data["seq"]),
                ts_ms=int(data["ts_ms"]),
                type=data["type"],
                payload=data["payload"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DecodeError(f"bad SessionEvent document: {exc}") from exc


def session_log_path(data_dir: Union[str, Path], session_id: str) -> Path:
    return Path(data_dir) / "sessions" / f"{session_id}.jsonl"


class SessionLog:
    """Append-only writer for one session's event log.

    Opening an existing file validates it and resumes from its last seq;
    earlier bytes are never rewritten. Single writer per log, any number of
    concurrent readers.
    """

    def __init__(self, path: Union[str, Path], fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self._last_seq = 0
        self._session_id: Optional[str] = None
        existing = read_log(self.path) if self.path.exists() else []
        if existing:
            self._last_seq = existing[-1].seq
            self._session_id = existing[0].session_id
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot open session log {self.path}: {exc}") from exc

    @property
    def last_seq(self) -> int:
        return self._last_seq

    def append(self, event: SessionEvent) -> None:
        if event.seq <= self._last_seq:
            raise DuplicateSeqError(
                f"seq {event.seq} already written (last is {self._last_seq})"
            )
        if event.seq != self._last_seq + 1:
            raise SeqGapError(f"expected seq {self._last_seq + 1}, got {event.seq}")
        if self._session_id is not None and event.session_id != self._session_id:
            raise StoreError(
                f"log {self.path.name} belongs to session {self._session_id!r}"
            )
        try:
            self._fh.write(canonical_dumps(event.to_jsonable()) + "\n")
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise IoError(f"append to {self.path} failed: {exc}") from exc
        self._last_seq = event.seq
        if self._session_id is None:
            self._session_id = event.session_id

    def append_draft(self, session_id: str, draft: EventDraft, ts_ms: int) -> SessionEvent:
        """Assign the next seq to a draft and append it."""
        event = SessionEvent(
            session_id=session_id,
            seq=self._last_seq + 1,
            ts_ms=ts_ms,
            type=draft.type,
            payload=draft.payload,
        )
        self.append(event)
        return event

    def read(self, since: int = 0) -> list[SessionEvent]:
        if not self.path.exists():
            return []
        return [e for e in read_log(self.path) if e.seq > since]

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "SessionLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_log(path: Union[str, Path]) -> list[SessionEvent]:
    """Load and integrity-check a log; CorruptLog names the first bad line."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read log {path}: {exc}") from exc
    if not raw:
        return []
    lines = raw.split("\n")
    if lines[-1] == "":
        lines.pop()
    else:
        raise CorruptLogError("truncated: final line is not LF-terminated", len(lines))
    events: list[SessionEvent] = []
    session_id: Optional[str] = None
    for i, line in enumerate(lines, start=1):
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLogError(f"invalid JSON ({exc.msg})", i) from exc
        try:
            event = SessionEvent.from_jsonable(data)
        except (DecodeError, ReflexError) as exc:
            raise CorruptLogError(str(exc), i) from exc
        if event.seq != i:
            raise CorruptLogError(f"expected seq {i}, found {event.seq}", i)
        if session_id is None:
            session_id = event.session_id
        elif event.session_id != session_id:
            raise CorruptLogError(
                f"session_id {event.session_id!r} does not match {session_id!r}", i
            )
        events.append(event)
    return events


def replay(source: Union[str, Path, Iterable[SessionEvent]]) -> Optional[SessionState]:
    """Fold a log back into the SessionState that produced it.

    Returns None for a log with no events. Preference, training and tool
    events do not shape the dialogue state; they are skipped by the fold.
    """
    if isinstance(source, (str, Path)):
        events = read_log(source)
    else:
        events = list(source)
    if not events:
        return None

    state: Optional[SessionState] = None
    pending: dict[str, Any] = {}
    for event in events:
        kind = event.type
        if kind == "session_created":
            if state is not None:
                raise CorruptLogError("second session_created", event.seq)
            payload = event.payload
            state = new_session_state(
                payload["id"],
                get_schema(payload["schema"]),
                int(payload["rng_seed"]),
                payload.get("persona"),
            )
            continue
        if state is None:
            raise CorruptLogError("first event must be session_created", event.seq)
        if kind == "user_message":
            turn = MemoryTurn.from_jsonable(event.payload)
            state = replace(state, memory=state.memory.with_turn(turn))
        elif kind in _STAGE_TYPES:
            pending[kind] = event.payload
        elif kind == "question":
            question = Question.from_jsonable(event.payload)
            try:
                record = RoundRecord(
                    prompt=PromptRecord.from_jsonable(pending.pop("prompt")),
                    image=ImageRecord.from_jsonable(pending.pop("generation")),
                    captions=CaptionSet.from_jsonable(pending.pop("caption")),
                    ambiguity=AmbiguityLabel.from_jsonable(pending.pop("ambiguity")),
                    question=question,
                )
            except KeyError as exc:
                raise CorruptLogError(
                    f"question event without a pending {exc.args[0]} stage", event.seq
                ) from exc
            agent_turn = MemoryTurn(question.round, SPEAKER_AGENT, question.text)
            state = replace(
                state,
                memory=state.memory.with_turn(agent_turn),
                rounds=state.rounds + (record,),
            )
        # preference / training_update / tool2_invocation / session_closed:
        # recorded facts, not dialogue state
    return state


class BlobStore:
    """Content-addressed bytes under <data_dir>/blobs/<sha256>."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def path_for(self, digest: str) -> Path:
        return self.root / digest

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        target = self.path_for(digest)
        if target.exists():
            return digest
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except OSError as exc:
            raise IoError(f"cannot store blob {digest}: {exc}") from exc
        return digest

    def get(self, digest: str) -> Optional[bytes]:
        try:
            return self.path_for(digest).read_bytes()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise IoError(f"cannot read blob {digest}: {exc}") from exc
