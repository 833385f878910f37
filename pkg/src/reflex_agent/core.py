"""Domain types shared by every module, plus the aspect-schema registry.

An "aspect" is one caption dimension (Content, Style, ...). The toy world
represents prompts, images, captions and hidden user intents as
:class:`AspectVector` values: one slot per aspect, each slot either
unspecified or an integer value id with a per-schema display name.

All types here are immutable values with canonical JSON encodings; those
encodings are the wire format of the HTTP service and the record format of
the session logs, so changing a field name is a breaking change.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, TYPE_CHECKING

from . import vocab

if TYPE_CHECKING:
    from .dpo import DenoisingTrajectory

SPEAKER_USER = "user"
SPEAKER_AGENT = "agent"

SOURCE_TEMPLATE = "template"
SOURCE_BACKEND = "backend"

DEFAULT_QUESTION_TEMPLATE = "What should the {aspect} of the image be?"


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class ReflexError(Exception):
    """Base class for all package errors; `code` names the violated contract."""

    code = "ReflexError"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class SchemaError(ReflexError):
    code = "SchemaError"


class EmptyAspectsError(SchemaError):
    code = "EmptyAspects"


class MissingTemplateError(SchemaError):
    code = "MissingTemplate"


class VocabTooSmallError(SchemaError):
    code = "VocabTooSmall"


class UnknownSchemaError(ReflexError):
    code = "UnknownSchema"


class SchemaMismatchError(ReflexError):
    code = "SchemaMismatch"


class DecodeError(ReflexError):
    """A JSON document did not match the canonical encoding of its type."""

    code = "DecodeError"


# ---------------------------------------------------------------------------
# Deterministic seed derivation
# ---------------------------------------------------------------------------

_U64 = 1 << 64


def derive_seed(*parts: int | str) -> int:
    """Derive a stable 64-bit seed from a mixed tuple of ints and strings.

    Hash-based so the result is identical across platforms, Python and
    library versions; every stochastic choice in the package draws from
    seeds produced here, which is what makes session logs replay exactly.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"seed parts must be int or str, got {type(part)!r}")
        if isinstance(part, int):
            h.update(b"i")
            h.update((part % _U64).to_bytes(8, "big"))
        else:
            raw = part.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "big"))
            h.update(raw)
    return int.from_bytes(h.digest(), "big")


def unit_uniform(*parts: int | str) -> float:
    """Uniform draw in [0, 1) keyed by `parts`."""
    return derive_seed(*parts) / _U64


def bounded_index(n: int, *parts: int | str) -> int:
    """Uniform draw in [0, n) keyed by `parts`.

    Modulo bias is below n / 2**64, irrelevant at toy vocabulary sizes.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    return derive_seed(*parts) % n


def canonical_dumps(jsonable: Any) -> str:
    """Serialize to the canonical JSON text used for equality and hashing."""
    return json.dumps(jsonable, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# Aspect schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AspectSchema:
    """Named set of caption aspects with a uniform integer vocabulary.

    `value_names` has one row of length `vocab_size` per aspect; rows are
    generated (`"style-03"`) when not supplied.
    """

    name: str
    aspects: tuple[str, ...]
    vocab_size: int
    question_templates: tuple[str, ...]
    value_names: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if not self.value_names and self.aspects and self.vocab_size > 0:
            generated = tuple(
                tuple(f"{aspect.lower()}-{v:02d}" for v in range(self.vocab_size))
                for aspect in self.aspects
            )
            object.__setattr__(self, "value_names", generated)

    @property
    def num_aspects(self) -> int:
        return len(self.aspects)

    def aspect_index(self, aspect: str) -> int:
        try:
            return self.aspects.index(aspect)
        except ValueError:
            raise SchemaMismatchError(f"aspect {aspect!r} not in schema {self.name!r}") from None

    def value_name(self, aspect: str, value_id: int) -> str:
        return self.value_names[self.aspect_index(aspect)][value_id]

    def value_id(self, aspect: str, value: int | str) -> int:
        """Resolve a display name or in-range integer to a value id."""
        idx = self.aspect_index(aspect)
        if isinstance(value, int) and not isinstance(value, bool):
            if not 0 <= value < self.vocab_size:
                raise SchemaMismatchError(
                    f"value id {value} out of range for {aspect!r} (vocab {self.vocab_size})"
                )
            return value
        names = self.value_names[idx]
        try:
            return names.index(str(value))
        except ValueError:
            raise SchemaMismatchError(f"unknown value {value!r} for aspect {aspect!r}") from None

    def template_for(self, aspect: str) -> str:
        return self.question_templates[self.aspect_index(aspect)]

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "aspects": list(self.aspects),
            "vocab_size": self.vocab_size,
            "question_templates": list(self.question_templates),
            "value_names": [list(row) for row in self.value_names],
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "AspectSchema":
        try:
            return cls(
                name=data["name"],
                aspects=tuple(data["aspects"]),
                vocab_size=int(data["vocab_size"]),
                question_templates=tuple(data["question_templates"]),
                value_names=tuple(tuple(row) for row in data.get("value_names", ())),
            )
        except (KeyError, TypeError) as exc:
            raise DecodeError(f"bad AspectSchema document: {exc}") from exc


def validate_schema(schema: AspectSchema) -> None:
    """Raise the named SchemaError subclass if any schema invariant fails."""
    if schema.num_aspects < 1:
        raise EmptyAspectsError(f"schema {schema.name!r} declares no aspects")
    if schema.vocab_size < 2:
        raise VocabTooSmallError(
            f"schema {schema.name!r} has vocab_size {schema.vocab_size}, need >= 2"
        )
    if len(schema.question_templates) != schema.num_aspects:
        raise MissingTemplateError(
            f"schema {schema.name!r} has {len(schema.question_templates)} templates "
            f"for {schema.num_aspects} aspects"
        )
    if len(schema.value_names) != schema.num_aspects or any(
        len(row) != schema.vocab_size for row in schema.value_names
    ):
        raise VocabTooSmallError(
            f"schema {schema.name!r} value-name table does not cover "
            f"{schema.num_aspects} aspects x {schema.vocab_size} values"
        )


# ---------------------------------------------------------------------------
# Schema registry
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, AspectSchema] = {}


def register_schema(schema: AspectSchema) -> AspectSchema:
    validate_schema(schema)
    _REGISTRY[schema.name] = schema
    return schema


def get_schema(name: str) -> AspectSchema:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownSchemaError(f"no registered schema named {name!r}") from None


def list_schemas() -> list[AspectSchema]:
    return list(_REGISTRY.values())


def _register_builtins() -> None:
    register_schema(
        AspectSchema(
            name="default",
            aspects=vocab.DEFAULT_ASPECTS,
            vocab_size=16,
            question_templates=tuple(
                DEFAULT_QUESTION_TEMPLATE.format(aspect=a) for a in vocab.DEFAULT_ASPECTS
            ),
            value_names=tuple(vocab.DEFAULT_VALUES[a] for a in vocab.DEFAULT_ASPECTS),
        )
    )
    register_schema(
        AspectSchema(
            name="fashion",
            aspects=vocab.FASHION_ASPECTS,
            vocab_size=16,
            question_templates=tuple(
                "What should the {aspect} of the garment be?".format(aspect=a)
                for a in vocab.FASHION_ASPECTS
            ),
            value_names=tuple(vocab.FASHION_VALUES[a] for a in vocab.FASHION_ASPECTS),
        )
    )


_register_builtins()


def default_schema() -> AspectSchema:
    return get_schema("default")


# ---------------------------------------------------------------------------
# Aspect vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AspectVector:
    """One value slot per schema aspect; None marks an unspecified slot."""

    schema: AspectSchema
    slots: tuple[Optional[int], ...]

    def __post_init__(self):
        if len(self.slots) != self.schema.num_aspects:
            raise SchemaMismatchError(
                f"{len(self.slots)} slots for {self.schema.num_aspects} aspects"
            )
        for i, slot in enumerate(self.slots):
            if slot is not None and not 0 <= slot < self.schema.vocab_size:
                raise SchemaMismatchError(
                    f"slot {self.schema.aspects[i]!r} value {slot} outside "
                    f"[0, {self.schema.vocab_size})"
                )

    @classmethod
    def empty(cls, schema: AspectSchema) -> "AspectVector":
        return cls(schema, (None,) * schema.num_aspects)

    @classmethod
    def from_assignment(
        cls, schema: AspectSchema, assignment: Mapping[str, int | str]
    ) -> "AspectVector":
        slots: list[Optional[int]] = [None] * schema.num_aspects
        for aspect, value in assignment.items():
            slots[schema.aspect_index(aspect)] = schema.value_id(aspect, value)
        return cls(schema, tuple(slots))

    @property
    def fully_specified(self) -> bool:
        return all(slot is not None for slot in self.slots)

    @property
    def specified_count(self) -> int:
        return sum(slot is not None for slot in self.slots)

    def get(self, aspect: str) -> Optional[int]:
        return self.slots[self.schema.aspect_index(aspect)]

    def specified_aspects(self) -> list[str]:
        return [a for a, slot in zip(self.schema.aspects, self.slots) if slot is not None]

    def merged_with(self, other: "AspectVector") -> "AspectVector":
        """Union of slots; `other` wins where both are specified."""
        if other.schema != self.schema:
            raise SchemaMismatchError("cannot merge vectors from different schemas")
        slots = tuple(
            b if b is not None else a for a, b in zip(self.slots, other.slots)
        )
        return AspectVector(self.schema, slots)

    def value_name(self, aspect: str) -> Optional[str]:
        slot = self.get(aspect)
        return None if slot is None else self.schema.value_name(aspect, slot)

    def phrase_stacked(self) -> str:
        """Comma-join the specified value names in schema order."""
        return ", ".join(
            self.schema.value_names[i][slot]
            for i, slot in enumerate(self.slots)
            if slot is not None
        )

    def to_jsonable(self) -> dict:
        return {"schema": self.schema.name, "slots": list(self.slots)}

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "AspectVector":
        try:
            schema = get_schema(data["schema"])
            return cls(schema, tuple(data["slots"]))
        except (KeyError, TypeError) as exc:
            raise DecodeError(f"bad AspectVector document: {exc}") from exc


def _optional_vector(data: Any) -> Optional[AspectVector]:
    return None if data is None else AspectVector.from_jsonable(data)


# ---------------------------------------------------------------------------
# Dialogue memory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryTurn:
    round: int
    speaker: str
    text: str
    structured: Optional[AspectVector] = None

    def to_jsonable(self) -> dict:
        return {
            "round": self.round,
            "speaker": self.speaker,
            "text": self.text,
            "structured": self.structured.to_jsonable() if self.structured else None,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "MemoryTurn":
        return cls(
            round=int(data["round"]),
            speaker=data["speaker"],
            text=data["text"],
            structured=_optional_vector(data.get("structured")),
        )


@dataclass(frozen=True)
class DialogueMemory:
    """Ordered user/agent turns; rounds non-decreasing, first turn is the user's."""

    turns: tuple[MemoryTurn, ...] = ()

    def __post_init__(self):
        if self.turns:
            if self.turns[0].speaker != SPEAKER_USER:
                raise ReflexError("first memory turn must belong to the user")
            rounds = [t.round for t in self.turns]
            if any(b < a for a, b in zip(rounds, rounds[1:])):
                raise ReflexError("memory turn rounds must be non-decreasing")

    def with_turn(self, turn: MemoryTurn) -> "DialogueMemory":
        return DialogueMemory(self.turns + (turn,))

    def user_turns(self) -> list[MemoryTurn]:
        return [t for t in self.turns if t.speaker == SPEAKER_USER]

    def to_jsonable(self) -> dict:
        return {"turns": [t.to_jsonable() for t in self.turns]}

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "DialogueMemory":
        return cls(tuple(MemoryTurn.from_jsonable(t) for t in data["turns"]))


# ---------------------------------------------------------------------------
# Round artifacts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptRecord:
    round: int
    text: str
    structured: Optional[AspectVector] = None

    def to_jsonable(self) -> dict:
        return {
            "round": self.round,
            "text": self.text,
            "structured": self.structured.to_jsonable() if self.structured else None,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "PromptRecord":
        return cls(
            round=int(data["round"]),
            text=data["text"],
            structured=_optional_vector(data.get("structured")),
        )


@dataclass(frozen=True)
class ImageRecord:
    """One generated image: a toy aspect vector or remote bytes, never both."""

    round: int
    seed: int
    toy_payload: Optional[AspectVector] = None
    bytes_sha256: Optional[str] = None
    image_bytes: Optional[bytes] = field(default=None, compare=False, repr=False)
    trajectory: Optional["DenoisingTrajectory"] = None

    def __post_init__(self):
        if self.image_bytes is not None and self.bytes_sha256 is None:
            object.__setattr__(
                self, "bytes_sha256", hashlib.sha256(self.image_bytes).hexdigest()
            )
        has_toy = self.toy_payload is not None
        has_bytes = self.bytes_sha256 is not None
        if has_toy == has_bytes:
            raise ReflexError("image record needs exactly one of toy payload or bytes")
        if has_toy and not self.toy_payload.fully_specified:
            raise ReflexError("toy image payload must be fully specified")

    def to_jsonable(self) -> dict:
        if self.toy_payload is not None:
            payload = {"kind": "toy", "vector": self.toy_payload.to_jsonable()}
        else:
            payload = {"kind": "bytes", "sha256": self.bytes_sha256}
        return {
            "round": self.round,
            "payload": payload,
            "seed": self.seed,
            "trajectory": self.trajectory.to_jsonable() if self.trajectory else None,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "ImageRecord":
        payload = data["payload"]
        trajectory = None
        if data.get("trajectory") is not None:
            from .dpo import DenoisingTrajectory

            trajectory = DenoisingTrajectory.from_jsonable(data["trajectory"])
        if payload.get("kind") == "toy":
            return cls(
                round=int(data["round"]),
                seed=int(data["seed"]),
                toy_payload=AspectVector.from_jsonable(payload["vector"]),
                trajectory=trajectory,
            )
        if payload.get("kind") == "bytes":
            return cls(
                round=int(data["round"]),
                seed=int(data["seed"]),
                bytes_sha256=payload["sha256"],
                trajectory=trajectory,
            )
        raise DecodeError(f"unknown image payload kind {payload.get('kind')!r}")


@dataclass(frozen=True)
class CaptionSet:
    """One caption per schema aspect for a single image."""

    round: int
    captions: tuple[tuple[str, str], ...]  # (aspect, text), schema order
    structured: Optional[AspectVector] = None

    def caption_for(self, aspect: str) -> str:
        for a, text in self.captions:
            if a == aspect:
                return text
        raise SchemaMismatchError(f"no caption for aspect {aspect!r}")

    def as_dict(self) -> dict[str, str]:
        return dict(self.captions)

    def covers(self, schema: AspectSchema) -> bool:
        return [a for a, _ in self.captions] == list(schema.aspects)

    def to_jsonable(self) -> dict:
        return {
            "round": self.round,
            "captions": {a: t for a, t in self.captions},
            "structured": self.structured.to_jsonable() if self.structured else None,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "CaptionSet":
        structured = _optional_vector(data.get("structured"))
        captions = data["captions"]
        if structured is not None:
            order = structured.schema.aspects
        else:
            order = tuple(captions.keys())
        return cls(
            round=int(data["round"]),
            captions=tuple((a, captions[a]) for a in order if a in captions),
            structured=structured,
        )


@dataclass(frozen=True)
class AmbiguityLabel:
    """Per-aspect prompt/caption similarity plus the aspect picked for questioning."""

    round: int
    scores: tuple[tuple[str, float], ...]  # (aspect, score), schema order
    candidates: tuple[str, ...]
    chosen: str

    def __post_init__(self):
        if self.chosen not in self.candidates:
            raise ReflexError("chosen aspect must be one of the candidates")

    def score_for(self, aspect: str) -> float:
        for a, s in self.scores:
            if a == aspect:
                return s
        raise SchemaMismatchError(f"no score for aspect {aspect!r}")

    def to_jsonable(self) -> dict:
        return {
            "round": self.round,
            "scores": {a: s for a, s in self.scores},
            "candidates": list(self.candidates),
            "chosen": self.chosen,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "AmbiguityLabel":
        scores = data["scores"]
        return cls(
            round=int(data["round"]),
            scores=tuple((a, float(s)) for a, s in scores.items()),
            candidates=tuple(data["candidates"]),
            chosen=data["chosen"],
        )


@dataclass(frozen=True)
class Question:
    round: int
    aspect: str
    text: str
    source: str = SOURCE_TEMPLATE

    def __post_init__(self):
        if not self.text:
            raise ReflexError("question text must be non-empty")

    def to_jsonable(self) -> dict:
        return {
            "round": self.round,
            "aspect": self.aspect,
            "text": self.text,
            "source": self.source,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "Question":
        return cls(
            round=int(data["round"]),
            aspect=data["aspect"],
            text=data["text"],
            source=data["source"],
        )


# ---------------------------------------------------------------------------
# Event drafts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventDraft:
    """A session event before the store assigns sequence number and timestamp."""

    type: str
    payload: dict


def parse_assignment(text: str, schema: AspectSchema) -> dict[str, int]:
    """Parse `"Color=red, Content=parrot"` into an aspect assignment."""
    assignment: dict[str, int] = {}
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise SchemaMismatchError(f"expected aspect=value, got {chunk!r}")
        aspect, _, value = chunk.partition("=")
        aspect, value = aspect.strip(), value.strip()
        assignment[aspect] = schema.value_id(aspect, int(value) if value.isdigit() else value)
    if not assignment:
        raise SchemaMismatchError("no aspect assignments found")
    return assignment


def assignment_to_text(assignment: Mapping[str, int], schema: AspectSchema) -> str:
    """Render an assignment the way the user would have typed it."""
    parts = []
    for aspect in schema.aspects:
        if aspect in assignment:
            parts.append(schema.value_name(aspect, assignment[aspect]))
    return ", ".join(parts)


def iter_jsonable(values: Iterable[Any]) -> list:
    return [v.to_jsonable() for v in values]
