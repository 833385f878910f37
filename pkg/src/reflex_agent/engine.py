"""The external-reflection round: one atomic pass of the dialogue loop.

A round takes the user's words and runs, in order: store the turn,
summarize memory into a prompt, generate an image, caption it, score each
caption against the prompt to find the ambiguous aspects, and ask about one
of them. Stages are pure and the state is immutable, so a failure at any
stage leaves the caller's state untouched; the six per-stage events are
returned alongside the new state for the store to append.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Any, Callable, Mapping, Optional, Union

from .backends import Backends, toy_similarity
from .core import (
    AmbiguityLabel,
    AspectSchema,
    AspectVector,
    CaptionSet,
    DialogueMemory,
    EventDraft,
    ImageRecord,
    MemoryTurn,
    PromptRecord,
    Question,
    ReflexError,
    SchemaMismatchError,
    SOURCE_BACKEND,
    SOURCE_TEMPLATE,
    SPEAKER_AGENT,
    SPEAKER_USER,
    derive_seed,
    get_schema,
    parse_assignment,
)

CANDIDATE_POOL = 3  # "from the three aspects with the lowest scores"


class SessionClosedError(ReflexError):
    code = "SessionClosed"


@dataclass(frozen=True)
class RoundRecord:
    """Everything one round produced; all five stages present or no record."""

    prompt: PromptRecord
    image: ImageRecord
    captions: CaptionSet
    ambiguity: AmbiguityLabel
    question: Question

    @property
    def round(self) -> int:
        return self.prompt.round

    def to_jsonable(self) -> dict:
        return {
            "prompt": self.prompt.to_jsonable(),
            "image": self.image.to_jsonable(),
            "captions": self.captions.to_jsonable(),
            "ambiguity": self.ambiguity.to_jsonable(),
            "question": self.question.to_jsonable(),
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "RoundRecord":
        return cls(
            prompt=PromptRecord.from_jsonable(data["prompt"]),
            image=ImageRecord.from_jsonable(data["image"]),
            captions=CaptionSet.from_jsonable(data["captions"]),
            ambiguity=AmbiguityLabel.from_jsonable(data["ambiguity"]),
            question=Question.from_jsonable(data["question"]),
        )


@dataclass(frozen=True)
class SessionState:
    id: str
    schema: AspectSchema
    memory: DialogueMemory
    rounds: tuple[RoundRecord, ...]
    rng_seed: int
    persona: Optional[str] = None

    def __post_init__(self):
        for i, record in enumerate(self.rounds):
            if record.round != i + 1:
                raise ReflexError(
                    f"round records must be numbered consecutively from 1; "
                    f"position {i} holds round {record.round}"
                )

    @property
    def next_round(self) -> int:
        return len(self.rounds) + 1

    def to_jsonable(self) -> dict:
        return {
            "id": self.id,
            "schema": self.schema.name,
            "memory": self.memory.to_jsonable(),
            "rounds": [r.to_jsonable() for r in self.rounds],
            "rng_seed": self.rng_seed,
            "persona": self.persona,
        }

    @classmethod
    def from_jsonable(cls, data: Mapping[str, Any]) -> "SessionState":
        return cls(
            id=data["id"],
            schema=get_schema(data["schema"]),
            memory=DialogueMemory.from_jsonable(data["memory"]),
            rounds=tuple(RoundRecord.from_jsonable(r) for r in data["rounds"]),
            rng_seed=int(data["rng_seed"]),
            persona=data.get("persona"),
        )


def new_session_state(
    session_id: str, schema: AspectSchema, rng_seed: int, persona: Optional[str] = None
) -> SessionState:
    return SessionState(
        id=session_id,
        schema=schema,
        memory=DialogueMemory(),
        rounds=(),
        rng_seed=rng_seed,
        persona=persona,
    )


def created_event(state: SessionState) -> EventDraft:
    return EventDraft(
        "session_created",
        {
            "id": state.id,
            "schema": state.schema.name,
            "rng_seed": state.rng_seed,
            "persona": state.persona,
        },
    )


@dataclass(frozen=True)
class RoundOutcome:
    state: SessionState
    record: RoundRecord
    events: tuple[EventDraft, ...]

    def __iter__(self):
        # allow `state, record = run_round(...)`
        return iter((self.state, self.record))


def _user_turn(
    round_no: int,
    user_words: Union[str, Mapping[str, Any]],
    schema: AspectSchema,
    kind: str,
) -> MemoryTurn:
    if isinstance(user_words, str):
        text = user_words.strip()
        if not text:
            raise ReflexError("user words must be non-empty")
        if kind == "toy":
            # toy mode understands structured answers only
            assignment = parse_assignment(text, schema)
            structured = AspectVector.from_assignment(schema, assignment)
            return MemoryTurn(round_no, SPEAKER_USER, text, structured)
        return MemoryTurn(round_no, SPEAKER_USER, text, None)
    if not user_words:
        raise ReflexError("user assignment must be non-empty")
    structured = AspectVector.from_assignment(schema, dict(user_words))
    text = ", ".join(
        f"{a}={structured.value_name(a)}" for a in structured.specified_aspects()
    )
    return MemoryTurn(round_no, SPEAKER_USER, text, structured)


def infer_ambiguity(
    captions: CaptionSet,
    prompt: PromptRecord,
    schema: AspectSchema,
    rng: random.Random,
    similarity: Callable[[str, str], float] | None = None,
) -> AmbiguityLabel:
    """Score each caption against the prompt; pick one low scorer to ask about.

    Candidates are the three lowest-scoring aspects (ties resolved by schema
    order; fewer when the schema has < 3 aspects) and the question target is
    a uniform draw from them. Already-pinned aspects stay eligible — they
    simply score high and drop out of the candidate pool on their own.
    """
    if not captions.covers(schema):
        raise SchemaMismatchError("caption set does not cover the schema's aspects")
    sim = similarity or toy_similarity
    scores = tuple(
        (aspect, sim(prompt.text, captions.caption_for(aspect)))
        for aspect in schema.aspects
    )
    pool = min(CANDIDATE_POOL, schema.num_aspects)
    order = sorted(range(schema.num_aspects), key=lambda i: (scores[i][1], i))
    candidates = tuple(schema.aspects[i] for i in order[:pool])
    chosen = candidates[rng.randrange(len(candidates))]
    return AmbiguityLabel(
        round=captions.round, scores=scores, candidates=candidates, chosen=chosen
    )


def make_question(
    label: AmbiguityLabel,
    captions: CaptionSet,
    backends: Backends,
    schema: AspectSchema,
) -> Question:
    """Word the question for the chosen aspect.

    Remote mode asks the chat backend and falls back to the schema template
    whenever the backend fails or answers off-aspect, so a question is
    always produced.
    """
    if backends.kind == "remote":
        text = backends.question_text(captions, label.chosen)
        if text:
            return Question(label.round, label.chosen, text, SOURCE_BACKEND)
    template = schema.template_for(label.chosen).replace("{aspect}", label.chosen)
    return Question(label.round, label.chosen, template, SOURCE_TEMPLATE)


def run_round(
    state: SessionState,
    user_words: Union[str, Mapping[str, Any]],
    backends: Backends,
) -> RoundOutcome:
    """One full reflection round; returns the advanced state, the record,
    and the six stage events. Raises without side effects on any failure."""
    schema = state.schema
    round_no = state.next_round

    turn = _user_turn(round_no, user_words, schema, backends.kind)
    memory = state.memory.with_turn(turn)

    prompt = backends.summarize(memory)
    gen_seed = derive_seed(state.rng_seed, "round", round_no, "generate")
    image = backends.generate_image(prompt, gen_seed)
    captions = backends.caption(image, schema)

    rng = random.Random(derive_seed(state.rng_seed, "round", round_no, "ambiguity"))
    label = infer_ambiguity(
        captions, prompt, schema, rng, similarity=backends.embed_similarity
    )
    question = make_question(label, captions, backends, schema)

    record = RoundRecord(
        prompt=prompt, image=image, captions=captions, ambiguity=label, question=question
    )
    agent_turn = MemoryTurn(round_no, SPEAKER_AGENT, question.text)
    new_state = replace(
        state,
        memory=memory.with_turn(agent_turn),
        rounds=state.rounds + (record,),
    )
    events = (
        EventDraft("user_message", turn.to_jsonable()),
        EventDraft("prompt", prompt.to_jsonable()),
        EventDraft("generation", image.to_jsonable()),
        EventDraft("caption", captions.to_jsonable()),
        EventDraft("ambiguity", label.to_jsonable()),
        EventDraft("question", question.to_jsonable()),
    )
    return RoundOutcome(new_state, record, events)
