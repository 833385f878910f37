"""Analytic toy generative world.

Stands in for the diffusion model at desk scale: images are aspect vectors,
generation copies specified prompt slots (subject to a neglect probability)
and samples the rest uniformly, and alignment to a hidden target is exactly
computable. The closed-form `expected_alignment` oracle is what the
multi-round simulation is checked against.

Every draw is keyed by (seed, slot index) through the hash-based helpers in
`core`, so the world is a pure function of its inputs on every platform.
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .core import (
    AspectSchema,
    AspectVector,
    ReflexError,
    SchemaMismatchError,
    bounded_index,
    default_schema,
    derive_seed,
    unit_uniform,
)


class OutOfRangeError(ReflexError):
    code = "OutOfRange"


@dataclass(frozen=True)
class ToyWorldConfig:
    """World parameters: schema, vocabulary size, neglect probability, seed."""

    schema: AspectSchema = field(default_factory=default_schema)
    vocab_size: Optional[int] = None
    neglect_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size is None:
            object.__setattr__(self, "vocab_size", self.schema.vocab_size)
        elif self.vocab_size != self.schema.vocab_size:
            raise SchemaMismatchError(
                f"vocab_size {self.vocab_size} disagrees with schema "
                f"({self.schema.vocab_size})"
            )
        if not 0.0 <= self.neglect_prob <= 1.0:
            raise OutOfRangeError(f"neglect_prob {self.neglect_prob} outside [0, 1]")


@dataclass(frozen=True)
class SimulatedUser:
    """Scripted user with a hidden fully-specified target vector.

    Reveals `initial_aspects` of the target on round 1 and afterwards
    answers each question with the target's value for the asked aspect,
    with probability `reply_prob` (silence otherwise).
    """

    target: AspectVector
    initial_aspects: tuple[str, ...]
    reply_prob: float = 1.0

    def __post_init__(self):
        if not self.target.fully_specified:
            raise ReflexError("simulated user target must be fully specified")
        if not self.initial_aspects:
            raise ReflexError("simulated user must reveal at least one aspect")
        for aspect in self.initial_aspects:
            self.target.schema.aspect_index(aspect)

    def initial_assignment(self) -> dict[str, int]:
        return {a: self.target.get(a) for a in self.initial_aspects}


def toy_generate(
    prompt: AspectVector,
    seed: int,
    cfg: ToyWorldConfig,
    forced: frozenset[str] | set[str] = frozenset(),
) -> AspectVector:
    """Generate a fully specified image vector from a (partial) prompt.

    A specified slot is copied; with probability `neglect_prob` it is
    instead "neglected" and resampled uniformly over the other V-1 values,
    so a neglected aspect never silently matches the prompt. Unspecified
    slots sample uniformly over V. Aspects in `forced` are always copied
    (the regeneration tool's boost). Slot draws are independent: forcing
    one aspect never shifts another aspect's outcome for the same seed.
    """
    schema = prompt.schema
    vocab = cfg.vocab_size
    out: list[int] = []
    for i, aspect in enumerate(schema.aspects):
        slot = prompt.slots[i]
        if slot is None:
            out.append(bounded_index(vocab, seed, "slot", i, "fill"))
        elif aspect in forced or unit_uniform(seed, "slot", i, "neglect") >= cfg.neglect_prob:
            out.append(slot)
        else:
            other = bounded_index(vocab - 1, seed, "slot", i, "resample")
            out.append(other if other < slot else other + 1)
    return AspectVector(schema, tuple(out))


def alignment(a: AspectVector, b: AspectVector) -> float:
    """Fraction of slots on which two fully specified vectors agree."""
    if a.schema != b.schema:
        raise SchemaMismatchError("alignment requires a shared schema")
    if not (a.fully_specified and b.fully_specified):
        raise SchemaMismatchError("alignment requires fully specified vectors")
    matches = sum(x == y for x, y in zip(a.slots, b.slots))
    return matches / a.schema.num_aspects


def expected_alignment(pinned: int, cfg: ToyWorldConfig) -> float:
    """Exact expected alignment to the target with `pinned` slots revealed.

    Pinned slots always match; each of the remaining A - p slots matches
    with probability 1/V, giving (p + (A - p)/V) / A. Valid only for a
    zero neglect probability.
    """
    num_aspects = cfg.schema.num_aspects
    if not 0 <= pinned <= num_aspects:
        raise OutOfRangeError(f"pinned count {pinned} outside [0, {num_aspects}]")
    if cfg.neglect_prob != 0.0:
        raise OutOfRangeError("closed-form alignment assumes neglect_prob = 0")
    return (pinned + (num_aspects - pinned) / cfg.vocab_size) / num_aspects


def user_reply(
    user: SimulatedUser,
    question,
    rng: random.Random | None = None,
) -> Optional[dict[str, int]]:
    """Answer a question with the target's value for the asked aspect.

    Returns None ("silence") with probability 1 - reply_prob; pass a seeded
    `rng` whenever reply_prob is fractional and reproducibility matters.
    """
    user.target.schema.aspect_index(question.aspect)
    if user.reply_prob < 1.0:
        draw = (rng or random).random()
        if draw >= user.reply_prob:
            return None
    return {question.aspect: user.target.get(question.aspect)}


def random_target(schema: AspectSchema, seed: int) -> AspectVector:
    """Uniform fully specified vector; the simulated user's hidden intent."""
    slots = tuple(
        bounded_index(schema.vocab_size, seed, "target", i)
        for i in range(schema.num_aspects)
    )
    return AspectVector(schema, slots)


# ---------------------------------------------------------------------------
# Multi-round simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationRow:
    round: int
    mean_alignment: float
    delta_vs_round1: float


@dataclass(frozen=True)
class SimulationResult:
    n_dialogues: int
    rows: tuple[SimulationRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "mean_alignment", "delta_vs_round1"])
        for row in self.rows:
            writer.writerow([row.round, f"{row.mean_alignment:.6f}", f"{row.delta_vs_round1:+.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'round':>5}  {'mean':>8}  {'delta':>8}"]
        for row in self.rows:
            lines.append(
                f"{row.round:>5}  {row.mean_alignment:>8.4f}  {row.delta_vs_round1:>+8.4f}"
            )
        return "\n".join(lines)

    def to_jsonable(self) -> dict:
        return {
            "n_dialogues": self.n_dialogues,
            "rows": [
                {
                    "round": r.round,
                    "mean_alignment": r.mean_alignment,
                    "delta_vs_round1": r.delta_vs_round1,
                }
                for r in self.rows
            ],
        }


def run_simulation(
    n_dialogues: int,
    rounds: int,
    cfg: ToyWorldConfig,
    engine=None,
    reply_prob: float = 1.0,
    initial_aspects: tuple[str, ...] | None = None,
) -> SimulationResult:
    """Mean image/target alignment per round over scripted dialogues.

    Each dialogue draws a hidden target, reveals `initial_aspects` (default:
    the first schema aspect) on round 1, and then answers every question
    from the target. A silent round re-sends the previous assignment, so it
    pins nothing new.
    """
    if n_dialogues < 1:
        raise OutOfRangeError("need at least one dialogue")
    if engine is None:
        from . import engine as engine_mod

        engine = engine_mod
    from .backends import Backends

    backends = Backends.toy(cfg)
    schema = cfg.schema
    reveal = initial_aspects or (schema.aspects[0],)
    sums = [0.0] * rounds

    for d in range(n_dialogues):
        target = random_target(schema, derive_seed(cfg.seed, "dialogue", d, "target"))
        user = SimulatedUser(target=target, initial_aspects=reveal, reply_prob=reply_prob)
        reply_rng = random.Random(derive_seed(cfg.seed, "dialogue", d, "reply"))
        state = engine.new_session_state(
            f"sim-{d}", schema, derive_seed(cfg.seed, "dialogue", d, "session")
        )
        words: Mapping[str, int] = user.initial_assignment()
        for r in range(rounds):
            outcome = engine.run_round(state, words, backends)
            state = outcome.state
            record = outcome.record
            sums[r] += alignment(record.image.toy_payload, target)
            reply = user_reply(user, record.question, reply_rng)
            if reply is not None:
                words = reply

    means = [s / n_dialogues for s in sums]
    rows = tuple(
        SimulationRow(round=r + 1, mean_alignment=means[r], delta_vs_round1=means[r] - means[0])
        for r in range(rounds)
    )
    return SimulationResult(n_dialogues=n_dialogues, rows=rows)
