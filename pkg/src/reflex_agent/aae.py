"""Neglect check-and-regenerate tool (the "refine output" tool).

Generation with a nonzero neglect probability sometimes drops a prompt
aspect. This tool measures prompt/image similarity, finds the first
neglected aspect in schema order (the stand-in for the attention-peak
token), and regenerates with every collected aspect forced until the
similarity clears the threshold or the iteration budget runs out. The
best-scoring image seen is returned either way.

`threshold_sweep` repeats this over many seeded trials per threshold —
invocation frequency is exactly computable from the neglect binomial, which
the sweep is tested against.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import AspectVector, ReflexError, derive_seed
from .toyworld import ToyWorldConfig, toy_generate

SWEEP_DEFAULT_THRESHOLDS = (0.8, 0.75, 0.72, 0.7, 0.68, 0.66)


class EmptyPromptError(ReflexError):
    code = "EmptyPrompt"


class NothingNeglectedError(ReflexError):
    code = "NothingNeglected"


@dataclass(frozen=True)
class ToolConfig:
    threshold: float = 0.7
    max_iterations: int = 5
    sim_backend: str = "toy"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ReflexError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.max_iterations < 1:
            raise ReflexError("need at least one iteration")
        if self.sim_backend not in ("toy", "remote"):
            raise ReflexError(f"unknown sim backend {self.sim_backend!r}")


@dataclass(frozen=True)
class NeglectReport:
    """What the tool did: scores, collected aspects, and whether it fired."""

    sim: float
    initial_sim: float
    token_list: tuple[str, ...]
    iterations_used: int
    invoked: bool

    def __post_init__(self):
        if len(set(self.token_list)) != len(self.token_list):
            raise ReflexError("token list must not contain duplicates")

    def to_jsonable(self) -> dict:
        return {
            "sim": self.sim,
            "initial_sim": self.initial_sim,
            "token_list": list(self.token_list),
            "iterations_used": self.iterations_used,
            "invoked": self.invoked,
        }


def compute_sim(image: AspectVector, prompt: AspectVector) -> float:
    """Fraction of prompt-specified slots the image realized identically."""
    specified = [
        (a, b) for a, b in zip(image.slots, prompt.slots) if b is not None
    ]
    if not specified:
        raise EmptyPromptError("similarity needs at least one specified prompt slot")
    return sum(a == b for a, b in specified) / len(specified)


def attribute_neglect(image: AspectVector, prompt: AspectVector) -> str:
    """First (schema order) prompt-specified aspect the image failed to realize."""
    for aspect, img_slot, want in zip(prompt.schema.aspects, image.slots, prompt.slots):
        if want is not None and img_slot != want:
            return aspect
    raise NothingNeglectedError("every specified aspect was realized")


def run_tool(
    prompt: AspectVector,
    seed: int,
    cfg: ToolConfig,
    world: ToyWorldConfig,
) -> tuple[AspectVector, NeglectReport]:
    """Generate, then regenerate with neglected aspects forced while Sim <= k.

    Iteration i regenerates under sub-seed (seed, i) with the accumulated
    token list forced. Returns the best image seen (by Sim) together with a
    report; never raises on a still-low final Sim — the budget simply ends.
    """
    image = toy_generate(prompt, derive_seed(seed, "iteration", 0), world)
    sim = compute_sim(image, prompt)
    initial_sim = sim
    best_image, best_sim = image, sim
    token_list: list[str] = []
    iterations = 0
    while sim <= cfg.threshold and iterations < cfg.max_iterations:
        token_list.append(attribute_neglect(image, prompt))
        iterations += 1
        image = toy_generate(
            prompt, derive_seed(seed, "iteration", iterations), world, forced=frozenset(token_list)
        )
        sim = compute_sim(image, prompt)
        if sim > best_sim:
            best_image, best_sim = image, sim
    report = NeglectReport(
        sim=best_sim,
        initial_sim=initial_sim,
        token_list=tuple(token_list),
        iterations_used=iterations,
        invoked=iterations > 0,
    )
    return best_image, report


# ---------------------------------------------------------------------------
# Threshold sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    threshold: float
    frequency: float
    initial_sim: float
    final_sim: float
    delta: float


@dataclass(frozen=True)
class SweepResult:
    n_trials: int
    rows: tuple[SweepRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "frequency", "initial_sim", "final_sim", "delta"])
        for row in self.rows:
            writer.writerow(
                [
                    f"{row.threshold:.2f}",
                    f"{row.frequency:.4f}",
                    f"{row.initial_sim:.4f}",
                    f"{row.final_sim:.4f}",
                    f"{row.delta:+.4f}",
                ]
            )
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"{'k':>5}  {'freq':>7}  {'initial':>8}  {'final':>8}  {'delta':>8}"
        ]
        for row in self.rows:
            lines.append(
                f"{row.threshold:>5.2f}  {row.frequency:>7.4f}  "
                f"{row.initial_sim:>8.4f}  {row.final_sim:>8.4f}  {row.delta:>+8.4f}"
            )
        return "\n".join(lines)

    def to_jsonable(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "rows": [
                {
                    "k": r.threshold,
                    "frequency": r.frequency,
                    "initial_sim": r.initial_sim,
                    "final_sim": r.final_sim,
                    "delta": r.delta,
                }
                for r in self.rows
            ],
        }


def _trial_prompt(world: ToyWorldConfig, trial_seed: int, specified_aspects: int) -> AspectVector:
    """Random prompt pinning `specified_aspects` distinct aspects."""
    schema = world.schema
    order = sorted(
        range(schema.num_aspects), key=lambda i: derive_seed(trial_seed, "which", i)
    )
    chosen = sorted(order[:specified_aspects])
    slots: list[int | None] = [None] * schema.num_aspects
    for i in chosen:
        slots[i] = derive_seed(trial_seed, "value", i) % world.vocab_size
    return AspectVector(schema, tuple(slots))


def threshold_sweep(
    thresholds: Iterable[float],
    n_trials: int,
    cfg: ToolConfig,
    world: ToyWorldConfig,
    specified_aspects: int = 3,
) -> SweepResult:
    """Invocation frequency and similarity lift per threshold.

    Trial t uses prompt/seed derived from (world.seed, t) for every
    threshold, so rows differ only in k — frequencies are then exactly
    monotone in k rather than monotone-in-expectation.
    """
    if n_trials < 1:
        raise ReflexError("need at least one trial")
    thresholds = list(thresholds)
    rows = []
    for k in thresholds:
        k_cfg = ToolConfig(
            threshold=k, max_iterations=cfg.max_iterations, sim_backend=cfg.sim_backend
        )
        invoked = 0
        initial_total = 0.0
        final_total = 0.0
        for t in range(n_trials):
            trial_seed = derive_seed(world.seed, "sweep-trial", t)
            prompt = _trial_prompt(world, trial_seed, specified_aspects)
            _, report = run_tool(prompt, derive_seed(trial_seed, "tool"), k_cfg, world)
            invoked += report.invoked
            initial_total += report.initial_sim
            final_total += report.sim
        initial_mean = initial_total / n_trials
        final_mean = final_total / n_trials
        rows.append(
            SweepRow(
                threshold=k,
                frequency=invoked / n_trials,
                initial_sim=initial_mean,
                final_sim=final_mean,
                delta=final_mean - initial_mean,
            )
        )
    return SweepResult(n_trials=n_trials, rows=tuple(rows))
