"""Regenerate the golden session logs and expected states in this directory.

Run from anywhere:  python3 tests/golden/regen.py

The files are committed; a diff after running this script means the
deterministic pipeline changed behavior and every frozen log would break
on replay. That is exactly what the goldens are for — regenerate only when
such a break is intentional, and say so in the commit.
"""

from __future__ import annotations

import json
from pathlib import Path

from reflex_agent.backends import Backends
from reflex_agent.core import EventDraft, canonical_dumps, default_schema, get_schema
from reflex_agent.engine import created_event, new_session_state, run_round
from reflex_agent.store import SessionLog
from reflex_agent.toyworld import SimulatedUser, ToyWorldConfig, random_target, toy_generate, user_reply

HERE = Path(__file__).resolve().parent


def write_session(name, schema_name, session_seed, target_seed, rounds, extra_events=()):
    schema = get_schema(schema_name)
    world = ToyWorldConfig(schema=schema)
    backends = Backends.toy(world)
    target = random_target(schema, target_seed)
    user = SimulatedUser(target, (schema.aspects[0],))
    state = new_session_state(name, schema, session_seed)

    path = HERE / f"{name}.jsonl"
    path.unlink(missing_ok=True)
    ts = 0
    with SessionLog(path) as log:
        log.append_draft(name, created_event(state), ts_ms=ts)
        words = user.initial_assignment()
        for _ in range(rounds):
            outcome = run_round(state, words, backends)
            state = outcome.state
            for draft in outcome.events:
                ts += 1
                log.append_draft(name, draft, ts_ms=ts)
            words = user_reply(user, outcome.record.question)
        for draft in extra_events:
            ts += 1
            log.append_draft(name, draft, ts_ms=ts)

    (HERE / f"{name}.state.json").write_text(
        canonical_dumps(state.to_jsonable()) + "\n", encoding="utf-8"
    )
    return state


def write_scripted_session(name, schema_name, session_seed, turns):
    """Fixed user words per round (no simulated user), for rule-specific oracles."""
    schema = get_schema(schema_name)
    backends = Backends.toy(ToyWorldConfig(schema=schema))
    state = new_session_state(name, schema, session_seed)

    path = HERE / f"{name}.jsonl"
    path.unlink(missing_ok=True)
    ts = 0
    with SessionLog(path) as log:
        log.append_draft(name, created_event(state), ts_ms=ts)
        for words in turns:
            outcome = run_round(state, words, backends)
            state = outcome.state
            for draft in outcome.events:
                ts += 1
                log.append_draft(name, draft, ts_ms=ts)

    (HERE / f"{name}.state.json").write_text(
        canonical_dumps(state.to_jsonable()) + "\n", encoding="utf-8"
    )
    return state


def write_cli_help_golden():
    from click.testing import CliRunner

    from reflex_agent.cli import main as cli_main

    sections = []
    for name in (None, "chat", "simulate", "train-dpo", "aae-sweep", "serve", "replay"):
        args = ["--help"] if name is None else [name, "--help"]
        result = CliRunner().invoke(cli_main, args)
        assert result.exit_code == 0, result.output
        sections.append(f"== {name or 'reflex'}\n{result.output.rstrip()}\n")
    (HERE / "cli-help.txt").write_text("\n".join(sections), encoding="utf-8")


def write_generation_golden():
    schema = default_schema()
    cfg = ToyWorldConfig(schema=schema)
    from reflex_agent.core import AspectVector

    prompt = AspectVector.from_assignment(schema, {"Content": "parrot"})
    image = toy_generate(prompt, 42, cfg)
    doc = {
        "prompt": {"Content": "parrot"},
        "seed": 42,
        "expected_slots": list(image.slots),
        "expected_phrase": image.phrase_stacked(),
    }
    (HERE / "generation_seed42.json").write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8"
    )


def main():
    write_session("toy-default-4round", "default", session_seed=1234, target_seed=77, rounds=4)
    # bookkeeping events must not disturb the fold
    extras = (
        EventDraft("preference", {"winner_round": 1, "loser_round": 2, "count": 1}),
        EventDraft("session_closed", {"id": "toy-fashion-3round"}),
    )
    write_session(
        "toy-fashion-3round", "fashion", session_seed=4321, target_seed=9, rounds=3,
        extra_events=extras,
    )
    # the memory overwrite rule, frozen: round 2 re-specifies Color
    state = write_scripted_session(
        "toy-overwrite-2round",
        "default",
        session_seed=99,
        turns=({"Color": "red"}, {"Color": "blue"}),
    )
    assert state.rounds[-1].prompt.structured.value_name("Color") == "blue"
    write_generation_golden()
    write_cli_help_golden()
    print(f"goldens written under {HERE}")


if __name__ == "__main__":
    main()
