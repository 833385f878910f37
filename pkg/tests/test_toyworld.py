import random

import pytest
from hypothesis import given, settings, strategies as st

from reflex_agent.core import (
    AspectVector,
    Question,
    SchemaMismatchError,
    default_schema,
    get_schema,
)
from reflex_agent.toyworld import (
    OutOfRangeError,
    SimulatedUser,
    ToyWorldConfig,
    alignment,
    expected_alignment,
    random_target,
    run_simulation,
    toy_generate,
    user_reply,
)

SCHEMA = default_schema()
A = SCHEMA.num_aspects
V = SCHEMA.vocab_size


def full_vector(value=0):
    return AspectVector(SCHEMA, (value,) * A)


# -- config ------------------------------------------------------------------

def test_config_defaults_vocab_from_schema():
    cfg = ToyWorldConfig()
    assert cfg.vocab_size == V
    assert ToyWorldConfig(vocab_size=16).vocab_size == 16


def test_config_rejects_vocab_mismatch_and_bad_neglect():
    with pytest.raises(SchemaMismatchError):
        ToyWorldConfig(vocab_size=8)
    with pytest.raises(OutOfRangeError):
        ToyWorldConfig(neglect_prob=-0.1)
    with pytest.raises(OutOfRangeError):
        ToyWorldConfig(neglect_prob=1.5)


# -- generation --------------------------------------------------------------

def test_specified_slots_copied_without_neglect():
    cfg = ToyWorldConfig(neglect_prob=0.0)
    prompt = AspectVector.from_assignment(SCHEMA, {"Content": "parrot", "Color": "blue"})
    for seed in range(50):
        img = toy_generate(prompt, seed, cfg)
        assert img.fully_specified
        assert img.value_name("Content") == "parrot"
        assert img.value_name("Color") == "blue"


def test_generation_is_a_pure_function_of_seed():
    cfg = ToyWorldConfig(neglect_prob=0.3)
    prompt = AspectVector.from_assignment(SCHEMA, {"Content": "parrot"})
    assert toy_generate(prompt, 99, cfg) == toy_generate(prompt, 99, cfg)
    outputs = {toy_generate(prompt, s, cfg).slots for s in range(20)}
    assert len(outputs) > 1  # seeds actually matter


def test_neglected_slot_never_matches_the_prompt():
    # resampling over the other V-1 values means neglect is always visible
    cfg = ToyWorldConfig(neglect_prob=1.0)
    prompt = full_vector(3)
    for seed in range(200):
        img = toy_generate(prompt, seed, cfg)
        assert all(slot != 3 for slot in img.slots)


def test_forced_aspects_survive_certain_neglect():
    cfg = ToyWorldConfig(neglect_prob=1.0)
    prompt = full_vector(5)
    img = toy_generate(prompt, 7, cfg, forced={"Color", "Size"})
    assert img.get("Color") == 5
    assert img.get("Size") == 5
    assert img.get("Content") != 5


def test_forcing_one_aspect_leaves_other_slots_untouched():
    cfg = ToyWorldConfig(neglect_prob=1.0)
    prompt = full_vector(2)
    for seed in range(30):
        free = toy_generate(prompt, seed, cfg)
        forced = toy_generate(prompt, seed, cfg, forced={"Style"})
        for aspect in SCHEMA.aspects:
            if aspect != "Style":
                assert free.get(aspect) == forced.get(aspect)


def test_neglect_rate_matches_probability():
    cfg = ToyWorldConfig(neglect_prob=0.4)
    prompt = AspectVector.from_assignment(SCHEMA, {"Content": "parrot"})
    kept = sum(
        toy_generate(prompt, seed, cfg).value_name("Content") == "parrot"
        for seed in range(4000)
    )
    assert abs(kept / 4000 - 0.6) < 0.03


@settings(max_examples=30)
@given(st.integers(), st.lists(st.sampled_from(SCHEMA.aspects), unique=True))
def test_generated_vectors_are_always_complete(seed, aspects):
    prompt = AspectVector.from_assignment(SCHEMA, {a: 1 for a in aspects})
    img = toy_generate(prompt, seed, ToyWorldConfig(neglect_prob=0.5))
    assert img.fully_specified
    assert all(0 <= slot < V for slot in img.slots)


# -- alignment ---------------------------------------------------------------

def test_alignment_counts_matching_slots():
    a = full_vector(1)
    b = AspectVector(SCHEMA, (1, 1, 1, 0, 0, 0, 0))
    assert alignment(a, a) == 1.0
    assert alignment(a, b) == pytest.approx(3 / 7)


def test_alignment_preconditions():
    with pytest.raises(SchemaMismatchError):
        alignment(full_vector(), AspectVector.empty(SCHEMA))
    fashion = AspectVector(get_schema("fashion"), (0,) * 7)
    with pytest.raises(SchemaMismatchError):
        alignment(full_vector(), fashion)


def test_expected_alignment_reference_values():
    cfg = ToyWorldConfig()
    expected = [0.19643, 0.33036, 0.46429, 0.59821]
    for p, want in enumerate(expected, start=1):
        assert expected_alignment(p, cfg) == pytest.approx(want, abs=5e-6)
    assert expected_alignment(0, cfg) == pytest.approx(1 / 16)
    assert expected_alignment(A, cfg) == 1.0
    values = [expected_alignment(p, cfg) for p in range(A + 1)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_expected_alignment_domain():
    cfg = ToyWorldConfig()
    with pytest.raises(OutOfRangeError):
        expected_alignment(-1, cfg)
    with pytest.raises(OutOfRangeError):
        expected_alignment(A + 1, cfg)
    with pytest.raises(OutOfRangeError):
        expected_alignment(2, ToyWorldConfig(neglect_prob=0.2))


def test_monte_carlo_alignment_matches_closed_form():
    cfg = ToyWorldConfig()
    target = random_target(SCHEMA, 11)
    pinned = {"Content": target.get("Content"), "Color": target.get("Color")}
    prompt = AspectVector.from_assignment(SCHEMA, pinned)
    n = 3000
    total = sum(alignment(toy_generate(prompt, s, cfg), target) for s in range(n))
    assert abs(total / n - expected_alignment(2, cfg)) < 0.01


# -- simulated user ----------------------------------------------------------

def test_simulated_user_validation():
    target = random_target(SCHEMA, 3)
    with pytest.raises(Exception):
        SimulatedUser(AspectVector.empty(SCHEMA), ("Content",))
    with pytest.raises(Exception):
        SimulatedUser(target, ())
    with pytest.raises(SchemaMismatchError):
        SimulatedUser(target, ("NoSuchAspect",))
    user = SimulatedUser(target, ("Content", "Color"))
    assert user.initial_assignment() == {
        "Content": target.get("Content"),
        "Color": target.get("Color"),
    }


def test_user_reply_reveals_target_value():
    target = random_target(SCHEMA, 3)
    user = SimulatedUser(target, ("Content",))
    q = Question(2, "Style", "What should the Style of the image be?")
    assert user_reply(user, q) == {"Style": target.get("Style")}


def test_user_reply_silence_and_rates():
    target = random_target(SCHEMA, 3)
    q = Question(2, "Style", "style?")
    mute = SimulatedUser(target, ("Content",), reply_prob=0.0)
    assert user_reply(mute, q, random.Random(0)) is None
    half = SimulatedUser(target, ("Content",), reply_prob=0.5)
    rng = random.Random(42)
    replies = [user_reply(half, q, rng) for _ in range(2000)]
    rate = sum(r is not None for r in replies) / len(replies)
    assert abs(rate - 0.5) < 0.05


def test_user_reply_rejects_unknown_aspect():
    user = SimulatedUser(random_target(SCHEMA, 3), ("Content",))
    with pytest.raises(SchemaMismatchError):
        user_reply(user, Question(1, "Flavor", "?"))


def test_random_target_deterministic_and_complete():
    t = random_target(SCHEMA, 5)
    assert t.fully_specified
    assert t == random_target(SCHEMA, 5)
    assert t != random_target(SCHEMA, 6)


# -- multi-round simulation ----------------------------------------------------

def test_simulation_tracks_expected_alignment():
    cfg = ToyWorldConfig(seed=1)
    result = run_simulation(60, 4, cfg)
    means = [row.mean_alignment for row in result.rows]
    # 60 dialogues is enough for +-0.06 around the closed form
    for mean, p in zip(means, range(1, 5)):
        assert abs(mean - expected_alignment(p, cfg)) < 0.06
    assert all(b > a for a, b in zip(means, means[1:]))
    assert result.rows[0].delta_vs_round1 == 0.0
    assert result.rows[3].delta_vs_round1 == pytest.approx(means[3] - means[0])


def test_simulation_silent_user_stays_at_round_one_level():
    cfg = ToyWorldConfig(seed=2)
    result = run_simulation(40, 3, cfg, reply_prob=0.0)
    baseline = expected_alignment(1, cfg)
    for row in result.rows:
        assert abs(row.mean_alignment - baseline) < 0.07


def test_simulation_output_forms():
    result = run_simulation(5, 2, ToyWorldConfig(seed=3))
    csv_text = result.to_csv()
    lines = csv_text.strip().split("\n")
    assert lines[0] == "round,mean_alignment,delta_vs_round1"
    assert len(lines) == 3
    doc = result.to_jsonable()
    assert doc["n_dialogues"] == 5
    assert [r["round"] for r in doc["rows"]] == [1, 2]
    assert "round" in result.to_text()


def test_simulation_rejects_empty_run():
    with pytest.raises(OutOfRangeError):
        run_simulation(0, 4, ToyWorldConfig())
